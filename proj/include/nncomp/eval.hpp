#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "graph.hpp"
#include "tensor.hpp"
#include "train.hpp"

namespace nncomp {

constexpr double kWilsonZ = 1.959963984540054;  // two-sided 95%
constexpr double kNmseFloorDb = -100.0;

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

inline WilsonInterval wilson_interval(size_t errors, size_t total, double z = kWilsonZ) {
  if (total == 0) throw DataError("wilson_interval: zero trials");
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(errors) / n;
  const double denom = 1.0 + z * z / n;
  const double center = (p + z * z / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n));
  return {center - half, center + half};
}

struct BerResult {
  double snr_db = 0.0;
  size_t bit_errors = 0;
  size_t total_bits = 0;
  double ber = 0.0;
  WilsonInterval interval;
};

// Output-vs-bit-target mismatch rate under the 0.5 decision threshold.
inline BerResult ber_from_outputs(const Tensor& outputs, const Tensor& bit_targets,
                                  double snr_db = 0.0) {
  if (!outputs.same_shape(bit_targets))
    throw ShapeError("ber: outputs " + outputs.shape_string() + " vs targets " +
                     bit_targets.shape_string());
  if (outputs.numel() == 0) throw DataError("ber: empty sample group");
  BerResult r;
  r.snr_db = snr_db;
  r.total_bits = outputs.numel();
  for (size_t i = 0; i < outputs.numel(); ++i) {
    const double decided = outputs[i] > 0.5 ? 1.0 : 0.0;
    r.bit_errors += decided != bit_targets[i];
  }
  r.ber = static_cast<double>(r.bit_errors) / static_cast<double>(r.total_bits);
  r.interval = wilson_interval(r.bit_errors, r.total_bits);
  return r;
}

// Grouped evaluation sample set: one dataset per sweep coordinate.
struct SnrGroup {
  double snr_db = 0.0;
  Dataset data;
};

namespace detail {

inline Tensor slice_rows(const Tensor& src, size_t first, size_t count) {
  std::vector<size_t> shape = src.shape();
  shape[0] = count;
  Tensor out(shape);
  const size_t row = src.numel() / src.dim(0);
  std::copy_n(src.data() + first * row, count * row, out.data());
  return out;
}

inline Tensor forward_batched(const ModelGraph& model, const Tensor& inputs,
                              size_t batch = 1000) {
  const size_t n = inputs.dim(0);
  Tensor out;
  for (size_t b0 = 0; b0 < n; b0 += batch) {
    const size_t c = std::min(batch, n - b0);
    const Tensor y = model.forward(slice_rows(inputs, b0, c));
    if (b0 == 0) {
      std::vector<size_t> shape = y.shape();
      shape[0] = n;
      out = Tensor(shape);
    }
    std::copy(y.data(), y.data() + y.numel(), out.data() + b0 * (y.numel() / c));
  }
  return out;
}

}  // namespace detail

inline BerResult eval_ber_group(const ModelGraph& model, const SnrGroup& group) {
  if (group.data.size() == 0)
    throw DataError("eval_ber: empty sample group at " + std::to_string(group.snr_db) + " dB");
  group.data.check();
  const Tensor out = detail::forward_batched(model, group.data.inputs);
  return ber_from_outputs(out, group.data.targets, group.snr_db);
}

inline std::vector<BerResult> eval_ber(const ModelGraph& model,
                                       const std::vector<SnrGroup>& groups) {
  if (groups.empty()) throw DataError("eval_ber: no sample groups");
  std::vector<BerResult> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(eval_ber_group(model, g));
  return out;
}

struct NmseResult {
  double nmse_db = 0.0;
  double mean_ratio = 0.0;
  bool capped = false;
  size_t samples_used = 0;
  size_t zero_norm_excluded = 0;
};

// NMSE over de-normalized matrices: predictions and targets are mapped back
// through min-max before the per-sample error ratio is averaged.
inline NmseResult nmse_from_outputs(const Tensor& outputs, const Tensor& targets,
                                    double norm_min, double norm_max) {
  if (!outputs.same_shape(targets))
    throw ShapeError("nmse: outputs " + outputs.shape_string() + " vs targets " +
                     targets.shape_string());
  if (outputs.numel() == 0) throw DataError("nmse: empty sample set");
  const size_t n = outputs.dim(0);
  const size_t per = outputs.numel() / n;
  const double span = norm_max - norm_min;
  NmseResult r;
  double acc = 0.0;
  for (size_t s = 0; s < n; ++s) {
    const double* po = outputs.data() + s * per;
    const double* pt = targets.data() + s * per;
    double err = 0.0, ref = 0.0;
    for (size_t j = 0; j < per; ++j) {
      const double h = pt[j] * span + norm_min;
      const double hhat = po[j] * span + norm_min;
      err += (h - hhat) * (h - hhat);
      ref += h * h;
    }
    if (ref == 0.0) {
      ++r.zero_norm_excluded;
      continue;
    }
    acc += err / ref;
    ++r.samples_used;
  }
  if (r.samples_used == 0) throw DataError("nmse: every sample had zero reference norm");
  r.mean_ratio = acc / static_cast<double>(r.samples_used);
  r.nmse_db = 10.0 * std::log10(r.mean_ratio);
  if (!(r.nmse_db > kNmseFloorDb)) {
    r.nmse_db = kNmseFloorDb;
    r.capped = true;
  }
  return r;
}

inline NmseResult eval_nmse(const ModelGraph& model, const Dataset& samples, double norm_min,
                            double norm_max) {
  if (samples.size() == 0) throw DataError("eval_nmse: empty sample set");
  samples.check();
  const Tensor out = detail::forward_batched(model, samples.inputs);
  return nmse_from_outputs(out, samples.targets, norm_min, norm_max);
}

}  // namespace nncomp
