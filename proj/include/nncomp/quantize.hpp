#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/prune.hpp"
#include "nncomp/rng.hpp"
#include "nncomp/tensor.hpp"
#include "nncomp/train.hpp"

namespace nncomp {

// ---------------------------------------------------------------------------
// 1-D k-means (Lloyd's algorithm)
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<double> centroids;        // strictly ascending
  std::vector<uint32_t> assignments;    // per input value, into centroids
  size_t iterations = 0;
  bool converged = false;
};

namespace detail {

struct DistinctValues {
  std::vector<double> value;   // ascending, unique
  std::vector<size_t> count;
  std::vector<double> prefix_wsum;   // prefix of value*count
  std::vector<size_t> prefix_count;
};

inline DistinctValues collect_distinct(const std::vector<double>& xs) {
  std::vector<double> sorted(xs);
  std::sort(sorted.begin(), sorted.end());
  DistinctValues d;
  for (double v : sorted) {
    if (d.value.empty() || v != d.value.back()) {
      d.value.push_back(v);
      d.count.push_back(1);
    } else {
      ++d.count.back();
    }
  }
  d.prefix_wsum.resize(d.value.size() + 1, 0.0);
  d.prefix_count.resize(d.value.size() + 1, 0);
  for (size_t i = 0; i < d.value.size(); ++i) {
    d.prefix_wsum[i + 1] = d.prefix_wsum[i] + d.value[i] * static_cast<double>(d.count[i]);
    d.prefix_count[i + 1] = d.prefix_count[i] + d.count[i];
  }
  return d;
}

// Cluster boundaries for sorted centroids: distinct value i belongs to the
// centroid whose Voronoi cell contains it (midpoint rule, ties to the left).
inline void assign_boundaries(const std::vector<double>& values,
                              const std::vector<double>& centroids,
                              std::vector<size_t>& first_index) {
  const size_t k = centroids.size();
  first_index.assign(k + 1, values.size());
  first_index[0] = 0;
  size_t pos = 0;
  for (size_t c = 0; c + 1 < k; ++c) {
    const double boundary = 0.5 * (centroids[c] + centroids[c + 1]);
    while (pos < values.size() && values[pos] <= boundary) ++pos;
    first_index[c + 1] = pos;
  }
  first_index[k] = values.size();
}

}  // namespace detail

// Lloyd's algorithm on scalars with farthest-point seeding (first seed drawn
// from the seeded stream, later seeds maximize distance to the chosen set).
// Converges when assignments stop changing or after max_iters sweeps. With
// fewer distinct values than k, the distinct values become the codebook.
inline KMeansResult kmeans_1d(const std::vector<double>& xs, size_t k, SeededRng& rng,
                              size_t max_iters = 300) {
  if (k == 0) throw ConfigError("kmeans_1d: k must be >= 1");
  if (xs.empty()) throw ConfigError("kmeans_1d: empty input");

  detail::DistinctValues d = detail::collect_distinct(xs);
  const size_t m = d.value.size();
  KMeansResult res;

  if (m <= k) {
    res.centroids = d.value;
    res.converged = true;
  } else {
    // farthest-point seeding over distinct values
    std::vector<double> seeds;
    seeds.reserve(k);
    std::vector<double> dist(m);
    const size_t first = rng.uniform_index(m);
    seeds.push_back(d.value[first]);
    for (size_t i = 0; i < m; ++i) dist[i] = std::fabs(d.value[i] - seeds[0]);
    while (seeds.size() < k) {
      size_t best = 0;
      for (size_t i = 1; i < m; ++i)
        if (dist[i] > dist[best]) best = i;
      seeds.push_back(d.value[best]);
      for (size_t i = 0; i < m; ++i)
        dist[i] = std::min(dist[i], std::fabs(d.value[i] - seeds.back()));
    }
    std::sort(seeds.begin(), seeds.end());

    std::vector<size_t> bounds, prev_bounds;
    for (size_t it = 0; it < max_iters; ++it) {
      detail::assign_boundaries(d.value, seeds, bounds);
      res.iterations = it + 1;
      if (bounds == prev_bounds) {
        res.converged = true;
        break;
      }
      prev_bounds = bounds;
      for (size_t c = 0; c < seeds.size(); ++c) {
        const size_t lo = bounds[c], hi = bounds[c + 1];
        const size_t cnt = d.prefix_count[hi] - d.prefix_count[lo];
        if (cnt == 0) continue;   // empty cell keeps its centroid
        seeds[c] = (d.prefix_wsum[hi] - d.prefix_wsum[lo]) / static_cast<double>(cnt);
      }
      std::sort(seeds.begin(), seeds.end());
    }

    // merge exact duplicates so the codebook is strictly ascending
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    res.centroids = std::move(seeds);
  }

  std::vector<size_t> bounds;
  detail::assign_boundaries(d.value, res.centroids, bounds);
  std::vector<uint32_t> distinct_assign(m);
  for (size_t c = 0; c < res.centroids.size(); ++c)
    for (size_t i = bounds[c]; i < bounds[c + 1]; ++i)
      distinct_assign[i] = static_cast<uint32_t>(c);

  res.assignments.resize(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    const size_t di =
        std::lower_bound(d.value.begin(), d.value.end(), xs[i]) - d.value.begin();
    res.assignments[i] = distinct_assign[di];
  }
  return res;
}

// Within-cluster squared error of a clustering.
inline double kmeans_sse(const std::vector<double>& xs, const KMeansResult& km) {
  double sse = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - km.centroids[km.assignments[i]];
    sse += d * d;
  }
  return sse;
}

// ---------------------------------------------------------------------------
// Model quantization with learned per-tensor codebooks
// ---------------------------------------------------------------------------

struct QuantTensorLog {
  std::string name;
  size_t elements = 0;
  uint8_t requested_bits = 0;
  uint8_t bits = 0;             // after any per-tensor reduction
  size_t codebook_entries = 0;
  bool reduced = false;
  bool degenerate = false;      // all values equal
  double sse = 0.0;             // squared quantization error at assignment time
};

struct QuantizeResult {
  uint8_t bits = 0;
  std::vector<QuantTensorLog> tensors;
};

namespace detail {

inline uint8_t bits_for_entries(size_t entries) {
  uint8_t b = 0;
  while ((size_t(1) << b) < entries) ++b;
  return b;
}

// Codebook entries pass through f32 so a saved model reloads bit-exactly.
inline double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

// Per-tensor k-means quantization of every parameter tensor the filter
// selects. Masked coordinates are excluded from clustering and index a
// codebook entry pinned at exactly 0; surviving weights never use that entry.
// Tensors with fewer than 2^B values get a reduced bit width (logged).
inline QuantizeResult quantize_kmeans(ModelGraph& model, uint8_t bits, SeededRng& rng,
                                      const LayerFilter& filter = all_layers()) {
  if (bits < 2 || bits > 16) throw ConfigError("quantize bits must be in [2,16]");

  QuantizeResult result;
  result.bits = bits;

  auto params = model.params();
  size_t flat = 0;
  for (size_t li = 0; li < model.layer_count(); ++li) {
    Layer& layer = model.layer(li);
    std::vector<ParamRef> local;
    layer.collect_params(local);
    const bool selected = filter(layer, li);
    for (size_t pi = 0; pi < local.size(); ++pi, ++flat) {
      if (!selected) continue;
      const ParamRef& p = params[flat];
      Tensor& w = *p.tensor;
      const size_t n = w.numel();
      const bool has_mask = model.has_mask(flat);
      const Tensor* mask = has_mask ? &model.mask(flat) : nullptr;

      std::vector<double> sample;
      sample.reserve(n);
      std::vector<size_t> sample_pos;
      sample_pos.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        if (mask && (*mask)[i] == 0.0) continue;
        sample.push_back(w[i]);
        sample_pos.push_back(i);
      }
      if (sample.empty())
        throw StateError("quantize_kmeans: tensor '" + p.name + "' has no surviving weights");

      QuantTensorLog log;
      log.name = p.name;
      log.elements = n;
      log.requested_bits = bits;

      uint8_t b = bits;
      while (b > 0 && (size_t(1) << b) > sample.size()) --b;
      log.reduced = b != bits;

      // a masked tensor reserves one of its 2^B slots for the pinned zero
      size_t k = size_t(1) << b;
      if (has_mask) k = std::max<size_t>(1, k - 1);

      SeededRng sub = rng.fork(flat + 1);
      KMeansResult km = kmeans_1d(sample, k, sub);
      log.degenerate = km.centroids.size() == 1;

      std::vector<double> codebook(km.centroids.size());
      for (size_t c = 0; c < codebook.size(); ++c)
        codebook[c] = detail::as_f32(km.centroids[c]);
      // f32 rounding may collide neighbors; merge and remap
      std::vector<uint32_t> remap(codebook.size());
      {
        std::vector<double> merged;
        for (size_t c = 0; c < codebook.size(); ++c) {
          if (merged.empty() || codebook[c] != merged.back()) merged.push_back(codebook[c]);
          remap[c] = static_cast<uint32_t>(merged.size() - 1);
        }
        codebook = std::move(merged);
      }

      QuantInfo q;
      q.indices.assign(n, 0);

      if (has_mask) {
        // pin an exact-zero entry for the masked coordinates
        for (double& v : codebook)
          if (v == 0.0) v = detail::as_f32(std::nextafter(0.0f, 1.0f));
        const auto zit = std::lower_bound(codebook.begin(), codebook.end(), 0.0);
        const uint32_t zidx = static_cast<uint32_t>(zit - codebook.begin());
        codebook.insert(zit, 0.0);
        q.zero_index = static_cast<int32_t>(zidx);
        for (size_t i = 0; i < n; ++i) q.indices[i] = zidx;
        for (size_t s = 0; s < sample.size(); ++s) {
          uint32_t idx = remap[km.assignments[s]];
          if (idx >= zidx) ++idx;
          q.indices[sample_pos[s]] = idx;
        }
      } else {
        for (size_t s = 0; s < sample.size(); ++s)
          q.indices[sample_pos[s]] = remap[km.assignments[s]];
      }

      q.bits = detail::bits_for_entries(codebook.size());
      q.codebook = std::move(codebook);

      log.bits = q.bits;
      log.codebook_entries = q.codebook.size();
      for (size_t s = 0; s < sample.size(); ++s) {
        const double d = sample[s] - q.codebook[q.indices[sample_pos[s]]];
        log.sse += d * d;
      }
      result.tensors.push_back(std::move(log));
      model.set_quant(flat, std::move(q));
    }
  }
  model.apply_quant();
  return result;
}

// Mean squared quantization error over the surviving weights of every
// quantized tensor, measured against the attached codebooks.
inline double quantization_mse(const ModelGraph& model) {
  double sse = 0.0;
  size_t n = 0;
  auto params = model.params();
  for (size_t i = 0; i < params.size(); ++i) {
    if (!model.has_quant(i)) continue;
    const QuantInfo& q = model.quant(i);
    const Tensor& w = *params[i].tensor;
    for (size_t j = 0; j < w.numel(); ++j) {
      if (static_cast<int32_t>(q.indices[j]) == q.zero_index) continue;
      const double d = w[j] - q.codebook[q.indices[j]];
      sse += d * d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sse / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Shared-codebook retraining
// ---------------------------------------------------------------------------

// Retrains quantized tensors with frozen assignments: every weight sharing a
// codebook entry receives the mean gradient of the group, so the group moves
// as one scalar under Adam and the codebook follows. The pinned zero entry
// only contains masked coordinates, whose gradients are already zeroed.
inline TrainStats retrain_quantized(ModelGraph& model, const Dataset& train,
                                    const Dataset& val, const TrainSchedule& sched,
                                    SeededRng& rng) {
  if (!model.any_quant()) throw StateError("retrain_quantized: model has no codebooks");

  // group members by codebook entry once
  auto params = model.params();
  std::vector<std::vector<std::vector<size_t>>> groups(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    if (!model.has_quant(i)) continue;
    const QuantInfo& q = model.quant(i);
    groups[i].resize(q.codebook.size());
    for (size_t j = 0; j < q.indices.size(); ++j) groups[i][q.indices[j]].push_back(j);
  }

  GradHook mean_by_group = [&groups](ModelGraph& m, std::vector<Tensor>& grads) {
    (void)m;
    for (size_t i = 0; i < grads.size(); ++i) {
      if (groups[i].empty()) continue;
      Tensor& g = grads[i];
      for (const auto& members : groups[i]) {
        if (members.empty()) continue;
        double sum = 0.0;
        for (size_t j : members) sum += g[j];
        const double mean = sum / static_cast<double>(members.size());
        for (size_t j : members) g[j] = mean;
      }
    }
  };

  const LossKind kind = sched.loss;
  TrainStats stats = train_core(model, train, val, sched, rng,
                                [kind](const Tensor& pred, const Tensor&, const Tensor& tg) {
                                  return compute_loss(kind, pred, tg);
                                },
                                mean_by_group);

  // rebuild codebooks from the trained weights (group members stayed equal)
  for (size_t i = 0; i < params.size(); ++i) {
    if (!model.has_quant(i)) continue;
    QuantInfo& q = model.quant_mutable(i);
    const Tensor& w = *params[i].tensor;
    for (size_t c = 0; c < q.codebook.size(); ++c) {
      if (static_cast<int32_t>(c) == q.zero_index) continue;
      if (!groups[i][c].empty()) q.codebook[c] = detail::as_f32(w[groups[i][c].front()]);
    }
    // entries may have crossed during training; restore sorted order
    std::vector<uint32_t> order(q.codebook.size());
    for (uint32_t c = 0; c < order.size(); ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(),
                     [&q](uint32_t a, uint32_t bq) { return q.codebook[a] < q.codebook[bq]; });
    std::vector<uint32_t> inverse(order.size());
    for (uint32_t pos = 0; pos < order.size(); ++pos) inverse[order[pos]] = pos;
    std::vector<double> sorted(q.codebook.size());
    for (uint32_t pos = 0; pos < order.size(); ++pos) sorted[pos] = q.codebook[order[pos]];
    q.codebook = std::move(sorted);
    for (auto& idx : q.indices) idx = inverse[idx];
    if (q.zero_index >= 0) q.zero_index = static_cast<int32_t>(inverse[q.zero_index]);
  }
  model.apply_quant();
  return stats;
}

// ---------------------------------------------------------------------------
// Fixed-codebook quantization
// ---------------------------------------------------------------------------

enum class FixedQuantMode { sign, round };

inline FixedQuantMode parse_fixed_quant_mode(const std::string& s) {
  if (s == "sign") return FixedQuantMode::sign;
  if (s == "round") return FixedQuantMode::round;
  throw ConfigError("unknown fixed quantization mode '" + s + "'");
}

namespace detail {

// nearest integer, ties to even
inline double round_half_even(double u) {
  const double lo = std::floor(u);
  const double frac = u - lo;
  if (frac > 0.5) return lo + 1.0;
  if (frac < 0.5) return lo;
  return std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1.0;
}

}  // namespace detail

// Quantizes one tensor against a fixed codebook. sign maps to {-1,+1} with
// sign(0)=+1; round maps to the nearest multiple of step (ties to even), or
// floor + Bernoulli(frac) per element when stochastic (unbiased rounding).
inline QuantInfo quantize_fixed(const Tensor& x, FixedQuantMode mode, double step = 1.0,
                                bool stochastic = false, SeededRng* rng = nullptr) {
  QuantInfo q;
  const size_t n = x.numel();
  q.indices.resize(n);

  if (mode == FixedQuantMode::sign) {
    q.bits = 1;
    q.codebook = {-1.0, 1.0};
    for (size_t i = 0; i < n; ++i) q.indices[i] = x[i] < 0.0 ? 0 : 1;
    return q;
  }

  if (!(step > 0.0)) throw ConfigError("quantize_fixed: step must be > 0");
  if (stochastic && rng == nullptr)
    throw ConfigError("quantize_fixed: stochastic rounding needs an RNG");

  std::vector<long long> level(n);
  for (size_t i = 0; i < n; ++i) {
    const double u = x[i] / step;
    double r;
    if (stochastic) {
      const double lo = std::floor(u);
      r = lo + (rng->bernoulli(u - lo) ? 1.0 : 0.0);
    } else {
      r = detail::round_half_even(u);
    }
    level[i] = static_cast<long long>(r);
  }

  std::vector<long long> distinct(level);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  q.codebook.resize(distinct.size());
  for (size_t c = 0; c < distinct.size(); ++c)
    q.codebook[c] = detail::as_f32(static_cast<double>(distinct[c]) * step);
  q.bits = std::max<uint8_t>(detail::bits_for_entries(distinct.size()), 1);
  for (size_t i = 0; i < n; ++i)
    q.indices[i] = static_cast<uint32_t>(
        std::lower_bound(distinct.begin(), distinct.end(), level[i]) - distinct.begin());
  return q;
}

// Dequantized copy of a tensor described by a QuantInfo.
inline Tensor dequantize(const QuantInfo& q, const std::vector<size_t>& shape) {
  Tensor out(shape);
  if (out.numel() != q.indices.size())
    throw ShapeError("dequantize: shape does not match index count");
  for (size_t i = 0; i < out.numel(); ++i) out[i] = q.codebook[q.indices[i]];
  return out;
}

}  // namespace nncomp
