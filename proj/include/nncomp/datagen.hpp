#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nncomp/binio.hpp"
#include "nncomp/error.hpp"
#include "nncomp/rng.hpp"
#include "nncomp/tensor.hpp"
#include "nncomp/train.hpp"

namespace nncomp {

// ---------------------------------------------------------------------------
// MIMO detection data
// ---------------------------------------------------------------------------

// Fixed channel: i.i.d. standard normal entries scaled by 1/sqrt(N), rounded
// through f32 so the matrix persists bit-exactly in manifests and files.
inline Tensor make_detection_channel(size_t n, size_t k, SeededRng& rng) {
  Tensor h({n, k});
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : h.values()) v = to_f32(rng.normal() * scale);
  return h;
}

// Text form carried in model metadata: dims then entries at 9 significant
// digits, enough to reproduce the f32-rounded coefficients exactly.
inline std::string detection_channel_text(const Tensor& channel) {
  if (channel.ndim() != 2) throw ShapeError("channel text: expected a 2-D matrix");
  char buf[40];
  std::string out = std::to_string(channel.dim(0)) + " " + std::to_string(channel.dim(1));
  for (size_t i = 0; i < channel.numel(); ++i) {
    std::snprintf(buf, sizeof(buf), " %.9g", channel[i]);
    out += buf;
  }
  return out;
}

inline Tensor detection_channel_from_text(const std::string& text) {
  std::istringstream in(text);
  size_t n = 0, k = 0;
  if (!(in >> n >> k) || n == 0 || k == 0)
    throw DataError("channel text: missing or invalid dimensions");
  Tensor h({n, k});
  for (size_t i = 0; i < h.numel(); ++i) {
    double v;
    if (!(in >> v)) throw DataError("channel text: expected " + std::to_string(h.numel()) +
                                    " entries, ran out at " + std::to_string(i));
    h[i] = to_f32(v);
  }
  double extra;
  if (in >> extra) throw DataError("channel text: trailing entries beyond declared size");
  return h;
}

// Per-component noise variance for an SNR defined as total received signal
// power over total noise power: sigma^2 = E||Hs||^2 / (N * 10^(snr/10)),
// with E||Hs||^2 = ||H||_F^2 for BPSK symbols.
inline double detection_noise_variance(const Tensor& channel, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  double fro2 = 0.0;
  for (size_t i = 0; i < channel.numel(); ++i) fro2 += channel[i] * channel[i];
  const double n = static_cast<double>(channel.dim(0));
  return fro2 / (n * std::pow(10.0, snr_db / 10.0));
}

// Draws `count` samples y = H s + n at one SNR. Inputs are the received
// vectors, targets the transmitted bits (s+1)/2; both rounded through f32 so
// saved datasets reload bit-identically.
inline Dataset gen_detection_dataset(const Tensor& channel, size_t count, double snr_db,
                                     SeededRng& rng) {
  if (count == 0) throw DataError("gen_detection_dataset: count must be positive");
  const size_t n = channel.dim(0), k = channel.dim(1);
  const double sigma = std::sqrt(detection_noise_variance(channel, snr_db));

  Dataset d;
  d.inputs = Tensor({count, n});
  d.targets = Tensor({count, k});
  std::vector<double> s(k);
  for (size_t i = 0; i < count; ++i) {
    for (size_t j = 0; j < k; ++j) {
      s[j] = rng.bernoulli(0.5) ? 1.0 : -1.0;
      d.targets[i * k + j] = s[j] > 0 ? 1.0 : 0.0;
    }
    for (size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (size_t j = 0; j < k; ++j) acc += channel[r * k + j] * s[j];
      if (sigma > 0.0) acc += sigma * rng.normal();
      d.inputs[i * n + r] = to_f32(acc);
    }
  }
  return d;
}

// Mixed-SNR variant for training: sample i uses snrs[i % snrs.size()].
inline Dataset gen_detection_mixed(const Tensor& channel, size_t count,
                                   const std::vector<double>& snrs, SeededRng& rng) {
  if (count == 0) throw DataError("gen_detection_mixed: count must be positive");
  if (snrs.empty()) throw ConfigError("gen_detection_mixed: no SNR points");
  const size_t n = channel.dim(0), k = channel.dim(1);
  std::vector<double> sigma(snrs.size());
  for (size_t q = 0; q < snrs.size(); ++q)
    sigma[q] = std::sqrt(detection_noise_variance(channel, snrs[q]));

  Dataset d;
  d.inputs = Tensor({count, n});
  d.targets = Tensor({count, k});
  std::vector<double> s(k);
  for (size_t i = 0; i < count; ++i) {
    const double sg = sigma[i % sigma.size()];
    for (size_t j = 0; j < k; ++j) {
      s[j] = rng.bernoulli(0.5) ? 1.0 : -1.0;
      d.targets[i * k + j] = s[j] > 0 ? 1.0 : 0.0;
    }
    for (size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (size_t j = 0; j < k; ++j) acc += channel[r * k + j] * s[j];
      if (sg > 0.0) acc += sg * rng.normal();
      d.inputs[i * n + r] = to_f32(acc);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic CSI data (angular-delay sparse matrices)
// ---------------------------------------------------------------------------

enum class CsiScenario { indoor_like, outdoor_like };

inline const char* csi_scenario_name(CsiScenario s) {
  return s == CsiScenario::indoor_like ? "indoor_like" : "outdoor_like";
}

inline CsiScenario parse_csi_scenario(const std::string& s) {
  if (s == "indoor_like" || s == "indoor") return CsiScenario::indoor_like;
  if (s == "outdoor_like" || s == "outdoor") return CsiScenario::outdoor_like;
  throw ConfigError("unknown CSI scenario '" + s + "'");
}

struct CsiPath {
  std::complex<double> gain;
  double tau = 0.0;     // delay in cycles per subcarrier step, [0,1)
  double omega = 0.0;   // spatial frequency, [-0.5,0.5)
};

namespace detail {

constexpr size_t kCsiSubcarriers = 256;
constexpr size_t kCsiAntennas = 32;
constexpr size_t kCsiKeep = 32;   // delay rows kept after truncation

// D_N(x) = sum_{n<N} e^{j 2 pi n x}; exactly N at integer x.
inline std::complex<double> dirichlet(size_t n, double x) {
  const double r = x - std::round(x);
  if (std::fabs(r) < 1e-9) return {static_cast<double>(n), 0.0};
  const double num = std::sin(M_PI * static_cast<double>(n) * x);
  const double den = std::sin(M_PI * x);
  const double phase = M_PI * static_cast<double>(n - 1) * x;
  const double mag = num / den;
  return {mag * std::cos(phase), mag * std::sin(phase)};
}

}  // namespace detail

// Truncated angular-delay matrix of a multipath channel, returned as a
// (2, 32, 32) tensor of raw (unnormalized) real and imaginary parts. The
// closed form is the 2-D DFT of H[f,a] = sum_l g_l e^{j2pi(f tau_l + a w_l)}
// over 256 subcarriers and 32 antennas, keeping the first 32 delay rows.
inline Tensor csi_sample_from_paths(const std::vector<CsiPath>& paths) {
  using detail::kCsiAntennas;
  using detail::kCsiKeep;
  using detail::kCsiSubcarriers;

  Tensor out({2, kCsiKeep, kCsiAntennas});
  const double scale =
      1.0 / std::sqrt(static_cast<double>(kCsiSubcarriers * kCsiAntennas));

  std::vector<std::complex<double>> dcol(kCsiKeep), drow(kCsiAntennas);
  for (const CsiPath& p : paths) {
    for (size_t d = 0; d < kCsiKeep; ++d)
      dcol[d] = detail::dirichlet(kCsiSubcarriers,
                                  p.tau - static_cast<double>(d) / kCsiSubcarriers);
    for (size_t b = 0; b < kCsiAntennas; ++b)
      drow[b] = detail::dirichlet(kCsiAntennas,
                                  p.omega - static_cast<double>(b) / kCsiAntennas);
    for (size_t d = 0; d < kCsiKeep; ++d) {
      const std::complex<double> gd = p.gain * dcol[d];
      for (size_t b = 0; b < kCsiAntennas; ++b) {
        const std::complex<double> v = gd * drow[b];
        out[d * kCsiAntennas + b] += scale * v.real();
        out[kCsiKeep * kCsiAntennas + d * kCsiAntennas + b] += scale * v.imag();
      }
    }
  }
  return out;
}

struct CsiDataset {
  Dataset data;          // inputs == targets (autoencoder), normalized to [0,1]
  double norm_min = 0.0;
  double norm_max = 1.0;
  CsiScenario scenario = CsiScenario::indoor_like;
};

namespace detail {

// Fixed scatterer clusters per scenario: delay centers as fractions of the
// scenario delay spread, spatial-frequency centers, and per-path jitter.
// Sharing the cluster geometry across samples gives each scenario a stable
// global subspace, the way a fixed cell layout does for measured channels.
struct CsiClusterPlan {
  std::vector<double> tau_frac;
  std::vector<double> omega_center;
  double tau_jitter;    // half-width of the uniform delay jitter, as a fraction
  double omega_jitter;  // stddev of the Gaussian spatial-frequency jitter
};

inline const CsiClusterPlan& csi_cluster_plan(CsiScenario s) {
  static const CsiClusterPlan indoor{
      {0.15, 0.40, 0.60, 0.85}, {-0.32, -0.08, 0.12, 0.38}, 1.0 / 16.0, 0.02};
  static const CsiClusterPlan outdoor{{0.05, 0.18, 0.30, 0.42, 0.55, 0.68, 0.80, 0.92},
                                      {-0.42, -0.28, -0.15, -0.02, 0.10, 0.22, 0.33, 0.44},
                                      1.0 / 12.0,
                                      0.045};
  return s == CsiScenario::indoor_like ? indoor : outdoor;
}

inline CsiDataset gen_csi_raw(CsiScenario scenario, size_t count, SeededRng& rng) {
  if (count == 0) throw DataError("gen_csi_dataset: count must be positive");
  const size_t lmin = scenario == CsiScenario::indoor_like ? 2 : 6;
  const size_t lmax = scenario == CsiScenario::indoor_like ? 6 : 14;
  const double tau_max = scenario == CsiScenario::indoor_like
                             ? 8.0 / detail::kCsiSubcarriers
                             : 32.0 / detail::kCsiSubcarriers;
  const CsiClusterPlan& plan = csi_cluster_plan(scenario);
  const double tau_jit = plan.tau_jitter * tau_max;

  const size_t per = 2 * detail::kCsiKeep * detail::kCsiAntennas;
  CsiDataset out;
  out.scenario = scenario;
  out.data.inputs = Tensor({count, 2, detail::kCsiKeep, detail::kCsiAntennas});

  for (size_t i = 0; i < count; ++i) {
    const size_t l = lmin + rng.uniform_index(lmax - lmin + 1);
    std::vector<CsiPath> paths(l);
    const double gscale = 1.0 / std::sqrt(2.0 * static_cast<double>(l));
    for (CsiPath& p : paths) {
      const size_t c = rng.uniform_index(plan.tau_frac.size());
      p.gain = {rng.normal() * gscale, rng.normal() * gscale};
      const double tau = plan.tau_frac[c] * tau_max + rng.uniform(-tau_jit, tau_jit);
      p.tau = std::min(std::max(tau, 0.0), tau_max * (1.0 - 1e-9));
      double w = plan.omega_center[c] + rng.normal() * plan.omega_jitter;
      w -= std::round(w);
      p.omega = w;
    }
    Tensor sample = csi_sample_from_paths(paths);
    for (size_t j = 0; j < per; ++j) out.data.inputs[i * per + j] = sample[j];
  }
  return out;
}

inline void normalize_csi(CsiDataset& out, double lo, double hi) {
  out.norm_min = to_f32(lo);
  out.norm_max = to_f32(hi);
  const double span = out.norm_max - out.norm_min;
  if (!(span > 0.0)) throw NumericError("gen_csi_dataset: degenerate value range");
  for (size_t j = 0; j < out.data.inputs.numel(); ++j)
    out.data.inputs[j] =
        to_f32(std::min(1.0, std::max(0.0, (out.data.inputs[j] - out.norm_min) / span)));
  out.data.targets = out.data.inputs;
}

}  // namespace detail

// Draws multipath samples from the scenario's fixed scatterer clusters
// (indoor_like: 2-6 paths over 4 tight clusters in the first 8 delay bins;
// outdoor_like: 6-14 paths over 8 wider clusters across all 32 kept bins),
// then min-max normalizes the whole dataset to [0,1]. Gains are CN(0,1)
// scaled by 1/sqrt(L) so sample energy is independent of the path count.
inline CsiDataset gen_csi_dataset(CsiScenario scenario, size_t count, SeededRng& rng) {
  CsiDataset out = detail::gen_csi_raw(scenario, count, rng);
  double lo = out.data.inputs[0], hi = out.data.inputs[0];
  for (size_t j = 0; j < out.data.inputs.numel(); ++j) {
    lo = std::min(lo, out.data.inputs[j]);
    hi = std::max(hi, out.data.inputs[j]);
  }
  detail::normalize_csi(out, lo, hi);
  return out;
}

// Same draws, normalized with a caller-provided range instead of the
// dataset's own extrema; values outside the range clamp to [0,1]. Keeps
// validation and test sets on the scale the training set established.
inline CsiDataset gen_csi_dataset(CsiScenario scenario, size_t count, SeededRng& rng,
                                  double norm_min, double norm_max) {
  CsiDataset out = detail::gen_csi_raw(scenario, count, rng);
  detail::normalize_csi(out, norm_min, norm_max);
  return out;
}

// De-normalized copy: x * (max - min) + min.
inline Tensor denormalize(const Tensor& x, double norm_min, double norm_max) {
  Tensor out = x;
  const double span = norm_max - norm_min;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * span + norm_min;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

inline constexpr uint16_t kDatasetVersion = 1;

struct LoadedDataset {
  Tensor tensor;
  bool normalized = false;
  double norm_min = 0.0;
  double norm_max = 1.0;
};

// File layout: "NNCD", version u16, rank u8, dims u32 each, flags u8
// (bit0 = normalized; when set, f32 min and max precede the payload),
// payload of f32 little-endian values, trailing CRC32 of all prior bytes.
inline void save_dataset(const std::string& path, const Tensor& t, bool normalized = false,
                         double norm_min = 0.0, double norm_max = 1.0) {
  ByteWriter w;
  w.text("NNCD");
  w.u16(kDatasetVersion);
  if (t.ndim() > 255) throw ShapeError("save_dataset: rank too large");
  w.u8(static_cast<uint8_t>(t.ndim()));
  for (size_t i = 0; i < t.ndim(); ++i) {
    if (t.dim(i) > std::numeric_limits<uint32_t>::max())
      throw ShapeError("save_dataset: dimension too large");
    w.u32(static_cast<uint32_t>(t.dim(i)));
  }
  w.u8(normalized ? 0x01 : 0x00);
  if (normalized) {
    w.f32(static_cast<float>(norm_min));
    w.f32(static_cast<float>(norm_max));
  }
  for (size_t i = 0; i < t.numel(); ++i) w.f32(static_cast<float>(t[i]));
  ByteWriter out;
  out.text(w.str());
  out.u32(crc32_of(w.str()));
  write_file_atomic(path, out.str());
}

inline LoadedDataset load_dataset(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  if (r.bytes(4) != "NNCD") throw DataError(path + ": bad magic at offset 0");
  const uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw DataError(path + ": unsupported format version " + std::to_string(version) +
                    " at offset 4");
  const uint8_t rank = r.u8();
  if (rank == 0 || rank > 8)
    throw DataError(path + ": implausible tensor rank " + std::to_string(rank) +
                    " at offset 6");
  std::vector<size_t> dims(rank);
  size_t numel = 1;
  for (size_t i = 0; i < rank; ++i) {
    dims[i] = r.u32();
    if (dims[i] == 0) throw DataError(path + ": zero dimension in header");
    numel *= dims[i];
  }
  LoadedDataset out;
  const uint8_t flags = r.u8();
  out.normalized = (flags & 0x01) != 0;
  if (out.normalized) {
    out.norm_min = r.f32();
    out.norm_max = r.f32();
  }
  out.tensor = Tensor(dims);
  for (size_t i = 0; i < numel; ++i) out.tensor[i] = r.f32();
  const size_t body_end = r.offset();
  const uint32_t stored = r.u32();
  r.expect_end();
  const uint32_t computed = crc32_of(data, 0, body_end);
  if (stored != computed)
    throw DataError(path + ": CRC mismatch (stored " + std::to_string(stored) +
                    ", computed " + std::to_string(computed) + ")");
  return out;
}

// Loads a dataset file and validates the per-sample shape.
inline LoadedDataset load_external_dataset(const std::string& path,
                                           const std::vector<size_t>& sample_shape) {
  LoadedDataset d = load_dataset(path);
  if (d.tensor.ndim() != sample_shape.size() + 1)
    throw DataError(path + ": expected rank " + std::to_string(sample_shape.size() + 1) +
                    " (samples first), found " + std::to_string(d.tensor.ndim()));
  for (size_t i = 0; i < sample_shape.size(); ++i)
    if (d.tensor.dim(i + 1) != sample_shape[i])
      throw DataError(path + ": dimension " + std::to_string(i + 1) + " is " +
                      std::to_string(d.tensor.dim(i + 1)) + ", expected " +
                      std::to_string(sample_shape[i]));
  return d;
}

}  // namespace nncomp
