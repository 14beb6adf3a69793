#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "nncomp/datagen.hpp"
#include "nncomp/rng.hpp"

using namespace nncomp;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

std::string temp_path(const std::string& name) {
  return std::string("/tmp/nncomp_datagen_") + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Detection data
// ---------------------------------------------------------------------------

TEST(DetectionChannel, ScaleAndF32Rounding) {
  SeededRng rng(1);
  Tensor h = make_detection_channel(30, 20, rng);
  EXPECT_EQ(h.dim(0), 30u);
  EXPECT_EQ(h.dim(1), 20u);
  double var = 0.0;
  for (size_t i = 0; i < h.numel(); ++i) {
    EXPECT_EQ(h[i], to_f32(h[i]));
    var += h[i] * h[i];
  }
  var /= static_cast<double>(h.numel());
  EXPECT_NEAR(var, 1.0 / 30.0, 0.01);   // entries are N(0,1)/sqrt(30)
}

TEST(DetectionData, ZeroNoiseIsExactProduct) {
  SeededRng rng(2);
  Tensor h = make_detection_channel(30, 20, rng);
  Dataset d = gen_detection_dataset(h, 50, kInf, rng);
  for (size_t i = 0; i < 50; ++i) {
    for (size_t r = 0; r < 30; ++r) {
      double acc = 0.0;
      for (size_t j = 0; j < 20; ++j)
        acc += h[r * 20 + j] * (2.0 * d.targets[i * 20 + j] - 1.0);
      EXPECT_EQ(d.inputs[i * 30 + r], to_f32(acc));
    }
  }
}

TEST(DetectionData, SnrCalibrationAtTenDb) {
  SeededRng rng(3);
  Tensor h = make_detection_channel(30, 20, rng);
  const size_t count = 100000;
  Dataset d = gen_detection_dataset(h, count, 10.0, rng);

  double signal2 = 0.0, noise2 = 0.0;
  for (size_t i = 0; i < count; ++i) {
    for (size_t r = 0; r < 30; ++r) {
      double acc = 0.0;
      for (size_t j = 0; j < 20; ++j)
        acc += h[r * 20 + j] * (2.0 * d.targets[i * 20 + j] - 1.0);
      const double n = d.inputs[i * 30 + r] - acc;
      signal2 += acc * acc;
      noise2 += n * n;
    }
  }
  const double ratio = noise2 / signal2;
  EXPECT_NEAR(ratio, 0.1, 0.002);   // within 2% relative
}

TEST(DetectionData, SymbolsAreUnbiased) {
  SeededRng rng(4);
  Tensor h = make_detection_channel(30, 20, rng);
  const size_t count = 100000;
  Dataset d = gen_detection_dataset(h, count, kInf, rng);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(count));
  for (size_t j = 0; j < 20; ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < count; ++i) mean += 2.0 * d.targets[i * 20 + j] - 1.0;
    mean /= static_cast<double>(count);
    EXPECT_LT(std::fabs(mean), 3.0 * sigma) << "coordinate " << j;
  }
}

TEST(DetectionData, DeterministicUnderSeed) {
  SeededRng ra(5), rb(5);
  Tensor ha = make_detection_channel(30, 20, ra);
  Tensor hb = make_detection_channel(30, 20, rb);
  Dataset da = gen_detection_dataset(ha, 200, 10.0, ra);
  Dataset db = gen_detection_dataset(hb, 200, 10.0, rb);
  for (size_t i = 0; i < da.inputs.numel(); ++i) EXPECT_EQ(da.inputs[i], db.inputs[i]);
  for (size_t i = 0; i < da.targets.numel(); ++i) EXPECT_EQ(da.targets[i], db.targets[i]);
}

TEST(DetectionData, EmptyCountThrows) {
  SeededRng rng(6);
  Tensor h = make_detection_channel(4, 3, rng);
  EXPECT_THROW(gen_detection_dataset(h, 0, 10.0, rng), DataError);
  EXPECT_THROW(gen_detection_mixed(h, 0, {10.0}, rng), DataError);
  EXPECT_THROW(gen_detection_mixed(h, 5, {}, rng), ConfigError);
}

// ---------------------------------------------------------------------------
// CSI data
// ---------------------------------------------------------------------------

TEST(CsiSample, MatchesBruteForceDft) {
  SeededRng rng(11);
  std::vector<CsiPath> paths(3);
  for (CsiPath& p : paths) {
    p.gain = {rng.normal(), rng.normal()};
    p.tau = rng.uniform(0.0, 0.12);
    p.omega = rng.uniform(-0.5, 0.5);
  }
  Tensor fast = csi_sample_from_paths(paths);

  // independent route: explicit spatial-frequency response and full 2-D DFT
  const size_t F = 256, A = 32;
  std::vector<std::complex<double>> h(F * A);
  for (size_t f = 0; f < F; ++f)
    for (size_t a = 0; a < A; ++a) {
      std::complex<double> acc{0.0, 0.0};
      for (const CsiPath& p : paths) {
        const double ph = 2.0 * M_PI * (static_cast<double>(f) * p.tau +
                                        static_cast<double>(a) * p.omega);
        acc += p.gain * std::complex<double>(std::cos(ph), std::sin(ph));
      }
      h[f * A + a] = acc;
    }
  const double scale = 1.0 / std::sqrt(static_cast<double>(F * A));
  for (size_t d = 0; d < 32; ++d)
    for (size_t b = 0; b < 32; ++b) {
      std::complex<double> acc{0.0, 0.0};
      for (size_t f = 0; f < F; ++f)
        for (size_t a = 0; a < A; ++a) {
          const double ph = -2.0 * M_PI * (static_cast<double>(d * f) / F +
                                           static_cast<double>(b * a) / A);
          acc += h[f * A + a] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
      acc *= scale;
      EXPECT_NEAR(fast[d * 32 + b], acc.real(), 1e-8) << "re " << d << "," << b;
      EXPECT_NEAR(fast[32 * 32 + d * 32 + b], acc.imag(), 1e-8) << "im " << d << "," << b;
    }
}

TEST(CsiSample, SinglePathOnGridConcentratesInOneBin) {
  std::vector<CsiPath> paths(1);
  paths[0].gain = {1.0, 0.0};
  paths[0].tau = 0.0;
  paths[0].omega = 0.0;
  Tensor t = csi_sample_from_paths(paths);
  const double expected = std::sqrt(256.0 * 32.0);
  EXPECT_NEAR(t[0], expected, 1e-9);
  for (size_t i = 1; i < t.numel(); ++i) EXPECT_NEAR(t[i], 0.0, 1e-9);
}

TEST(CsiDataset, ValuesInUnitIntervalAndInvertible) {
  SeededRng rng(12);
  CsiDataset ds = gen_csi_dataset(CsiScenario::indoor_like, 40, rng);
  EXPECT_LT(ds.norm_min, ds.norm_max);
  double lo = 2.0, hi = -1.0;
  for (size_t i = 0; i < ds.data.inputs.numel(); ++i) {
    const double v = ds.data.inputs[i];
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_NEAR(lo, 0.0, 1e-6);   // extremes are attained
  EXPECT_NEAR(hi, 1.0, 1e-6);

  // regenerating the same paths reproduces the raw values after denorm
  SeededRng replay(12);
  const double tau_max = 8.0 / 256.0;
  const double tc[] = {0.15, 0.40, 0.60, 0.85};
  const double wc[] = {-0.32, -0.08, 0.12, 0.38};
  const size_t l = 2 + replay.uniform_index(5);
  std::vector<CsiPath> paths(l);
  const double gscale = 1.0 / std::sqrt(2.0 * static_cast<double>(l));
  for (CsiPath& p : paths) {
    const size_t c = replay.uniform_index(4);
    p.gain = {replay.normal() * gscale, replay.normal() * gscale};
    p.tau = std::min(std::max(tc[c] * tau_max + replay.uniform(-tau_max / 16.0, tau_max / 16.0),
                              0.0),
                     tau_max * (1.0 - 1e-9));
    double w = wc[c] + replay.normal() * 0.02;
    w -= std::round(w);
    p.omega = w;
  }
  Tensor raw = csi_sample_from_paths(paths);
  Tensor first({2, 32, 32});
  for (size_t i = 0; i < first.numel(); ++i) first[i] = ds.data.inputs[i];
  Tensor denorm = denormalize(first, ds.norm_min, ds.norm_max);
  const double span = ds.norm_max - ds.norm_min;
  for (size_t i = 0; i < raw.numel(); ++i)
    EXPECT_NEAR(denorm[i], raw[i], 1e-6 * span);
}

TEST(CsiDataset, ValuesAreF32Representable) {
  // doubles that survived a float round trip have the low 29 mantissa bits
  // clear; this catches any compiler eliding the narrowing conversion
  auto low_bits = [](double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    return bits & ((uint64_t(1) << 29) - 1);
  };
  SeededRng rng(19);
  CsiDataset ds = gen_csi_dataset(CsiScenario::outdoor_like, 5, rng);
  EXPECT_EQ(low_bits(ds.norm_min), 0u);
  EXPECT_EQ(low_bits(ds.norm_max), 0u);
  for (size_t i = 0; i < ds.data.inputs.numel(); ++i)
    ASSERT_EQ(low_bits(ds.data.inputs[i]), 0u) << "value " << i;

  Tensor h = make_detection_channel(30, 20, rng);
  Dataset det = gen_detection_dataset(h, 100, 9.0, rng);
  for (size_t i = 0; i < det.inputs.numel(); ++i)
    ASSERT_EQ(low_bits(det.inputs[i]), 0u) << "value " << i;
}

TEST(CsiDataset, TargetsEqualInputs) {
  SeededRng rng(13);
  CsiDataset ds = gen_csi_dataset(CsiScenario::outdoor_like, 8, rng);
  ASSERT_TRUE(ds.data.inputs.same_shape(ds.data.targets));
  for (size_t i = 0; i < ds.data.inputs.numel(); ++i)
    EXPECT_EQ(ds.data.inputs[i], ds.data.targets[i]);
}

TEST(CsiDataset, IndoorMoreConcentratedThanOutdoor) {
  const size_t count = 1000;
  SeededRng ri(14), ro(15);
  CsiDataset din = gen_csi_dataset(CsiScenario::indoor_like, count, ri);
  CsiDataset dout = gen_csi_dataset(CsiScenario::outdoor_like, count, ro);

  auto concentration = [](const CsiDataset& ds, size_t count) {
    const size_t per = 32 * 32;
    double mean = 0.0;
    for (size_t i = 0; i < count; ++i) {
      std::vector<double> energy(per, 0.0);
      double total = 0.0;
      // de-normalize so energies are physical, not offset by the shift
      const double span = ds.norm_max - ds.norm_min;
      for (size_t b = 0; b < per; ++b) {
        const double re = ds.data.inputs[i * 2 * per + b] * span + ds.norm_min;
        const double im = ds.data.inputs[i * 2 * per + per + b] * span + ds.norm_min;
        energy[b] = re * re + im * im;
        total += energy[b];
      }
      std::partial_sort(energy.begin(), energy.begin() + 32, energy.end(),
                        std::greater<double>());
      double top = 0.0;
      for (size_t b = 0; b < 32; ++b) top += energy[b];
      mean += top / total;
    }
    return mean / static_cast<double>(count);
  };

  const double ci = concentration(din, count);
  const double co = concentration(dout, count);
  EXPECT_GT(ci, co);
}

TEST(CsiDataset, DeterministicUnderSeed) {
  SeededRng ra(16), rb(16);
  CsiDataset a = gen_csi_dataset(CsiScenario::indoor_like, 10, ra);
  CsiDataset b = gen_csi_dataset(CsiScenario::indoor_like, 10, rb);
  EXPECT_EQ(a.norm_min, b.norm_min);
  EXPECT_EQ(a.norm_max, b.norm_max);
  for (size_t i = 0; i < a.data.inputs.numel(); ++i)
    EXPECT_EQ(a.data.inputs[i], b.data.inputs[i]);
}

TEST(CsiDataset, FixedRangeMatchesSelfNormalizationOnOwnExtrema) {
  SeededRng ra(17), rb(17);
  CsiDataset a = gen_csi_dataset(CsiScenario::indoor_like, 10, ra);
  CsiDataset b = gen_csi_dataset(CsiScenario::indoor_like, 10, rb, a.norm_min, a.norm_max);
  EXPECT_EQ(b.norm_min, a.norm_min);
  EXPECT_EQ(b.norm_max, a.norm_max);
  for (size_t i = 0; i < a.data.inputs.numel(); ++i)
    EXPECT_EQ(b.data.inputs[i], a.data.inputs[i]);
}

TEST(CsiDataset, FixedRangeClampsOutOfRangeValues) {
  SeededRng ra(18), rb(18);
  CsiDataset wide = gen_csi_dataset(CsiScenario::outdoor_like, 40, ra);
  const double span = wide.norm_max - wide.norm_min;
  // a range strictly inside the data's extrema forces clamping at both ends
  CsiDataset clamped = gen_csi_dataset(CsiScenario::outdoor_like, 40, rb,
                                       wide.norm_min + 0.25 * span, wide.norm_max - 0.25 * span);
  size_t at_zero = 0, at_one = 0;
  for (size_t i = 0; i < clamped.data.inputs.numel(); ++i) {
    const double v = clamped.data.inputs[i];
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    if (v == 0.0) ++at_zero;
    if (v == 1.0) ++at_one;
  }
  EXPECT_GT(at_zero, 0u);
  EXPECT_GT(at_one, 0u);
  for (size_t i = 0; i < clamped.data.inputs.numel(); ++i)
    EXPECT_EQ(clamped.data.inputs[i], clamped.data.targets[i]);
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

TEST(DatasetFile, RoundTripBitIdentical) {
  SeededRng rng(21);
  Tensor h = make_detection_channel(6, 4, rng);
  Dataset d = gen_detection_dataset(h, 30, 8.0, rng);

  const std::string path = temp_path("roundtrip.nncd");
  save_dataset(path, d.inputs);
  LoadedDataset back = load_dataset(path);
  ASSERT_TRUE(back.tensor.same_shape(d.inputs));
  EXPECT_FALSE(back.normalized);
  for (size_t i = 0; i < d.inputs.numel(); ++i) EXPECT_EQ(back.tensor[i], d.inputs[i]);
  std::remove(path.c_str());
}

TEST(DatasetFile, NormalizedFlagCarriesMinMax) {
  SeededRng rng(22);
  CsiDataset ds = gen_csi_dataset(CsiScenario::indoor_like, 4, rng);
  const std::string path = temp_path("norm.nncd");
  save_dataset(path, ds.data.inputs, true, ds.norm_min, ds.norm_max);
  LoadedDataset back = load_dataset(path);
  EXPECT_TRUE(back.normalized);
  EXPECT_EQ(back.norm_min, ds.norm_min);   // min/max were f32 already
  EXPECT_EQ(back.norm_max, ds.norm_max);
  for (size_t i = 0; i < ds.data.inputs.numel(); ++i)
    EXPECT_EQ(back.tensor[i], ds.data.inputs[i]);
  std::remove(path.c_str());
}

TEST(DatasetFile, TruncationNamesMissingBytes) {
  SeededRng rng(23);
  Tensor t({3, 5});
  for (double& v : t.values()) v = rng.uniform();
  const std::string path = temp_path("trunc.nncd");
  save_dataset(path, t);

  std::string data = read_file(path);
  write_file_atomic(path, data.substr(0, data.size() - 10));
  try {
    load_dataset(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(DatasetFile, CorruptionFailsCrc) {
  SeededRng rng(24);
  Tensor t({4, 4});
  for (double& v : t.values()) v = rng.uniform();
  const std::string path = temp_path("crc.nncd");
  save_dataset(path, t);

  std::string data = read_file(path);
  data[data.size() - 9] ^= 0x40;   // flip a payload bit
  write_file_atomic(path, data);
  try {
    load_dataset(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(DatasetFile, BadMagicAndVersion) {
  SeededRng rng(25);
  Tensor t({2, 2});
  for (double& v : t.values()) v = rng.uniform();
  const std::string path = temp_path("magic.nncd");
  save_dataset(path, t);

  std::string data = read_file(path);
  std::string bad = data;
  bad[0] = 'X';
  write_file_atomic(path, bad);
  EXPECT_THROW(load_dataset(path), DataError);

  bad = data;
  bad[4] = 9;   // version
  write_file_atomic(path, bad);
  EXPECT_THROW(load_dataset(path), DataError);
  std::remove(path.c_str());
}

TEST(DatasetFile, ExternalLoaderValidatesShape) {
  Tensor t({5, 2, 16, 16});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i % 7);
  const std::string path = temp_path("shape.nncd");
  save_dataset(path, t);

  EXPECT_NO_THROW(load_external_dataset(path, {2, 16, 16}));
  try {
    load_external_dataset(path, {2, 32, 32});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 32"), std::string::npos);
  }
  std::remove(path.c_str());
}
