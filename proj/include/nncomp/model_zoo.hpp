#pragma once

#include <string>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

// MIMO detection experiment geometry. The channel matrix is drawn once per
// experiment and frozen; datagen fills it in.
struct DetectionConfig {
  size_t n = 30;
  size_t k = 20;
  size_t hidden_count = 6;
  Tensor channel;  // (n, k)
  std::vector<double> snr_db = {8, 9, 10, 11, 12, 13};

  size_t hidden_width() const { return 10 * k; }

  void check() const {
    if (n == 0 || k == 0) throw ConfigError("detection: N and K must be positive");
    if (hidden_count == 0) throw ConfigError("detection: need at least one hidden layer");
    if (!channel.empty() && (channel.ndim() != 2 || channel.dim(0) != n || channel.dim(1) != k))
      throw ConfigError("detection: channel matrix must be " + std::to_string(n) + "x" +
                        std::to_string(k));
  }
};

// CSI feedback geometry: 2-channel (real/imag) angular-delay matrices and the
// compression rate of the feedback codeword.
struct FeedbackConfig {
  size_t channels = 2;
  size_t height = 32;
  size_t width = 32;
  size_t cr = 4;

  size_t input_elements() const { return channels * height * width; }

  size_t codeword_length() const {  // M
    check();
    return input_elements() / cr;
  }

  void check() const {
    if (cr != 4 && cr != 8 && cr != 16 && cr != 32)
      throw ConfigError("feedback: CR must be one of 4, 8, 16, 32");
    if (input_elements() % cr != 0)
      throw ConfigError("feedback: CR does not divide input size");
  }
};

// Width-parameterized sigmoid-output MLP detector; build_fullycon wraps it
// with the 10K hidden width. Distillation students use narrower widths.
inline ModelGraph build_detector(size_t n, size_t k, size_t hidden_count, size_t width,
                                 const std::string& name = "fullycon") {
  if (hidden_count == 0) throw ConfigError("detector: need at least one hidden layer");
  ModelGraph g(name, {n});
  g.emplace<DenseLayer>(n, width);
  g.emplace<ActivationLayer>(LayerKind::relu);
  for (size_t i = 1; i < hidden_count; ++i) {
    g.emplace<DenseLayer>(width, width);
    g.emplace<ActivationLayer>(LayerKind::relu);
  }
  g.emplace<DenseLayer>(width, k);
  g.emplace<ActivationLayer>(LayerKind::sigmoid);
  g.metadata()["arch"] = name;
  g.metadata()["n"] = std::to_string(n);
  g.metadata()["k"] = std::to_string(k);
  g.metadata()["hidden_count"] = std::to_string(hidden_count);
  g.metadata()["hidden_width"] = std::to_string(width);
  g.validate();
  return g;
}

inline ModelGraph build_fullycon(const DetectionConfig& cfg) {
  cfg.check();
  return build_detector(cfg.n, cfg.k, cfg.hidden_count, cfg.hidden_width());
}

// Representative two-FC-layer CSI autoencoder: conv feature extraction, a
// dense bottleneck pair holding the overwhelming majority of the weights, and
// two stacked-conv refinement stages.
inline ModelGraph build_csinet_plus_like(const FeedbackConfig& cfg) {
  cfg.check();
  const size_t m = cfg.codeword_length();
  const size_t flat = cfg.input_elements();
  ModelGraph g("csinet_plus_like", {cfg.channels, cfg.height, cfg.width});
  // encoder; inputs arrive in [0,1] with a tiny spread around their mean, so
  // center them to keep the structure from drowning in the constant offset
  g.emplace<AffineLayer>(2.0, -1.0);
  g.emplace<Conv2dLayer>(Conv2dLayer::same(cfg.channels, 8, 3, 3));
  g.emplace<ActivationLayer>(LayerKind::relu);
  g.emplace<Conv2dLayer>(Conv2dLayer::same(8, cfg.channels, 3, 3));
  g.emplace<ActivationLayer>(LayerKind::relu);
  g.emplace<FlattenLayer>();
  g.emplace<DenseLayer>(flat, m);
  // decoder
  g.emplace<DenseLayer>(m, flat);
  g.emplace<ReshapeLayer>(std::vector<size_t>{cfg.channels, cfg.height, cfg.width});
  for (int stage = 0; stage < 2; ++stage) {
    g.emplace<Conv2dLayer>(Conv2dLayer::same(cfg.channels, 8, 3, 3));
    g.emplace<ActivationLayer>(LayerKind::relu);
    g.emplace<Conv2dLayer>(Conv2dLayer::same(8, 16, 3, 3));
    g.emplace<ActivationLayer>(LayerKind::relu);
    g.emplace<Conv2dLayer>(Conv2dLayer::same(16, cfg.channels, 3, 3));
    if (stage == 0) g.emplace<ActivationLayer>(LayerKind::relu);
  }
  g.emplace<ActivationLayer>(LayerKind::sigmoid);
  g.metadata()["arch"] = "csinet_plus_like";
  g.metadata()["cr"] = std::to_string(cfg.cr);
  g.metadata()["codeword"] = std::to_string(m);
  g.validate();
  return g;
}

namespace detail {

// Shared scaffold for the two fully convolutional autoencoders. The encoder
// pools 32x32 down to a 4x4 bottleneck whose channel count realizes the
// codeword; widths double per pooling stage starting at 16, the decoder
// mirrors them.
struct ConvAePlan {
  std::vector<size_t> enc_channels = {16, 32, 64};
  size_t bottleneck;  // codeword channels at 4x4

  explicit ConvAePlan(const FeedbackConfig& cfg) {
    const size_t m = cfg.codeword_length();
    const size_t cells = (cfg.height / 8) * (cfg.width / 8);
    if (cfg.height % 8 != 0 || cfg.width % 8 != 0 || m % cells != 0)
      throw ConfigError("conv autoencoder: CR unreachable under the pooling plan");
    bottleneck = m / cells;
    if (bottleneck == 0) throw ConfigError("conv autoencoder: empty bottleneck");
  }
};

}  // namespace detail

inline ModelGraph build_convcsinet(const FeedbackConfig& cfg) {
  cfg.check();
  detail::ConvAePlan plan(cfg);
  ModelGraph g("convcsinet", {cfg.channels, cfg.height, cfg.width});
  // encoder: conv+pool stacks, then 1x1 projection to the codeword
  g.emplace<AffineLayer>(2.0, -1.0);
  size_t in_ch = cfg.channels;
  for (size_t ch : plan.enc_channels) {
    g.emplace<Conv2dLayer>(Conv2dLayer::same(in_ch, ch, 3, 3));
    g.emplace<ActivationLayer>(LayerKind::relu);
    g.emplace<AvgPoolLayer>(2);
    in_ch = ch;
  }
  g.emplace<Conv2dLayer>(in_ch, plan.bottleneck, 1, 1, 1, 0, 0);
  g.emplace<ActivationLayer>(LayerKind::relu);
  // decoder: 1x1 expansion, then upsample+conv stacks mirroring the encoder
  g.emplace<Conv2dLayer>(plan.bottleneck, plan.enc_channels.back(), 1, 1, 1, 0, 0);
  g.emplace<ActivationLayer>(LayerKind::relu);
  for (size_t i = plan.enc_channels.size(); i-- > 0;) {
    const size_t from = plan.enc_channels[i];
    const size_t to = i == 0 ? cfg.channels : plan.enc_channels[i - 1];
    g.emplace<UpsampleLayer>(2);
    g.emplace<Conv2dLayer>(Conv2dLayer::same(from, to, 3, 3));
    if (i != 0) g.emplace<ActivationLayer>(LayerKind::relu);
  }
  g.emplace<ActivationLayer>(LayerKind::sigmoid);
  g.metadata()["arch"] = "convcsinet";
  g.metadata()["cr"] = std::to_string(cfg.cr);
  g.metadata()["codeword"] = std::to_string(cfg.codeword_length());
  g.metadata()["encoder_channels"] = "16,32,64";
  g.validate();
  return g;
}

inline ModelGraph build_convsqucsinet(const FeedbackConfig& cfg) {
  cfg.check();
  detail::ConvAePlan plan(cfg);
  ModelGraph g("convsqucsinet", {cfg.channels, cfg.height, cfg.width});
  // encoder: each 3x3 conv block becomes a fire module (s=out/4, e1=e3=out/2)
  g.emplace<AffineLayer>(2.0, -1.0);
  size_t in_ch = cfg.channels;
  for (size_t ch : plan.enc_channels) {
    g.emplace<FireModule>(in_ch, ch / 4, ch / 2, ch / 2);
    g.emplace<AvgPoolLayer>(2);
    in_ch = ch;
  }
  g.emplace<Conv2dLayer>(in_ch, plan.bottleneck, 1, 1, 1, 0, 0);
  g.emplace<ActivationLayer>(LayerKind::relu);
  g.emplace<Conv2dLayer>(plan.bottleneck, plan.enc_channels.back(), 1, 1, 1, 0, 0);
  g.emplace<ActivationLayer>(LayerKind::relu);
  for (size_t i = plan.enc_channels.size(); i-- > 0;) {
    const size_t from = plan.enc_channels[i];
    g.emplace<UpsampleLayer>(2);
    if (i != 0) {
      g.emplace<FireModule>(from, plan.enc_channels[i - 1] / 4,
                            plan.enc_channels[i - 1] / 2, plan.enc_channels[i - 1] / 2);
    } else {
      // the reconstruction head stays a plain conv: a fire module's ReLU
      // output under the final sigmoid could never reach values below 0.5
      g.emplace<Conv2dLayer>(Conv2dLayer::same(from, cfg.channels, 3, 3));
    }
  }
  g.emplace<ActivationLayer>(LayerKind::sigmoid);
  g.metadata()["arch"] = "convsqucsinet";
  g.metadata()["cr"] = std::to_string(cfg.cr);
  g.metadata()["codeword"] = std::to_string(cfg.codeword_length());
  g.metadata()["encoder_channels"] = "16,32,64";
  g.validate();
  return g;
}

// Convenience dispatcher used by the CLI.
inline ModelGraph build_feedback_model(const std::string& arch, const FeedbackConfig& cfg) {
  if (arch == "csinet_plus_like") return build_csinet_plus_like(cfg);
  if (arch == "convcsinet") return build_convcsinet(cfg);
  if (arch == "convsqucsinet") return build_convsqucsinet(cfg);
  throw ConfigError("unknown feedback architecture '" + arch + "'");
}

}  // namespace nncomp
