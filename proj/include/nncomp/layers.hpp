#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/rng.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using MapConstRowMat = Eigen::Map<const RowMat>;

enum class LayerKind {
  dense,
  conv2d,
  relu,
  sigmoid,
  avgpool,
  upsample,
  global_avgpool,
  flatten,
  reshape,
  fire,
  lowrank_conv2d,
  affine,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::global_avgpool: return "global_avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
    case LayerKind::fire: return "fire";
    case LayerKind::lowrank_conv2d: return "lowrank_conv2d";
    case LayerKind::affine: return "affine";
  }
  return "?";
}

// Parameter tensor owned by a layer; `name` is the suffix inside the layer
// ("W", "b", "squeeze.W", ...).
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

// Forward-pass intermediates needed by backward. Contents are layer-specific.
struct LayerCache {
  std::vector<Tensor> saved;
};

// All layer forward/backward methods operate on batched tensors whose first
// dimension is the batch. `cache` may be null for inference-only calls;
// backward requires the cache produced by the matching forward.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  // Validates the per-sample input shape and returns the per-sample output
  // shape. Throws ShapeError/ConfigError on mismatch.
  virtual std::vector<size_t> output_shape(const std::vector<size_t>& in) const = 0;

  virtual Tensor forward(const Tensor& x, LayerCache* cache) const = 0;

  // Returns grad wrt input; appends parameter gradients to `param_grads`
  // in the same order as params().
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                          std::vector<Tensor>* param_grads) const = 0;

  virtual void collect_params(std::vector<ParamRef>& out) { (void)out; }

  virtual size_t weight_count() const { return 0; }

  // FLOPs per sample; one multiply-accumulate counts as 2.
  virtual size_t flop_count(const std::vector<size_t>& in) const = 0;

  virtual void init_params(SeededRng& rng) { (void)rng; }
};

namespace detail {

inline size_t sample_numel(const std::vector<size_t>& per_sample) {
  size_t n = 1;
  for (size_t d : per_sample) n *= d;
  return n;
}

inline void require_rank(const std::vector<size_t>& in, size_t rank, const char* who) {
  if (in.size() != rank)
    throw ShapeError(std::string(who) + ": expected input rank " + std::to_string(rank) +
                     ", got (" + Tensor::shape_string(in) + ")");
}

inline double glorot_bound(size_t fan_in, size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void glorot_fill(Tensor& t, size_t fan_in, size_t fan_out, SeededRng& rng) {
  const double b = glorot_bound(fan_in, fan_out);
  for (double& v : t.values()) v = rng.uniform(-b, b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense (fully connected): y = x W^T + b, batched over rows.
// ---------------------------------------------------------------------------
class DenseLayer : public Layer {
 public:
  DenseLayer(size_t fan_in, size_t fan_out, bool has_bias = true)
      : fan_in_(fan_in),
        fan_out_(fan_out),
        has_bias_(has_bias),
        w_({fan_out, fan_in}),
        b_(has_bias ? Tensor({fan_out}) : Tensor()) {
    if (fan_in == 0 || fan_out == 0) throw ConfigError("dense: zero fan");
  }

  LayerKind kind() const override { return LayerKind::dense; }
  size_t fan_in() const { return fan_in_; }
  size_t fan_out() const { return fan_out_; }
  bool has_bias() const { return has_bias_; }
  Tensor& weights() { return w_; }
  const Tensor& weights() const { return w_; }
  Tensor& bias() { return b_; }
  const Tensor& bias() const { return b_; }

  std::string describe() const override {
    return "dense in=" + std::to_string(fan_in_) + " out=" + std::to_string(fan_out_) +
           " bias=" + (has_bias_ ? "1" : "0");
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 1, "dense");
    if (in[0] != fan_in_)
      throw ShapeError("dense: input width " + std::to_string(in[0]) + " != fan_in " +
                       std::to_string(fan_in_));
    return {fan_out_};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    if (x.ndim() != 2 || x.dim(1) != fan_in_)
      throw ShapeError("dense: input (" + x.shape_string() + ") incompatible with fan_in " +
                       std::to_string(fan_in_));
    const size_t m = x.dim(0);
    Tensor y({m, fan_out_});
    MapConstRowMat xm(x.data(), m, fan_in_);
    MapConstRowMat wm(w_.data(), fan_out_, fan_in_);
    MapRowMat ym(y.data(), m, fan_out_);
    ym.noalias() = xm * wm.transpose();
    if (has_bias_) {
      Eigen::Map<const Eigen::VectorXd> bv(b_.data(), fan_out_);
      ym.rowwise() += bv.transpose();
    }
    if (cache) cache->saved = {x};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>* param_grads) const override {
    const Tensor& x = cache.saved.at(0);
    const size_t m = x.dim(0);
    MapConstRowMat gm(grad_out.data(), m, fan_out_);
    MapConstRowMat xm(x.data(), m, fan_in_);
    MapConstRowMat wm(w_.data(), fan_out_, fan_in_);

    Tensor dw({fan_out_, fan_in_});
    MapRowMat dwm(dw.data(), fan_out_, fan_in_);
    dwm.noalias() = gm.transpose() * xm;

    Tensor dx({m, fan_in_});
    MapRowMat dxm(dx.data(), m, fan_in_);
    dxm.noalias() = gm * wm;

    param_grads->push_back(std::move(dw));
    if (has_bias_) {
      Tensor db({fan_out_});
      Eigen::Map<Eigen::VectorXd> dbv(db.data(), fan_out_);
      dbv = gm.colwise().sum().transpose();
      param_grads->push_back(std::move(db));
    }
    return dx;
  }

  void collect_params(std::vector<ParamRef>& out) override {
    out.push_back({"W", &w_});
    if (has_bias_) out.push_back({"b", &b_});
  }

  size_t weight_count() const override { return w_.numel() + (has_bias_ ? b_.numel() : 0); }

  size_t flop_count(const std::vector<size_t>&) const override {
    return 2 * (fan_in_ + (has_bias_ ? 1 : 0)) * fan_out_;
  }

  void init_params(SeededRng& rng) override {
    detail::glorot_fill(w_, fan_in_, fan_out_, rng);
    if (has_bias_) std::fill(b_.values().begin(), b_.values().end(), 0.0);
  }

 private:
  size_t fan_in_, fan_out_;
  bool has_bias_;
  Tensor w_, b_;
};

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation) via im2col + GEMM. Input (m, C, H, W).
// ---------------------------------------------------------------------------
class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(size_t in_channels, size_t out_channels, size_t kh, size_t kw, size_t stride,
              size_t pad_h, size_t pad_w, bool has_bias = true)
      : cin_(in_channels),
        cout_(out_channels),
        kh_(kh),
        kw_(kw),
        stride_(stride),
        ph_(pad_h),
        pw_(pad_w),
        has_bias_(has_bias),
        w_({out_channels, in_channels, kh, kw}),
        b_(has_bias ? Tensor({out_channels}) : Tensor()) {
    if (cin_ == 0 || cout_ == 0 || kh_ == 0 || kw_ == 0 || stride_ == 0)
      throw ConfigError("conv2d: zero size parameter");
  }

  // Same-padded stride-1 convolution with an odd square/rect kernel.
  static Conv2dLayer same(size_t in_channels, size_t out_channels, size_t kh, size_t kw,
                          bool has_bias = true) {
    if (kh % 2 == 0 || kw % 2 == 0)
      throw ConfigError("conv2d: same padding requires odd kernel dims");
    return Conv2dLayer(in_channels, out_channels, kh, kw, 1, (kh - 1) / 2, (kw - 1) / 2,
                       has_bias);
  }

  LayerKind kind() const override { return LayerKind::conv2d; }
  size_t in_channels() const { return cin_; }
  size_t out_channels() const { return cout_; }
  size_t kernel_h() const { return kh_; }
  size_t kernel_w() const { return kw_; }
  size_t stride() const { return stride_; }
  size_t pad_h() const { return ph_; }
  size_t pad_w() const { return pw_; }
  bool has_bias() const { return has_bias_; }
  Tensor& weights() { return w_; }
  const Tensor& weights() const { return w_; }
  Tensor& bias() { return b_; }
  const Tensor& bias() const { return b_; }

  std::string describe() const override {
    return "conv2d in=" + std::to_string(cin_) + " out=" + std::to_string(cout_) +
           " kh=" + std::to_string(kh_) + " kw=" + std::to_string(kw_) +
           " stride=" + std::to_string(stride_) + " ph=" + std::to_string(ph_) +
           " pw=" + std::to_string(pw_) + " bias=" + (has_bias_ ? "1" : "0");
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 3, "conv2d");
    if (in[0] != cin_)
      throw ShapeError("conv2d: input channels " + std::to_string(in[0]) + " != " +
                       std::to_string(cin_));
    const auto [ho, wo] = out_dims(in[1], in[2]);
    return {cout_, ho, wo};
  }

  std::pair<size_t, size_t> out_dims(size_t h, size_t w) const {
    const long long ho = (static_cast<long long>(h) + 2 * ph_ - kh_) / static_cast<long long>(stride_) + 1;
    const long long wo = (static_cast<long long>(w) + 2 * pw_ - kw_) / static_cast<long long>(stride_) + 1;
    if (ho <= 0 || wo <= 0 ||
        static_cast<long long>(h) + 2 * static_cast<long long>(ph_) < static_cast<long long>(kh_) ||
        static_cast<long long>(w) + 2 * static_cast<long long>(pw_) < static_cast<long long>(kw_))
      throw ConfigError("conv2d: non-positive output dims for input " + std::to_string(h) + "x" +
                        std::to_string(w));
    return {static_cast<size_t>(ho), static_cast<size_t>(wo)};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    check_input(x);
    const size_t m = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [ho, wo] = out_dims(h, w);
    Tensor y({m, cout_, ho, wo});

    MapConstRowMat wm(w_.data(), cout_, cin_ * kh_ * kw_);
    const size_t chunk = samples_per_chunk(ho * wo);
    Eigen::MatrixXd col;
    Eigen::MatrixXd out;
    for (size_t s0 = 0; s0 < m; s0 += chunk) {
      const size_t sc = std::min(chunk, m - s0);
      fill_im2col(x, s0, sc, h, w, ho, wo, col);
      out.noalias() = col * wm.transpose();  // (sc*ho*wo, cout)
      // scatter to y
      for (size_t s = 0; s < sc; ++s) {
        for (size_t o = 0; o < cout_; ++o) {
          double* dst = y.data() + (((s0 + s) * cout_ + o) * ho * wo);
          const double bias = has_bias_ ? b_[o] : 0.0;
          const double* src = out.col(o).data() + s * ho * wo;
          for (size_t p = 0; p < ho * wo; ++p) dst[p] = src[p] + bias;
        }
      }
    }
    if (cache) cache->saved = {x};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>* param_grads) const override {
    const Tensor& x = cache.saved.at(0);
    const size_t m = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [ho, wo] = out_dims(h, w);

    Tensor dw({cout_, cin_, kh_, kw_});
    Tensor db = has_bias_ ? Tensor({cout_}) : Tensor();
    Tensor dx({m, cin_, h, w});

    MapConstRowMat wm(w_.data(), cout_, cin_ * kh_ * kw_);
    MapRowMat dwm(dw.data(), cout_, cin_ * kh_ * kw_);

    const size_t chunk = samples_per_chunk(ho * wo);
    Eigen::MatrixXd col, gmat, dcol;
    for (size_t s0 = 0; s0 < m; s0 += chunk) {
      const size_t sc = std::min(chunk, m - s0);
      const size_t rows = sc * ho * wo;
      // gather grad_out into (rows, cout)
      gmat.resize(rows, cout_);
      for (size_t s = 0; s < sc; ++s)
        for (size_t o = 0; o < cout_; ++o) {
          const double* src = grad_out.data() + (((s0 + s) * cout_ + o) * ho * wo);
          double* dst = gmat.col(o).data() + s * ho * wo;
          std::memcpy(dst, src, ho * wo * sizeof(double));
        }
      fill_im2col(x, s0, sc, h, w, ho, wo, col);
      dwm.noalias() += gmat.transpose() * col;
      if (has_bias_)
        for (size_t o = 0; o < cout_; ++o) db[o] += gmat.col(o).sum();
      dcol.noalias() = gmat * wm;  // (rows, cin*kh*kw)
      col2im_add(dcol, s0, sc, h, w, ho, wo, dx);
    }

    param_grads->push_back(std::move(dw));
    if (has_bias_) param_grads->push_back(std::move(db));
    return dx;
  }

  void collect_params(std::vector<ParamRef>& out) override {
    out.push_back({"W", &w_});
    if (has_bias_) out.push_back({"b", &b_});
  }

  size_t weight_count() const override { return w_.numel() + (has_bias_ ? b_.numel() : 0); }

  size_t flop_count(const std::vector<size_t>& in) const override {
    const auto [ho, wo] = out_dims(in[1], in[2]);
    return 2 * ho * wo * (cin_ * kh_ * kw_ + (has_bias_ ? 1 : 0)) * cout_;
  }

  void init_params(SeededRng& rng) override {
    detail::glorot_fill(w_, cin_ * kh_ * kw_, cout_ * kh_ * kw_, rng);
    if (has_bias_) std::fill(b_.values().begin(), b_.values().end(), 0.0);
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.ndim() != 4 || x.dim(1) != cin_)
      throw ShapeError("conv2d: input (" + x.shape_string() + ") incompatible with C_in " +
                       std::to_string(cin_));
  }

  size_t samples_per_chunk(size_t out_pixels) const {
    // Cap the im2col buffer at ~32 MB.
    const size_t bytes_per_sample = out_pixels * cin_ * kh_ * kw_ * sizeof(double);
    return std::max<size_t>(1, (32u << 20) / std::max<size_t>(1, bytes_per_sample));
  }

  // col(row = (s*ho + i)*wo + j, c = (ci*kh + a)*kw + b), column-major.
  void fill_im2col(const Tensor& x, size_t s0, size_t sc, size_t h, size_t w, size_t ho,
                   size_t wo, Eigen::MatrixXd& col) const {
    const size_t rows = sc * ho * wo;
    col.resize(rows, cin_ * kh_ * kw_);
    for (size_t c = 0; c < cin_; ++c)
      for (size_t a = 0; a < kh_; ++a)
        for (size_t b = 0; b < kw_; ++b) {
          double* dst = col.col((c * kh_ + a) * kw_ + b).data();
          for (size_t s = 0; s < sc; ++s) {
            const double* xc = x.data() + ((s0 + s) * cin_ + c) * h * w;
            for (size_t i = 0; i < ho; ++i) {
              const long long ii = static_cast<long long>(i * stride_ + a) - static_cast<long long>(ph_);
              double* drow = dst + (s * ho + i) * wo;
              if (ii < 0 || ii >= static_cast<long long>(h)) {
                std::fill(drow, drow + wo, 0.0);
                continue;
              }
              const double* srow = xc + static_cast<size_t>(ii) * w;
              if (stride_ == 1) {
                // contiguous span with zero edges
                const long long j0 = static_cast<long long>(b) - static_cast<long long>(pw_);
                for (size_t j = 0; j < wo; ++j) {
                  const long long jj = j0 + static_cast<long long>(j);
                  drow[j] = (jj < 0 || jj >= static_cast<long long>(w)) ? 0.0 : srow[jj];
                }
              } else {
                for (size_t j = 0; j < wo; ++j) {
                  const long long jj =
                      static_cast<long long>(j * stride_ + b) - static_cast<long long>(pw_);
                  drow[j] = (jj < 0 || jj >= static_cast<long long>(w)) ? 0.0 : srow[jj];
                }
              }
            }
          }
        }
  }

  void col2im_add(const Eigen::MatrixXd& dcol, size_t s0, size_t sc, size_t h, size_t w,
                  size_t ho, size_t wo, Tensor& dx) const {
    for (size_t c = 0; c < cin_; ++c)
      for (size_t a = 0; a < kh_; ++a)
        for (size_t b = 0; b < kw_; ++b) {
          const double* src = dcol.col((c * kh_ + a) * kw_ + b).data();
          for (size_t s = 0; s < sc; ++s) {
            double* xc = dx.data() + ((s0 + s) * cin_ + c) * h * w;
            for (size_t i = 0; i < ho; ++i) {
              const long long ii = static_cast<long long>(i * stride_ + a) - static_cast<long long>(ph_);
              if (ii < 0 || ii >= static_cast<long long>(h)) continue;
              const double* srow = src + (s * ho + i) * wo;
              double* xrow = xc + static_cast<size_t>(ii) * w;
              for (size_t j = 0; j < wo; ++j) {
                const long long jj =
                    static_cast<long long>(j * stride_ + b) - static_cast<long long>(pw_);
                if (jj >= 0 && jj < static_cast<long long>(w)) xrow[jj] += srow[j];
              }
            }
          }
        }
  }

  size_t cin_, cout_, kh_, kw_, stride_, ph_, pw_;
  bool has_bias_;
  Tensor w_, b_;
};

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------
class ActivationLayer : public Layer {
 public:
  explicit ActivationLayer(LayerKind k) : kind_(k) {
    if (k != LayerKind::relu && k != LayerKind::sigmoid)
      throw ConfigError("activation: unsupported kind");
  }

  LayerKind kind() const override { return kind_; }
  std::string describe() const override { return layer_kind_name(kind_); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ActivationLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override { return in; }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    Tensor y = x;
    if (kind_ == LayerKind::relu) {
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      if (cache) cache->saved = {x};
    } else {
      for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
      if (cache) cache->saved = {y};
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& saved = cache.saved.at(0);
    Tensor dx = grad_out;
    if (kind_ == LayerKind::relu) {
      for (size_t i = 0; i < dx.numel(); ++i)
        if (saved[i] <= 0.0) dx[i] = 0.0;
    } else {
      for (size_t i = 0; i < dx.numel(); ++i) dx[i] *= saved[i] * (1.0 - saved[i]);
    }
    return dx;
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    return detail::sample_numel(in);
  }

 private:
  LayerKind kind_;
};

// ---------------------------------------------------------------------------
// Fixed elementwise map y = scale * x + shift. No parameters; used to center
// and rescale inputs whose raw range suits the loss but not the optimizer.
// ---------------------------------------------------------------------------
class AffineLayer : public Layer {
 public:
  AffineLayer(double scale, double shift) : scale_(scale), shift_(shift) {
    if (scale_ == 0.0) throw ConfigError("affine: scale must be nonzero");
  }

  LayerKind kind() const override { return LayerKind::affine; }
  double scale() const { return scale_; }
  double shift() const { return shift_; }

  std::string describe() const override {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "affine scale=%.17g shift=%.17g", scale_, shift_);
    return buf;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<AffineLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override { return in; }

  Tensor forward(const Tensor& x, LayerCache*) const override {
    Tensor y = x;
    for (double& v : y.values()) v = scale_ * v + shift_;
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache&,
                  std::vector<Tensor>*) const override {
    Tensor dx = grad_out;
    for (double& v : dx.values()) v *= scale_;
    return dx;
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    return 2 * detail::sample_numel(in);
  }

 private:
  double scale_, shift_;
};

// ---------------------------------------------------------------------------
// Average pooling over factor x factor blocks. Input (m, C, H, W).
// ---------------------------------------------------------------------------
class AvgPoolLayer : public Layer {
 public:
  explicit AvgPoolLayer(size_t factor) : f_(factor) {
    if (f_ < 1) throw ConfigError("avgpool: factor must be >= 1");
  }

  LayerKind kind() const override { return LayerKind::avgpool; }
  size_t factor() const { return f_; }
  std::string describe() const override { return "avgpool factor=" + std::to_string(f_); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPoolLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 3, "avgpool");
    if (in[1] % f_ != 0 || in[2] % f_ != 0)
      throw ConfigError("avgpool: spatial dims " + std::to_string(in[1]) + "x" +
                        std::to_string(in[2]) + " not divisible by factor " + std::to_string(f_));
    return {in[0], in[1] / f_, in[2] / f_};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    const size_t m = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % f_ != 0 || w % f_ != 0)
      throw ConfigError("avgpool: indivisible spatial dims " + x.shape_string());
    const size_t ho = h / f_, wo = w / f_;
    Tensor y({m, c, ho, wo});
    const double inv = 1.0 / static_cast<double>(f_ * f_);
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double* xp = x.data() + sc * h * w;
      double* yp = y.data() + sc * ho * wo;
      for (size_t i = 0; i < ho; ++i)
        for (size_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (size_t a = 0; a < f_; ++a)
            for (size_t b = 0; b < f_; ++b) acc += xp[(i * f_ + a) * w + j * f_ + b];
          yp[i * wo + j] = acc * inv;
        }
    }
    if (cache) cache->saved = {Tensor({4}, {double(m), double(c), double(h), double(w)})};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& dims = cache.saved.at(0);
    const size_t m = size_t(dims[0]), c = size_t(dims[1]), h = size_t(dims[2]), w = size_t(dims[3]);
    const size_t ho = h / f_, wo = w / f_;
    Tensor dx({m, c, h, w});
    const double inv = 1.0 / static_cast<double>(f_ * f_);
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double* gp = grad_out.data() + sc * ho * wo;
      double* dp = dx.data() + sc * h * w;
      for (size_t i = 0; i < ho; ++i)
        for (size_t j = 0; j < wo; ++j) {
          const double g = gp[i * wo + j] * inv;
          for (size_t a = 0; a < f_; ++a)
            for (size_t b = 0; b < f_; ++b) dp[(i * f_ + a) * w + j * f_ + b] = g;
        }
    }
    return dx;
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    return detail::sample_numel(in);
  }

 private:
  size_t f_;
};

// ---------------------------------------------------------------------------
// Nearest-neighbor upsampling: each cell replicated factor x factor.
// ---------------------------------------------------------------------------
class UpsampleLayer : public Layer {
 public:
  explicit UpsampleLayer(size_t factor) : f_(factor) {
    if (f_ < 1) throw ConfigError("upsample: factor must be >= 1");
  }

  LayerKind kind() const override { return LayerKind::upsample; }
  size_t factor() const { return f_; }
  std::string describe() const override { return "upsample factor=" + std::to_string(f_); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<UpsampleLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 3, "upsample");
    return {in[0], in[1] * f_, in[2] * f_};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    const size_t m = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({m, c, h * f_, w * f_});
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double* xp = x.data() + sc * h * w;
      double* yp = y.data() + sc * h * f_ * w * f_;
      for (size_t i = 0; i < h * f_; ++i)
        for (size_t j = 0; j < w * f_; ++j) yp[i * w * f_ + j] = xp[(i / f_) * w + j / f_];
    }
    if (cache) cache->saved = {Tensor({4}, {double(m), double(c), double(h), double(w)})};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& dims = cache.saved.at(0);
    const size_t m = size_t(dims[0]), c = size_t(dims[1]), h = size_t(dims[2]), w = size_t(dims[3]);
    Tensor dx({m, c, h, w});
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double* gp = grad_out.data() + sc * h * f_ * w * f_;
      double* dp = dx.data() + sc * h * w;
      for (size_t i = 0; i < h * f_; ++i)
        for (size_t j = 0; j < w * f_; ++j) dp[(i / f_) * w + j / f_] += gp[i * w * f_ + j];
    }
    return dx;
  }

  size_t flop_count(const std::vector<size_t>&) const override { return 0; }

 private:
  size_t f_;
};

// ---------------------------------------------------------------------------
// Global average pooling: (m, C, H, W) -> (m, C).
// ---------------------------------------------------------------------------
class GlobalAvgPoolLayer : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::global_avgpool; }
  std::string describe() const override { return "global_avgpool"; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPoolLayer>(*this);
  }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 3, "global_avgpool");
    return {in[0]};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    const size_t m = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({m, c});
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double* xp = x.data() + sc * hw;
      double acc = 0.0;
      for (size_t p = 0; p < hw; ++p) acc += xp[p];
      y[sc] = acc / static_cast<double>(hw);
    }
    if (cache)
      cache->saved = {Tensor({4}, {double(m), double(c), double(x.dim(2)), double(x.dim(3))})};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& dims = cache.saved.at(0);
    const size_t m = size_t(dims[0]), c = size_t(dims[1]), h = size_t(dims[2]), w = size_t(dims[3]);
    Tensor dx({m, c, h, w});
    const double inv = 1.0 / static_cast<double>(h * w);
    for (size_t sc = 0; sc < m * c; ++sc) {
      const double g = grad_out[sc] * inv;
      double* dp = dx.data() + sc * h * w;
      std::fill(dp, dp + h * w, g);
    }
    return dx;
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    return detail::sample_numel(in);
  }
};

// ---------------------------------------------------------------------------
// Flatten / Reshape (structural, no parameters, no FLOPs).
// ---------------------------------------------------------------------------
class FlattenLayer : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  std::string describe() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<FlattenLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    return {detail::sample_numel(in)};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    std::vector<size_t> in_shape(x.shape().begin() + 1, x.shape().end());
    if (cache) {
      Tensor dims({in_shape.size() + 1});
      dims[0] = double(x.dim(0));
      for (size_t i = 0; i < in_shape.size(); ++i) dims[i + 1] = double(in_shape[i]);
      cache->saved = {dims};
    }
    return x.reshaped({x.dim(0), detail::sample_numel(in_shape)});
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& dims = cache.saved.at(0);
    std::vector<size_t> shape;
    for (size_t i = 0; i < dims.numel(); ++i) shape.push_back(size_t(dims[i]));
    return grad_out.reshaped(shape);
  }

  size_t flop_count(const std::vector<size_t>&) const override { return 0; }
};

class ReshapeLayer : public Layer {
 public:
  explicit ReshapeLayer(std::vector<size_t> target) : target_(std::move(target)) {
    if (target_.empty()) throw ConfigError("reshape: empty target shape");
  }

  LayerKind kind() const override { return LayerKind::reshape; }
  const std::vector<size_t>& target() const { return target_; }

  std::string describe() const override {
    return "reshape dims=" + Tensor::shape_string(target_);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReshapeLayer>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    if (detail::sample_numel(in) != detail::sample_numel(target_))
      throw ShapeError("reshape: element count mismatch (" + Tensor::shape_string(in) +
                       ") -> (" + Tensor::shape_string(target_) + ")");
    return target_;
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    std::vector<size_t> in_shape(x.shape().begin() + 1, x.shape().end());
    if (cache) {
      Tensor dims({in_shape.size() + 1});
      dims[0] = double(x.dim(0));
      for (size_t i = 0; i < in_shape.size(); ++i) dims[i + 1] = double(in_shape[i]);
      cache->saved = {dims};
    }
    std::vector<size_t> out_shape = {x.dim(0)};
    out_shape.insert(out_shape.end(), target_.begin(), target_.end());
    return x.reshaped(out_shape);
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>*) const override {
    const Tensor& dims = cache.saved.at(0);
    std::vector<size_t> shape;
    for (size_t i = 0; i < dims.numel(); ++i) shape.push_back(size_t(dims[i]));
    return grad_out.reshaped(shape);
  }

  size_t flop_count(const std::vector<size_t>&) const override { return 0; }

 private:
  std::vector<size_t> target_;
};

// ---------------------------------------------------------------------------
// Fire module: 1x1 squeeze conv + ReLU, then parallel 1x1 and same-padded 3x3
// expand convs, each ReLU-activated, channel-concatenated.
// ---------------------------------------------------------------------------
class FireModule : public Layer {
 public:
  FireModule(size_t in_channels, size_t squeeze, size_t expand1, size_t expand3)
      : in_(in_channels),
        s_(squeeze),
        e1_(expand1),
        e3_(expand3),
        squeeze_(in_channels, squeeze, 1, 1, 1, 0, 0, true),
        expand1_(squeeze, expand1, 1, 1, 1, 0, 0, true),
        expand3_(Conv2dLayer::same(squeeze, expand3, 3, 3, true)) {
    if (s_ >= e1_ + e3_)
      throw ConfigError("fire: squeeze " + std::to_string(s_) +
                        " must be < expand total " + std::to_string(e1_ + e3_));
  }

  LayerKind kind() const override { return LayerKind::fire; }
  size_t in_channels() const { return in_; }
  size_t squeeze_channels() const { return s_; }
  size_t expand1_channels() const { return e1_; }
  size_t expand3_channels() const { return e3_; }

  std::string describe() const override {
    return "fire in=" + std::to_string(in_) + " squeeze=" + std::to_string(s_) +
           " e1=" + std::to_string(e1_) + " e3=" + std::to_string(e3_);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<FireModule>(*this); }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    auto sq = squeeze_.output_shape(in);
    auto a = expand1_.output_shape(sq);
    auto b = expand3_.output_shape(sq);
    if (a[1] != b[1] || a[2] != b[2]) throw ShapeError("fire: branch spatial mismatch");
    return {e1_ + e3_, a[1], a[2]};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    LayerCache csq, ce1, ce3;
    Tensor zpre = squeeze_.forward(x, cache ? &csq : nullptr);
    Tensor z = zpre;
    for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
    Tensor apre = expand1_.forward(z, cache ? &ce1 : nullptr);
    Tensor bpre = expand3_.forward(z, cache ? &ce3 : nullptr);

    const size_t m = x.dim(0), ho = apre.dim(2), wo = apre.dim(3);
    Tensor y({m, e1_ + e3_, ho, wo});
    const size_t plane = ho * wo;
    for (size_t s = 0; s < m; ++s) {
      std::memcpy(y.data() + s * (e1_ + e3_) * plane, apre.data() + s * e1_ * plane,
                  e1_ * plane * sizeof(double));
      std::memcpy(y.data() + (s * (e1_ + e3_) + e1_) * plane, bpre.data() + s * e3_ * plane,
                  e3_ * plane * sizeof(double));
    }
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;

    if (cache) {
      cache->saved.clear();
      cache->saved.push_back(csq.saved.at(0));   // x
      cache->saved.push_back(std::move(zpre));   // squeeze pre-activation
      cache->saved.push_back(std::move(z));      // expand input
      cache->saved.push_back(std::move(apre));   // expand1 pre-activation
      cache->saved.push_back(std::move(bpre));   // expand3 pre-activation
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>* param_grads) const override {
    const Tensor& x = cache.saved.at(0);
    const Tensor& zpre = cache.saved.at(1);
    const Tensor& z = cache.saved.at(2);
    const Tensor& apre = cache.saved.at(3);
    const Tensor& bpre = cache.saved.at(4);

    const size_t m = x.dim(0), ho = apre.dim(2), wo = apre.dim(3);
    const size_t plane = ho * wo;

    // split concat grad, applying the output ReLU gate
    Tensor da({m, e1_, ho, wo}), db({m, e3_, ho, wo});
    for (size_t s = 0; s < m; ++s) {
      const double* g = grad_out.data() + s * (e1_ + e3_) * plane;
      double* dap = da.data() + s * e1_ * plane;
      double* dbp = db.data() + s * e3_ * plane;
      for (size_t p = 0; p < e1_ * plane; ++p)
        dap[p] = apre.data()[s * e1_ * plane + p] > 0.0 ? g[p] : 0.0;
      for (size_t p = 0; p < e3_ * plane; ++p)
        dbp[p] = bpre.data()[s * e3_ * plane + p] > 0.0 ? g[e1_ * plane + p] : 0.0;
    }

    LayerCache ce1, ce3, csq;
    ce1.saved = {z};
    ce3.saved = {z};
    csq.saved = {x};

    std::vector<Tensor> g_sq, g_e1, g_e3;
    Tensor dz1 = expand1_.backward(da, ce1, &g_e1);
    Tensor dz3 = expand3_.backward(db, ce3, &g_e3);
    for (size_t i = 0; i < dz1.numel(); ++i) {
      double g = dz1[i] + dz3[i];
      dz1[i] = zpre[i] > 0.0 ? g : 0.0;
    }
    Tensor dx = squeeze_.backward(dz1, csq, &g_sq);

    for (auto& t : g_sq) param_grads->push_back(std::move(t));
    for (auto& t : g_e1) param_grads->push_back(std::move(t));
    for (auto& t : g_e3) param_grads->push_back(std::move(t));
    return dx;
  }

  void collect_params(std::vector<ParamRef>& out) override {
    std::vector<ParamRef> tmp;
    squeeze_.collect_params(tmp);
    for (auto& p : tmp) out.push_back({"squeeze." + p.name, p.tensor});
    tmp.clear();
    expand1_.collect_params(tmp);
    for (auto& p : tmp) out.push_back({"expand1." + p.name, p.tensor});
    tmp.clear();
    expand3_.collect_params(tmp);
    for (auto& p : tmp) out.push_back({"expand3." + p.name, p.tensor});
  }

  size_t weight_count() const override {
    return squeeze_.weight_count() + expand1_.weight_count() + expand3_.weight_count();
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    auto sq = squeeze_.output_shape(in);
    size_t f = squeeze_.flop_count(in) + detail::sample_numel(sq);
    f += expand1_.flop_count(sq) + expand3_.flop_count(sq);
    auto out = output_shape(in);
    f += detail::sample_numel(out);
    return f;
  }

  void init_params(SeededRng& rng) override {
    squeeze_.init_params(rng);
    expand1_.init_params(rng);
    expand3_.init_params(rng);
  }

 private:
  size_t in_, s_, e1_, e3_;
  Conv2dLayer squeeze_, expand1_, expand3_;
};

// ---------------------------------------------------------------------------
// Separable low-rank convolution: per (out, in) kernel slice the original
// kh x kw filter is replaced by `rank` (kh x 1, 1 x kw) vector pairs applied
// as two stacked 1-D convolution stages. Stride 1 only.
// ---------------------------------------------------------------------------
class LowRankConv2dLayer : public Layer {
 public:
  LowRankConv2dLayer(size_t in_channels, size_t out_channels, size_t kh, size_t kw, size_t rank,
                     size_t pad_h, size_t pad_w, bool has_bias = true)
      : cin_(in_channels),
        cout_(out_channels),
        kh_(kh),
        kw_(kw),
        rank_(rank),
        ph_(pad_h),
        pw_(pad_w),
        has_bias_(has_bias),
        u_({out_channels, in_channels, rank, kh}),
        v_({out_channels, in_channels, rank, kw}),
        b_(has_bias ? Tensor({out_channels}) : Tensor()) {
    if (rank_ == 0) throw ConfigError("lowrank_conv2d: rank must be >= 1");
    if (rank_ > std::min(kh_, kw_))
      throw ConfigError("lowrank_conv2d: rank exceeds min kernel dim");
  }

  LayerKind kind() const override { return LayerKind::lowrank_conv2d; }
  size_t in_channels() const { return cin_; }
  size_t out_channels() const { return cout_; }
  size_t kernel_h() const { return kh_; }
  size_t kernel_w() const { return kw_; }
  size_t rank() const { return rank_; }
  Tensor& vertical_factors() { return u_; }
  Tensor& horizontal_factors() { return v_; }
  const Tensor& vertical_factors() const { return u_; }
  const Tensor& horizontal_factors() const { return v_; }
  Tensor& bias() { return b_; }
  const Tensor& bias() const { return b_; }

  std::string describe() const override {
    return "lowrank_conv2d in=" + std::to_string(cin_) + " out=" + std::to_string(cout_) +
           " kh=" + std::to_string(kh_) + " kw=" + std::to_string(kw_) +
           " rank=" + std::to_string(rank_) + " ph=" + std::to_string(ph_) +
           " pw=" + std::to_string(pw_) + " bias=" + (has_bias_ ? "1" : "0");
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<LowRankConv2dLayer>(*this);
  }

  std::pair<size_t, size_t> out_dims(size_t h, size_t w) const {
    const long long ho = static_cast<long long>(h) + 2 * ph_ - kh_ + 1;
    const long long wo = static_cast<long long>(w) + 2 * pw_ - kw_ + 1;
    if (ho <= 0 || wo <= 0) throw ConfigError("lowrank_conv2d: non-positive output dims");
    return {static_cast<size_t>(ho), static_cast<size_t>(wo)};
  }

  std::vector<size_t> output_shape(const std::vector<size_t>& in) const override {
    detail::require_rank(in, 3, "lowrank_conv2d");
    if (in[0] != cin_) throw ShapeError("lowrank_conv2d: channel mismatch");
    const auto [ho, wo] = out_dims(in[1], in[2]);
    return {cout_, ho, wo};
  }

  Tensor forward(const Tensor& x, LayerCache* cache) const override {
    const size_t m = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [ho, wo] = out_dims(h, w);
    Tensor y({m, cout_, ho, wo});
    std::vector<double> t(ho * w);
    for (size_t s = 0; s < m; ++s)
      for (size_t o = 0; o < cout_; ++o) {
        double* yp = y.data() + ((s * cout_ + o) * ho * wo);
        if (has_bias_) std::fill(yp, yp + ho * wo, b_[o]);
        for (size_t c = 0; c < cin_; ++c) {
          const double* xp = x.data() + ((s * cin_ + c) * h * w);
          for (size_t i = 0; i < rank_; ++i) {
            vertical_pass(xp, h, w, uf(o, c, i), t.data(), ho);
            horizontal_accumulate(t.data(), ho, w, vf(o, c, i), yp, wo);
          }
        }
      }
    if (cache) cache->saved = {x};
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::vector<Tensor>* param_grads) const override {
    const Tensor& x = cache.saved.at(0);
    const size_t m = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [ho, wo] = out_dims(h, w);

    Tensor du({cout_, cin_, rank_, kh_});
    Tensor dv({cout_, cin_, rank_, kw_});
    Tensor db = has_bias_ ? Tensor({cout_}) : Tensor();
    Tensor dx({m, cin_, h, w});

    std::vector<double> t(ho * w), dt(ho * w);
    for (size_t s = 0; s < m; ++s)
      for (size_t o = 0; o < cout_; ++o) {
        const double* gp = grad_out.data() + ((s * cout_ + o) * ho * wo);
        if (has_bias_) {
          double acc = 0.0;
          for (size_t p = 0; p < ho * wo; ++p) acc += gp[p];
          db[o] += acc;
        }
        for (size_t c = 0; c < cin_; ++c) {
          const double* xp = x.data() + ((s * cin_ + c) * h * w);
          double* dxp = dx.data() + ((s * cin_ + c) * h * w);
          for (size_t i = 0; i < rank_; ++i) {
            const double* uv = uf(o, c, i);
            const double* vv = vf(o, c, i);
            double* duv = du.data() + (((o * cin_ + c) * rank_ + i) * kh_);
            double* dvv = dv.data() + (((o * cin_ + c) * rank_ + i) * kw_);

            vertical_pass(xp, h, w, uv, t.data(), ho);

            // dV[e] += sum_{p,q'} g[p,q'] * tpad[p, q'+e]
            for (size_t e = 0; e < kw_; ++e) {
              double acc = 0.0;
              for (size_t p = 0; p < ho; ++p) {
                const double* gr = gp + p * wo;
                const double* tr = t.data() + p * w;
                for (size_t q = 0; q < wo; ++q) {
                  const long long qq = static_cast<long long>(q + e) - static_cast<long long>(pw_);
                  if (qq >= 0 && qq < static_cast<long long>(w)) acc += gr[q] * tr[qq];
                }
              }
              dvv[e] += acc;
            }

            // dt[p,q] = sum_e V[e] * g[p, q - e + pw] (valid output cols)
            std::fill(dt.begin(), dt.end(), 0.0);
            for (size_t p = 0; p < ho; ++p) {
              const double* gr = gp + p * wo;
              double* dtr = dt.data() + p * w;
              for (size_t e = 0; e < kw_; ++e) {
                const double ve = vv[e];
                if (ve == 0.0) continue;
                for (size_t q2 = 0; q2 < wo; ++q2) {
                  const long long q = static_cast<long long>(q2 + e) - static_cast<long long>(pw_);
                  if (q >= 0 && q < static_cast<long long>(w)) dtr[q] += ve * gr[q2];
                }
              }
            }

            // dU[a] += sum_{p,q} dt[p,q] * xpad[p+a, q]; dx accumulates U[a]*dt
            for (size_t a = 0; a < kh_; ++a) {
              const double ua = uv[a];
              double acc = 0.0;
              for (size_t p = 0; p < ho; ++p) {
                const long long pp = static_cast<long long>(p + a) - static_cast<long long>(ph_);
                if (pp < 0 || pp >= static_cast<long long>(h)) continue;
                const double* dtr = dt.data() + p * w;
                const double* xr = xp + static_cast<size_t>(pp) * w;
                double* dxr = dxp + static_cast<size_t>(pp) * w;
                for (size_t q = 0; q < w; ++q) {
                  acc += dtr[q] * xr[q];
                  dxr[q] += ua * dtr[q];
                }
              }
              duv[a] += acc;
            }
          }
        }
      }

    param_grads->push_back(std::move(du));
    param_grads->push_back(std::move(dv));
    if (has_bias_) param_grads->push_back(std::move(db));
    return dx;
  }

  void collect_params(std::vector<ParamRef>& out) override {
    out.push_back({"U", &u_});
    out.push_back({"V", &v_});
    if (has_bias_) out.push_back({"b", &b_});
  }

  size_t weight_count() const override {
    return u_.numel() + v_.numel() + (has_bias_ ? b_.numel() : 0);
  }

  size_t flop_count(const std::vector<size_t>& in) const override {
    const auto [ho, wo] = out_dims(in[1], in[2]);
    return 2 * ho * wo * cout_ * (cin_ * rank_ * (kh_ + kw_) + (has_bias_ ? 1 : 0));
  }

  void init_params(SeededRng& rng) override {
    detail::glorot_fill(u_, cin_ * kh_ * kw_, cout_ * kh_ * kw_, rng);
    detail::glorot_fill(v_, cin_ * kh_ * kw_, cout_ * kh_ * kw_, rng);
    if (has_bias_) std::fill(b_.values().begin(), b_.values().end(), 0.0);
  }

 private:
  const double* uf(size_t o, size_t c, size_t i) const {
    return u_.data() + (((o * cin_ + c) * rank_ + i) * kh_);
  }
  const double* vf(size_t o, size_t c, size_t i) const {
    return v_.data() + (((o * cin_ + c) * rank_ + i) * kw_);
  }

  // t[p, q] = sum_a u[a] * xpad[p + a, q], p in [0, ho), q in [0, w)
  void vertical_pass(const double* xp, size_t h, size_t w, const double* u, double* t,
                     size_t ho) const {
    std::fill(t, t + ho * w, 0.0);
    for (size_t p = 0; p < ho; ++p) {
      double* tr = t + p * w;
      for (size_t a = 0; a < kh_; ++a) {
        const long long pp = static_cast<long long>(p + a) - static_cast<long long>(ph_);
        if (pp < 0 || pp >= static_cast<long long>(h)) continue;
        const double ua = u[a];
        const double* xr = xp + static_cast<size_t>(pp) * w;
        for (size_t q = 0; q < w; ++q) tr[q] += ua * xr[q];
      }
    }
  }

  // y[p, q'] += sum_e v[e] * tpad[p, q' + e], q' in [0, wo)
  void horizontal_accumulate(const double* t, size_t ho, size_t w, const double* v, double* y,
                             size_t wo) const {
    for (size_t p = 0; p < ho; ++p) {
      const double* tr = t + p * w;
      double* yr = y + p * wo;
      for (size_t e = 0; e < kw_; ++e) {
        const double ve = v[e];
        if (ve == 0.0) continue;
        for (size_t q = 0; q < wo; ++q) {
          const long long qq = static_cast<long long>(q + e) - static_cast<long long>(pw_);
          if (qq >= 0 && qq < static_cast<long long>(w)) yr[q] += ve * tr[qq];
        }
      }
    }
  }

  size_t cin_, cout_, kh_, kw_, rank_, ph_, pw_;
  bool has_bias_;
  Tensor u_, v_, b_;
};

}  // namespace nncomp
