#pragma once

#include <cmath>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over an externally owned parameter vector. State slots are allocated
// lazily on the first step and keyed by position, so the same parameter list
// (same order, same shapes) must be passed every step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  size_t steps() const { return t_; }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
      throw StateError("adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const Tensor* p : params) {
        m_.emplace_back(Tensor::zeros_like(*p));
        v_.emplace_back(Tensor::zeros_like(*p));
      }
    } else if (m_.size() != params.size()) {
      throw StateError("adam: parameter count changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (!p.same_shape(g))
        throw ShapeError("adam: gradient shape mismatch at slot " + std::to_string(i));
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (size_t j = 0; j < p.numel(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  AdamConfig cfg_;
  size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace nncomp
