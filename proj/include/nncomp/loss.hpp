#pragma once

#include <cmath>
#include <string>

#include "nncomp/error.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

enum class LossKind { mse, bce };

inline const char* loss_kind_name(LossKind k) {
  return k == LossKind::mse ? "mse" : "bce";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce") return LossKind::bce;
  throw ConfigError("unknown loss kind '" + s + "'");
}

// value is the mean over every element of the batch; grad matches that
// normalization. clamped counts predictions pulled into (0,1) for bce.
struct LossResult {
  double value = 0.0;
  Tensor grad;
  size_t clamped = 0;
};

inline LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw ShapeError("mse: prediction (" + pred.shape_string() + ") vs target (" +
                     target.shape_string() + ")");
  LossResult r;
  r.grad = Tensor(pred.shape());
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double acc = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
    r.grad[i] = 2.0 * d * inv;
  }
  r.value = acc * inv;
  return r;
}

inline constexpr double kBceClamp = 1e-12;

inline LossResult bce_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw ShapeError("bce: prediction (" + pred.shape_string() + ") vs target (" +
                     target.shape_string() + ")");
  LossResult r;
  r.grad = Tensor(pred.shape());
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double acc = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    double y = pred[i];
    if (y < kBceClamp) {
      y = kBceClamp;
      ++r.clamped;
    } else if (y > 1.0 - kBceClamp) {
      y = 1.0 - kBceClamp;
      ++r.clamped;
    }
    const double t = target[i];
    acc -= t * std::log(y) + (1.0 - t) * std::log(1.0 - y);
    r.grad[i] = (y - t) / (y * (1.0 - y)) * inv;
  }
  r.value = acc * inv;
  return r;
}

inline LossResult compute_loss(LossKind kind, const Tensor& pred, const Tensor& target) {
  return kind == LossKind::mse ? mse_loss(pred, target) : bce_loss(pred, target);
}

}  // namespace nncomp
