#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/loss.hpp"
#include "nncomp/train.hpp"

namespace nncomp {

// Mean of the frozen teachers' outputs on a batch.
inline Tensor ensemble_forward(const std::vector<const ModelGraph*>& teachers, const Tensor& x) {
  if (teachers.empty()) throw ConfigError("distill: no teachers");
  Tensor out = teachers[0]->forward(x);
  for (size_t t = 1; t < teachers.size(); ++t) {
    Tensor o = teachers[t]->forward(x);
    if (!o.same_shape(out)) throw ShapeError("distill: teacher output shapes disagree");
    for (size_t i = 0; i < out.numel(); ++i) out[i] += o[i];
  }
  const double inv = 1.0 / static_cast<double>(teachers.size());
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  return out;
}

namespace detail {

// Soft-target loss against teacher outputs. For bce training this is the KL
// divergence (cross entropy minus teacher entropy) so a student matching its
// teacher scores exactly 0; for mse it is the plain squared error. Gradients
// equal the base loss gradients either way.
inline LossResult soft_loss(LossKind kind, const Tensor& pred, const Tensor& teacher) {
  if (kind == LossKind::mse) return mse_loss(pred, teacher);
  LossResult r = bce_loss(pred, teacher);
  double entropy = 0.0;
  for (size_t i = 0; i < teacher.numel(); ++i) {
    const double t = std::min(std::max(teacher[i], kBceClamp), 1.0 - kBceClamp);
    entropy -= t * std::log(t) + (1.0 - t) * std::log(1.0 - t);
  }
  r.value -= entropy / static_cast<double>(teacher.numel());
  return r;
}

}  // namespace detail

// Knowledge distillation: trains the student on
//   lambda * loss(student, teacher) + (1 - lambda) * loss(student, target).
// Teachers stay frozen; an ensemble teacher is the mean of member outputs.
// lambda 0 or 1 drops the unused term entirely, so lambda=0 reproduces the
// plain training trajectory bit for bit under the same seed.
inline TrainStats distill_train(const std::vector<const ModelGraph*>& teachers,
                                ModelGraph& student, const Dataset& train, const Dataset& val,
                                double lambda, const TrainSchedule& sched, SeededRng& rng) {
  if (teachers.empty()) throw ConfigError("distill: no teachers");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("distill: lambda must be in [0,1]");
  for (const ModelGraph* t : teachers) {
    if (t->input_shape() != student.input_shape())
      throw ConfigError("distill: teacher/student input shapes differ");
    if (t->output_shape() != student.output_shape())
      throw ConfigError("distill: teacher/student output shapes differ");
  }

  const LossKind kind = sched.loss;
  BatchLossFn loss_fn = [&teachers, lambda, kind](const Tensor& pred, const Tensor& input,
                                                  const Tensor& target) {
    if (lambda == 0.0) return compute_loss(kind, pred, target);
    const Tensor tout = ensemble_forward(teachers, input);
    LossResult soft = detail::soft_loss(kind, pred, tout);
    if (lambda == 1.0) return soft;
    LossResult hard = compute_loss(kind, pred, target);
    LossResult mixed;
    mixed.value = lambda * soft.value + (1.0 - lambda) * hard.value;
    mixed.grad = soft.grad;
    for (size_t i = 0; i < mixed.grad.numel(); ++i)
      mixed.grad[i] = lambda * soft.grad[i] + (1.0 - lambda) * hard.grad[i];
    mixed.clamped = soft.clamped + hard.clamped;
    return mixed;
  };

  return train_core(student, train, val, sched, rng, loss_fn);
}

// Convenience overload for a single teacher.
inline TrainStats distill_train(const ModelGraph& teacher, ModelGraph& student,
                                const Dataset& train, const Dataset& val, double lambda,
                                const TrainSchedule& sched, SeededRng& rng) {
  std::vector<const ModelGraph*> ts{&teacher};
  return distill_train(ts, student, train, val, lambda, sched, rng);
}

}  // namespace nncomp
