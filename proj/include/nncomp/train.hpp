#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/loss.hpp"
#include "nncomp/optimizer.hpp"
#include "nncomp/rng.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

struct Dataset {
  Tensor inputs;
  Tensor targets;

  size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }

  void check() const {
    if (inputs.empty() || targets.empty()) throw DataError("dataset: empty tensors");
    if (inputs.dim(0) != targets.dim(0))
      throw DataError("dataset: " + std::to_string(inputs.dim(0)) + " inputs vs " +
                      std::to_string(targets.dim(0)) + " targets");
  }
};

struct TrainSchedule {
  double lr = 0.001;
  size_t batch_size = 1000;
  size_t max_epochs = 200;
  size_t patience = 10;
  double min_rel_improve = 1e-4;
  // Rows backpropagated at a time inside a batch; 0 means the whole batch.
  size_t micro_batch = 0;
  LossKind loss = LossKind::mse;
  bool verbose = false;
};

// Early stopping on relative validation-loss improvement: stop after
// `patience` consecutive evaluations that each improve on the best seen by
// less than `min_rel_improve` (relative).
class ConvergenceTracker {
 public:
  ConvergenceTracker(double min_rel_improve, size_t patience)
      : min_rel_improve_(min_rel_improve), patience_(patience) {}

  // Returns true when training should stop.
  bool update(double val_loss) {
    if (!have_best_) {
      best_ = val_loss;
      have_best_ = true;
      return false;
    }
    const double denom = std::max(std::abs(best_), 1e-300);
    const double rel = (best_ - val_loss) / denom;
    if (rel >= min_rel_improve_) {
      stale_ = 0;
    } else {
      ++stale_;
    }
    if (val_loss < best_) best_ = val_loss;
    return stale_ >= patience_;
  }

  double best() const { return best_; }
  size_t stale() const { return stale_; }

 private:
  double min_rel_improve_;
  size_t patience_;
  double best_ = 0.0;
  bool have_best_ = false;
  size_t stale_ = 0;
};

struct TrainStats {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  size_t epochs = 0;
  size_t bce_clamped = 0;
  bool early_stopped = false;
};

// Loss over one forward chunk. `input` is the raw chunk fed to the model so
// providers that need auxiliary signals (e.g. a teacher) can recompute them.
using BatchLossFn =
    std::function<LossResult(const Tensor& pred, const Tensor& input, const Tensor& target)>;

// Called after every optimizer step, after masks are re-applied.
using PostStepHook = std::function<void(ModelGraph&)>;

// Called after every gradient accumulation, before the optimizer step. Takes
// the flat parameter gradients; may rewrite them.
using GradHook = std::function<void(ModelGraph&, std::vector<Tensor>&)>;

namespace detail {

inline Tensor gather_rows(const Tensor& src, const std::vector<uint32_t>& order, size_t first,
                          size_t count) {
  std::vector<size_t> shape = src.shape();
  shape[0] = count;
  Tensor out(shape);
  const size_t row = src.numel() / src.dim(0);
  for (size_t i = 0; i < count; ++i)
    std::copy_n(src.data() + static_cast<size_t>(order[first + i]) * row, row,
                out.data() + i * row);
  return out;
}

inline std::vector<uint32_t> shuffled_indices(size_t n, SeededRng& rng) {
  std::vector<uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  for (size_t i = n; i > 1; --i) {
    const size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

// Mean loss over a dataset, evaluated in chunks without gradients.
inline double evaluate_loss(const ModelGraph& model, const Dataset& data,
                            const BatchLossFn& loss_fn, size_t chunk = 1000) {
  data.check();
  const size_t n = data.size();
  if (chunk == 0) chunk = n;
  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  double acc = 0.0;
  for (size_t i0 = 0; i0 < n; i0 += chunk) {
    const size_t c = std::min(chunk, n - i0);
    Tensor in = detail::gather_rows(data.inputs, order, i0, c);
    Tensor tg = detail::gather_rows(data.targets, order, i0, c);
    Tensor pred = model.forward(in);
    LossResult r = loss_fn(pred, in, tg);
    acc += r.value * static_cast<double>(c);
  }
  return acc / static_cast<double>(n);
}

// Generic training loop: seeded epoch shuffles, micro-batched gradient
// accumulation, Adam over the given parameter slots, masks kept exact after
// every step. `loss_fn` defines the training objective; validation tracks the
// same objective. On exit the model holds the weights of the epoch with the
// lowest validation loss, not necessarily the last one.
inline TrainStats train_core(ModelGraph& model, const Dataset& train, const Dataset& val,
                             const TrainSchedule& sched, SeededRng& rng,
                             const BatchLossFn& loss_fn, const GradHook& grad_hook = {},
                             const PostStepHook& post_step = {}) {
  train.check();
  val.check();
  if (sched.batch_size == 0) throw ConfigError("train: batch_size must be positive");

  auto prefs = model.params();
  std::vector<Tensor*> pslots;
  for (auto& p : prefs) pslots.push_back(p.tensor);

  Adam opt({sched.lr});
  TrainStats stats;
  ConvergenceTracker tracker(sched.min_rel_improve, sched.patience);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;

  const size_t n = train.size();
  const size_t micro = sched.micro_batch == 0 ? sched.batch_size : sched.micro_batch;

  for (size_t epoch = 0; epoch < sched.max_epochs; ++epoch) {
    auto order = detail::shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t b0 = 0; b0 < n; b0 += sched.batch_size) {
      const size_t bn = std::min(sched.batch_size, n - b0);
      std::vector<Tensor> acc_grads;
      double batch_loss = 0.0;
      for (size_t c0 = 0; c0 < bn; c0 += micro) {
        const size_t cn = std::min(micro, bn - c0);
        Tensor in = detail::gather_rows(train.inputs, order, b0 + c0, cn);
        Tensor tg = detail::gather_rows(train.targets, order, b0 + c0, cn);
        std::vector<LayerCache> caches;
        Tensor pred = model.forward(in, &caches);
        LossResult r = loss_fn(pred, in, tg);
        stats.bce_clamped += r.clamped;
        const double scale = static_cast<double>(cn) / static_cast<double>(bn);
        batch_loss += r.value * scale;
        if (scale != 1.0)
          for (double& g : r.grad.values()) g *= scale;
        std::vector<Tensor> grads = model.backward(r.grad, caches);
        if (acc_grads.empty()) {
          acc_grads = std::move(grads);
        } else {
          for (size_t i = 0; i < grads.size(); ++i)
            for (size_t j = 0; j < grads[i].numel(); ++j) acc_grads[i][j] += grads[i][j];
        }
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      model.mask_gradients(acc_grads);
      if (grad_hook) grad_hook(model, acc_grads);
      opt.step(pslots, acc_grads);
      model.apply_masks();
      if (post_step) post_step(model);
      epoch_loss += batch_loss;
      ++batches;
    }
    stats.train_loss.push_back(epoch_loss / static_cast<double>(batches));

    const double vloss = evaluate_loss(model, val, loss_fn, micro);
    stats.val_loss.push_back(vloss);
    stats.epochs = epoch + 1;
    if (vloss < best_val) {
      best_val = vloss;
      best_params.clear();
      for (Tensor* t : pslots) best_params.push_back(*t);
    }
    if (sched.verbose)
      std::fprintf(stderr, "epoch %zu train %.6g val %.6g\n", epoch + 1,
                   stats.train_loss.back(), vloss);
    if (tracker.update(vloss)) {
      stats.early_stopped = true;
      break;
    }
  }
  if (!best_params.empty())
    for (size_t i = 0; i < pslots.size(); ++i) *pslots[i] = std::move(best_params[i]);
  return stats;
}

// Ordinary supervised training with the schedule's loss kind.
inline TrainStats train_model(ModelGraph& model, const Dataset& train, const Dataset& val,
                              const TrainSchedule& sched, SeededRng& rng) {
  const LossKind kind = sched.loss;
  return train_core(model, train, val, sched, rng,
                    [kind](const Tensor& pred, const Tensor&, const Tensor& tg) {
                      return compute_loss(kind, pred, tg);
                    });
}

}  // namespace nncomp
