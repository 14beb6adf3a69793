#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

// Codebook quantization state attached to one parameter tensor. When present,
// every tensor value equals codebook[indices[i]]. A tensor carrying a prune
// mask gets one codebook entry pinned at exactly 0 (zero_index); masked
// positions index that entry and only that entry.
struct QuantInfo {
  uint8_t bits = 0;
  int32_t zero_index = -1;
  std::vector<double> codebook;
  std::vector<uint32_t> indices;

  bool present() const { return !codebook.empty(); }
};

// Sequential model: layers plus per-parameter compression state (prune masks
// and quantization codebooks), addressed by flat parameter index in layer
// order. Forward/backward take externally owned caches so a const model can
// be evaluated from several call sites without shared mutable state.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::string name, std::vector<size_t> input_shape)
      : name_(std::move(name)), input_shape_(std::move(input_shape)) {}

  ModelGraph(const ModelGraph& other) { copy_from(other); }
  ModelGraph& operator=(const ModelGraph& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  ModelGraph(ModelGraph&&) = default;
  ModelGraph& operator=(ModelGraph&&) = default;

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  const std::vector<size_t>& input_shape() const { return input_shape_; }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  // Swapping a layer shifts the flat parameter layout, so attached masks and
  // codebooks must be gone before a structural edit.
  void replace_layer(size_t i, std::unique_ptr<Layer> layer) {
    if (i >= layers_.size()) throw StateError("replace_layer: bad layer index");
    if (any_mask() || any_quant())
      throw StateError("replace_layer: detach masks and codebooks first");
    layers_[i] = std::move(layer);
  }

  size_t layer_count() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_.at(i); }
  const Layer& layer(size_t i) const { return *layers_.at(i); }

  // Validates shape propagation and returns the per-sample output shape.
  std::vector<size_t> validate() const {
    if (layers_.empty()) throw ConfigError("model '" + name_ + "' has no layers");
    std::vector<size_t> shape = input_shape_;
    for (size_t i = 0; i < layers_.size(); ++i) {
      try {
        shape = layers_[i]->output_shape(shape);
      } catch (const Error& e) {
        throw ShapeError("model '" + name_ + "' layer " + std::to_string(i) + " (" +
                         layer_kind_name(layers_[i]->kind()) + "): " + e.what());
      }
    }
    return shape;
  }

  std::vector<size_t> output_shape() const { return validate(); }

  // Per-sample input shape of each layer, in order.
  std::vector<std::vector<size_t>> layer_input_shapes() const {
    std::vector<std::vector<size_t>> shapes;
    std::vector<size_t> shape = input_shape_;
    for (const auto& l : layers_) {
      shapes.push_back(shape);
      shape = l->output_shape(shape);
    }
    return shapes;
  }

  // Flat parameter list in layer order; names are "layer<i>.<suffix>".
  std::vector<ParamRef> params() const {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
      std::vector<ParamRef> local;
      const_cast<Layer&>(*layers_[i]).collect_params(local);
      for (auto& p : local)
        out.push_back({"layer" + std::to_string(i) + "." + p.name, p.tensor});
    }
    return out;
  }

  size_t param_count() const { return params().size(); }

  size_t weight_count() const {
    size_t n = 0;
    for (const auto& l : layers_) n += l->weight_count();
    return n;
  }

  void init_params(SeededRng& rng) {
    for (auto& l : layers_) l->init_params(rng);
  }

  Tensor forward(const Tensor& batch, std::vector<LayerCache>* caches = nullptr) const {
    if (batch.ndim() < 1) throw ShapeError("forward: empty batch tensor");
    if (caches) {
      caches->clear();
      caches->resize(layers_.size());
    }
    Tensor cur = batch;
    for (size_t i = 0; i < layers_.size(); ++i) {
      try {
        cur = layers_[i]->forward(cur, caches ? &(*caches)[i] : nullptr);
      } catch (const Error& e) {
        throw ShapeError("model '" + name_ + "' layer " + std::to_string(i) + " (" +
                         layer_kind_name(layers_[i]->kind()) + "): " + e.what());
      }
    }
    return cur;
  }

  // Returns parameter gradients aligned with params(). grad_out is the loss
  // gradient wrt the forward output for the same batch/caches.
  std::vector<Tensor> backward(const Tensor& grad_out,
                               const std::vector<LayerCache>& caches,
                               Tensor* grad_input = nullptr) const {
    if (caches.size() != layers_.size())
      throw StateError("backward: cache count mismatch");
    std::vector<std::vector<Tensor>> per_layer(layers_.size());
    Tensor g = grad_out;
    for (size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i]->backward(g, caches[i], &per_layer[i]);
    }
    if (grad_input) *grad_input = std::move(g);
    std::vector<Tensor> flat;
    for (auto& v : per_layer)
      for (auto& t : v) flat.push_back(std::move(t));
    return flat;
  }

  // --- prune masks -------------------------------------------------------
  bool has_mask(size_t param_idx) const {
    return param_idx < masks_.size() && !masks_[param_idx].empty();
  }
  const Tensor& mask(size_t param_idx) const { return masks_.at(param_idx); }

  void set_mask(size_t param_idx, Tensor mask) {
    auto ps = params();
    if (param_idx >= ps.size()) throw StateError("set_mask: bad param index");
    if (!mask.same_shape(*ps[param_idx].tensor))
      throw ShapeError("set_mask: mask shape mismatch for " + ps[param_idx].name);
    if (masks_.size() < ps.size()) masks_.resize(ps.size());
    masks_[param_idx] = std::move(mask);
  }

  bool any_mask() const {
    for (const auto& m : masks_)
      if (!m.empty()) return true;
    return false;
  }

  // Forces masked weights to exact zero.
  void apply_masks() {
    if (!any_mask()) return;
    auto ps = params();
    for (size_t i = 0; i < ps.size() && i < masks_.size(); ++i) {
      if (masks_[i].empty()) continue;
      Tensor& t = *ps[i].tensor;
      for (size_t j = 0; j < t.numel(); ++j)
        if (masks_[i][j] == 0.0) t[j] = 0.0;
    }
  }

  // Zeroes gradient entries of masked weights.
  void mask_gradients(std::vector<Tensor>& grads) const {
    if (!any_mask()) return;
    for (size_t i = 0; i < grads.size() && i < masks_.size(); ++i) {
      if (masks_[i].empty()) continue;
      Tensor& g = grads[i];
      for (size_t j = 0; j < g.numel(); ++j)
        if (masks_[i][j] == 0.0) g[j] = 0.0;
    }
  }

  // --- quantization state -------------------------------------------------
  bool has_quant(size_t param_idx) const {
    return param_idx < quant_.size() && quant_[param_idx].present();
  }
  const QuantInfo& quant(size_t param_idx) const { return quant_.at(param_idx); }
  QuantInfo& quant_mutable(size_t param_idx) { return quant_.at(param_idx); }

  void set_quant(size_t param_idx, QuantInfo info) {
    auto ps = params();
    if (param_idx >= ps.size()) throw StateError("set_quant: bad param index");
    if (info.indices.size() != ps[param_idx].tensor->numel())
      throw ShapeError("set_quant: index count mismatch for " + ps[param_idx].name);
    if (quant_.size() < ps.size()) quant_.resize(ps.size());
    quant_[param_idx] = std::move(info);
  }

  void clear_quant() { quant_.clear(); }

  bool any_quant() const {
    for (const auto& q : quant_)
      if (q.present()) return true;
    return false;
  }

  // Rewrites each quantized tensor from its codebook and indices, then
  // re-applies masks so pruned positions stay exactly zero.
  void apply_quant() {
    if (!any_quant()) return;
    auto ps = params();
    for (size_t i = 0; i < ps.size() && i < quant_.size(); ++i) {
      if (!quant_[i].present()) continue;
      Tensor& t = *ps[i].tensor;
      const QuantInfo& q = quant_[i];
      for (size_t j = 0; j < t.numel(); ++j) t[j] = q.codebook[q.indices[j]];
    }
    apply_masks();
  }

  // --- free-text metadata kept with the model file ------------------------
  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

 private:
  void copy_from(const ModelGraph& other) {
    name_ = other.name_;
    input_shape_ = other.input_shape_;
    layers_.clear();
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
    masks_ = other.masks_;
    quant_ = other.quant_;
    metadata_ = other.metadata_;
  }

  std::string name_;
  std::vector<size_t> input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Tensor> masks_;
  std::vector<QuantInfo> quant_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace nncomp
