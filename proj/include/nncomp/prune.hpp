#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {

enum class PruneGranularity { fine_grained, filter_level };

inline const char* prune_granularity_name(PruneGranularity g) {
  return g == PruneGranularity::fine_grained ? "fine_grained" : "filter_level";
}

inline PruneGranularity parse_prune_granularity(const std::string& s) {
  if (s == "fine_grained" || s == "fine") return PruneGranularity::fine_grained;
  if (s == "filter_level" || s == "filter") return PruneGranularity::filter_level;
  throw ConfigError("unknown prune granularity '" + s + "'");
}

// Layer selector: return true to prune this layer's weight tensors.
using LayerFilter = std::function<bool(const Layer&, size_t layer_index)>;

inline LayerFilter all_layers() {
  return [](const Layer&, size_t) { return true; };
}

inline LayerFilter dense_layers_only() {
  return [](const Layer& l, size_t) { return l.kind() == LayerKind::dense; };
}

struct PruneTensorStat {
  std::string name;
  size_t layer_index = 0;
  size_t elements = 0;
  size_t surviving = 0;
  double remaining = 1.0;
};

struct PruneResult {
  double threshold = 0.0;
  PruneGranularity granularity = PruneGranularity::fine_grained;
  std::vector<PruneTensorStat> tensors;    // weight tensors the filter selected
  size_t total_params = 0;                 // all parameters in the model
  size_t surviving_params = 0;             // with biases / unselected tensors intact
  double overall_remaining = 1.0;          // surviving_params / total_params
  std::vector<std::string> warnings;
};

namespace detail {

inline bool is_bias_param(const std::string& name) {
  if (name == "b") return true;
  const size_t n = name.size();
  return n >= 2 && name[n - 2] == '.' && name[n - 1] == 'b';
}

// Mask for one weight tensor; `kept` returns the number of surviving weights.
inline Tensor magnitude_mask(const Tensor& w, double t, PruneGranularity g,
                             const std::string& name, std::vector<std::string>& warnings,
                             size_t& kept) {
  Tensor mask = Tensor::ones_like(w);
  const size_t n = w.numel();
  if (g == PruneGranularity::fine_grained) {
    for (size_t i = 0; i < n; ++i)
      if (std::fabs(w[i]) < t) mask[i] = 0.0;
  } else {
    // one filter per index along dim 0; zero filters with small L1 norm
    const size_t filters = w.dim(0);
    const size_t per = n / filters;
    for (size_t f = 0; f < filters; ++f) {
      double l1 = 0.0;
      for (size_t i = 0; i < per; ++i) l1 += std::fabs(w[f * per + i]);
      if (l1 < t * static_cast<double>(per))
        for (size_t i = 0; i < per; ++i) mask[f * per + i] = 0.0;
    }
  }

  kept = 0;
  for (size_t i = 0; i < n; ++i)
    if (mask[i] != 0.0) ++kept;
  if (kept == 0) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
      if (std::fabs(w[i]) > std::fabs(w[best])) best = i;
    mask[best] = 1.0;
    kept = 1;
    warnings.push_back("threshold " + std::to_string(t) + " would empty tensor '" + name +
                       "'; keeping its largest-magnitude weight");
  }
  return mask;
}

}  // namespace detail

// Magnitude pruning: attaches masks to the selected layers' weight tensors
// (biases are never pruned) and zeroes the masked coordinates. Existing masks
// are intersected with the new ones, so repeated pruning only removes more.
inline PruneResult prune_magnitude(ModelGraph& model, double t,
                                   PruneGranularity granularity = PruneGranularity::fine_grained,
                                   const LayerFilter& filter = all_layers()) {
  if (!(t >= 0.0)) throw ConfigError("prune threshold must be >= 0");

  PruneResult res;
  res.threshold = t;
  res.granularity = granularity;

  auto params = model.params();
  size_t flat = 0;
  for (size_t li = 0; li < model.layer_count(); ++li) {
    Layer& layer = model.layer(li);
    std::vector<ParamRef> local;
    layer.collect_params(local);
    const bool selected = filter(layer, li);
    for (size_t pi = 0; pi < local.size(); ++pi, ++flat) {
      const ParamRef& p = params[flat];
      if (!selected || detail::is_bias_param(p.name)) continue;

      size_t kept = 0;
      Tensor mask =
          detail::magnitude_mask(*p.tensor, t, granularity, p.name, res.warnings, kept);
      if (model.has_mask(flat)) {
        const Tensor& old = model.mask(flat);
        kept = 0;
        for (size_t i = 0; i < mask.numel(); ++i) {
          mask[i] = (mask[i] != 0.0 && old[i] != 0.0) ? 1.0 : 0.0;
          if (mask[i] != 0.0) ++kept;
        }
        if (kept == 0) {
          // intersection emptied the tensor; fall back to the old mask
          mask = old;
          for (size_t i = 0; i < mask.numel(); ++i)
            if (mask[i] != 0.0) ++kept;
          res.warnings.push_back("mask intersection would empty tensor '" + p.name +
                                 "'; keeping previous mask");
        }
      }
      model.set_mask(flat, std::move(mask));

      PruneTensorStat st;
      st.name = p.name;
      st.layer_index = li;
      st.elements = p.tensor->numel();
      st.surviving = kept;
      st.remaining = static_cast<double>(kept) / static_cast<double>(st.elements);
      res.tensors.push_back(std::move(st));
    }
  }
  model.apply_masks();

  for (size_t i = 0; i < params.size(); ++i) {
    const size_t n = params[i].tensor->numel();
    res.total_params += n;
    if (model.has_mask(i)) {
      const Tensor& m = model.mask(i);
      for (size_t j = 0; j < n; ++j)
        if (m[j] != 0.0) ++res.surviving_params;
    } else {
      res.surviving_params += n;
    }
  }
  res.overall_remaining =
      static_cast<double>(res.surviving_params) / static_cast<double>(res.total_params);
  return res;
}

}  // namespace nncomp
