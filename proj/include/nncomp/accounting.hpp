#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"

namespace nncomp {

// Storage basis for a parameter tensor. `automatic` picks per tensor:
// quantized if a codebook is attached, pruned if a mask is attached,
// otherwise dense32.
enum class StorageRep { dense32, pruned, quantized, automatic };

inline const char* storage_rep_name(StorageRep r) {
  switch (r) {
    case StorageRep::dense32: return "dense32";
    case StorageRep::pruned: return "pruned";
    case StorageRep::quantized: return "quantized";
    case StorageRep::automatic: return "auto";
  }
  return "?";
}

inline StorageRep parse_storage_rep(const std::string& s) {
  if (s == "dense32") return StorageRep::dense32;
  if (s == "pruned") return StorageRep::pruned;
  if (s == "quantized") return StorageRep::quantized;
  if (s == "auto") return StorageRep::automatic;
  throw ConfigError("unknown storage representation '" + s + "'");
}

struct TensorCost {
  std::string name;
  size_t layer_index = 0;
  size_t elements = 0;
  size_t surviving = 0;
  bool has_mask = false;
  uint8_t bits = 0;  // quantized bit width, 0 when not quantized
  StorageRep rep = StorageRep::dense32;
  size_t bytes = 0;
};

struct LayerCost {
  size_t index = 0;
  std::string kind;
  std::string detail;
  size_t weights = 0;
  size_t flops = 0;
  size_t bytes_dense32 = 0;
  size_t bytes_current = 0;
  size_t surviving = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::vector<TensorCost> tensors;
  size_t total_weights = 0;
  size_t total_flops = 0;
  size_t bytes_dense32 = 0;
  size_t bytes_current = 0;
  double saving = 0.0;
  double remaining_overall = 1.0;
  // 1 - (stored index bits)/(32 bits per weight) over quantized tensors,
  // ignoring codebooks; the basis the percentage-saving figures use.
  double index_only_saving = 0.0;

  std::string to_csv() const {
    std::string out = "layer,kind,weights,flops,bytes_dense32,bytes_current,saving\n";
    char line[256];
    for (const auto& l : layers) {
      const double s = l.bytes_dense32 == 0
                           ? 0.0
                           : 1.0 - static_cast<double>(l.bytes_current) /
                                       static_cast<double>(l.bytes_dense32);
      std::snprintf(line, sizeof line, "%zu,%s,%zu,%zu,%zu,%zu,%.6f\n", l.index,
                    l.kind.c_str(), l.weights, l.flops, l.bytes_dense32, l.bytes_current, s);
      out += line;
    }
    std::snprintf(line, sizeof line, "total,,%zu,%zu,%zu,%zu,%.6f\n", total_weights,
                  total_flops, bytes_dense32, bytes_current, saving);
    out += line;
    return out;
  }
};

// Pure-arithmetic saving of a B-bit index stream versus 32-bit dense.
inline double index_only_saving(size_t bits) {
  return 1.0 - static_cast<double>(bits) / 32.0;
}

inline size_t packed_index_bytes(size_t elements, size_t bits) {
  return (elements * bits + 7) / 8;
}

inline size_t codebook_bytes(size_t bits) {
  return 4u * (size_t(1) << bits);
}

// Storage bytes of one parameter tensor under a representation.
inline size_t tensor_storage_bytes(size_t elements, size_t surviving, bool has_mask,
                                   const QuantInfo* quant, StorageRep rep) {
  StorageRep eff = rep;
  if (rep == StorageRep::automatic)
    eff = quant ? StorageRep::quantized : (has_mask ? StorageRep::pruned : StorageRep::dense32);
  switch (eff) {
    case StorageRep::dense32:
      return 4 * elements;
    case StorageRep::pruned:
      if (!has_mask) return 4 * elements;
      return (elements + 7) / 8 + 4 * surviving;
    case StorageRep::quantized:
      if (!quant) return 4 * elements;
      // actual codebook size: equals 2^B for a full codebook, smaller when a
      // tensor had fewer distinct values than requested clusters
      return 4 * quant->codebook.size() + packed_index_bytes(elements, quant->bits);
    case StorageRep::automatic:
      break;
  }
  throw StateError("tensor_storage_bytes: unresolved representation");
}

inline CostReport cost_report(const ModelGraph& model, StorageRep rep = StorageRep::automatic) {
  CostReport rpt;
  const auto in_shapes = model.layer_input_shapes();
  size_t flat = 0;
  size_t total_surviving = 0;
  size_t quant_elements = 0;
  size_t quant_index_bits = 0;
  for (size_t li = 0; li < model.layer_count(); ++li) {
    // collect_params is non-const by signature only; the clone keeps `model` untouched
    Layer& layer = const_cast<Layer&>(model.layer(li));
    LayerCost lc;
    lc.index = li;
    lc.kind = layer_kind_name(layer.kind());
    lc.detail = layer.describe();
    lc.weights = layer.weight_count();
    lc.flops = layer.flop_count(in_shapes[li]);

    std::vector<ParamRef> prefs;
    layer.collect_params(prefs);
    for (const auto& p : prefs) {
      TensorCost tc;
      tc.name = "layer" + std::to_string(li) + "." + p.name;
      tc.layer_index = li;
      tc.elements = p.tensor->numel();
      tc.has_mask = model.has_mask(flat);
      tc.surviving = tc.elements;
      if (tc.has_mask) {
        size_t nz = 0;
        const Tensor& m = model.mask(flat);
        for (size_t i = 0; i < m.numel(); ++i)
          if (m[i] != 0.0) ++nz;
        tc.surviving = nz;
      }
      const QuantInfo* q = model.has_quant(flat) ? &model.quant(flat) : nullptr;
      if (q) {
        tc.bits = q->bits;
        quant_elements += tc.elements;
        quant_index_bits += tc.elements * q->bits;
      }
      tc.rep = rep;
      tc.bytes = tensor_storage_bytes(tc.elements, tc.surviving, tc.has_mask, q, rep);
      lc.bytes_dense32 += 4 * tc.elements;
      lc.bytes_current += tc.bytes;
      lc.surviving += tc.surviving;
      total_surviving += tc.surviving;
      rpt.tensors.push_back(std::move(tc));
      ++flat;
    }
    rpt.total_weights += lc.weights;
    rpt.total_flops += lc.flops;
    rpt.bytes_dense32 += lc.bytes_dense32;
    rpt.bytes_current += lc.bytes_current;
    rpt.layers.push_back(std::move(lc));
  }
  rpt.saving = rpt.bytes_dense32 == 0
                   ? 0.0
                   : 1.0 - static_cast<double>(rpt.bytes_current) /
                               static_cast<double>(rpt.bytes_dense32);
  rpt.remaining_overall = rpt.total_weights == 0
                              ? 1.0
                              : static_cast<double>(total_surviving) /
                                    static_cast<double>(rpt.total_weights);
  rpt.index_only_saving =
      quant_elements == 0
          ? 0.0
          : 1.0 - static_cast<double>(quant_index_bits) /
                      (32.0 * static_cast<double>(quant_elements));
  return rpt;
}

struct SparsityEntry {
  std::string name;
  size_t elements = 0;
  size_t surviving = 0;
  double remaining = 1.0;
};

struct SparsityReport {
  std::vector<SparsityEntry> tensors;
  double overall = 1.0;
};

inline SparsityReport sparsity_report(const ModelGraph& model) {
  SparsityReport rpt;
  auto prefs = model.params();
  size_t total = 0, surviving = 0;
  for (size_t i = 0; i < prefs.size(); ++i) {
    SparsityEntry e;
    e.name = prefs[i].name;
    e.elements = prefs[i].tensor->numel();
    e.surviving = e.elements;
    if (model.has_mask(i)) {
      size_t nz = 0;
      const Tensor& m = model.mask(i);
      for (size_t j = 0; j < m.numel(); ++j)
        if (m[j] != 0.0) ++nz;
      e.surviving = nz;
    }
    e.remaining = e.elements == 0 ? 1.0
                                  : static_cast<double>(e.surviving) /
                                        static_cast<double>(e.elements);
    total += e.elements;
    surviving += e.surviving;
    rpt.tensors.push_back(std::move(e));
  }
  rpt.overall = total == 0 ? 1.0 : static_cast<double>(surviving) / static_cast<double>(total);
  return rpt;
}

}  // namespace nncomp
