#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "accounting.hpp"
#include "binio.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace nncomp {

// Model file layout (all integers little-endian):
//   magic "NNCM", version u16
//   manifest_len u32, manifest (UTF-8 text), crc32(manifest) u32
//   one section per parameter tensor, in model.params() order:
//     tag u8 (0 dense32, 1 sparse bitmask, 2 quantized)
//     bits u8 (stored index width; 0 unless quantized)
//     zero_index i32 (pinned codebook entry for masked positions; -1 if none)
//     payload_len u32, payload, crc32(payload) u32
// Payloads:
//   dense32: 4 bytes per value
//   sparse bitmask: ceil(n/8) mask bytes (bit j of byte j/8 = position j kept)
//     followed by surviving values, 4 bytes each, in position order
//   quantized: codebook entries at 4 bytes each (count derived from
//     payload_len), then indices packed big-endian within each byte
// Payload sizes match tensor_storage_bytes for the same representation, so a
// file's section payloads sum to the accounting report's byte total.

constexpr uint16_t kModelVersion = 1;

namespace detail {

constexpr size_t kSectionHeaderBytes = 1 + 1 + 4 + 4;  // tag, bits, zero_index, payload_len
constexpr size_t kSectionCrcBytes = 4;

inline void pack_bits_be(ByteWriter& w, const std::vector<uint32_t>& values, uint8_t bits) {
  uint32_t acc = 0;
  int filled = 0;
  for (uint32_t v : values) {
    for (int i = bits - 1; i >= 0; --i) {
      acc = (acc << 1) | ((v >> i) & 1u);
      if (++filled == 8) {
        w.u8(static_cast<uint8_t>(acc));
        acc = 0;
        filled = 0;
      }
    }
  }
  if (filled) w.u8(static_cast<uint8_t>(acc << (8 - filled)));
}

inline std::vector<uint32_t> unpack_bits_be(const std::string& data, size_t count, uint8_t bits) {
  std::vector<uint32_t> out(count, 0);
  size_t bitpos = 0;
  for (size_t i = 0; i < count; ++i) {
    uint32_t v = 0;
    for (int b = 0; b < bits; ++b, ++bitpos) {
      const uint8_t byte = static_cast<uint8_t>(data[bitpos / 8]);
      v = (v << 1) | ((byte >> (7 - bitpos % 8)) & 1u);
    }
    out[i] = v;
  }
  return out;
}

// Per-tensor representation resolution, identical to tensor_storage_bytes.
inline StorageRep effective_rep(StorageRep rep, bool has_mask, bool has_quant) {
  StorageRep eff = rep;
  if (eff == StorageRep::automatic)
    eff = has_quant ? StorageRep::quantized : (has_mask ? StorageRep::pruned : StorageRep::dense32);
  if (eff == StorageRep::pruned && !has_mask) eff = StorageRep::dense32;
  if (eff == StorageRep::quantized && !has_quant) eff = StorageRep::dense32;
  return eff;
}

inline uint8_t rep_tag(StorageRep eff) {
  switch (eff) {
    case StorageRep::dense32: return 0;
    case StorageRep::pruned: return 1;
    case StorageRep::quantized: return 2;
    case StorageRep::automatic: break;
  }
  throw StateError("rep_tag: unresolved representation");
}

inline std::map<std::string, std::string> parse_kv_tokens(std::istringstream& in,
                                                          const std::string& line) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw DataError("manifest: malformed layer token '" + tok + "' in '" + line + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline size_t kv_num(const std::map<std::string, std::string>& kv, const std::string& key,
                     const std::string& line) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError("manifest: layer line '" + line + "' lacks " + key);
  return static_cast<size_t>(std::stoull(it->second));
}

inline double kv_real(const std::map<std::string, std::string>& kv, const std::string& key,
                      const std::string& line) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError("manifest: layer line '" + line + "' lacks " + key);
  return std::stod(it->second);
}

inline std::vector<size_t> parse_dims(const std::string& s) {
  std::vector<size_t> dims;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, 'x'))
    dims.push_back(static_cast<size_t>(std::stoull(part)));
  return dims;
}

// Inverse of Layer::describe().
inline std::unique_ptr<Layer> layer_from_description(const std::string& line) {
  std::istringstream in(line);
  std::string kind;
  in >> kind;
  if (kind == "relu") return std::make_unique<ActivationLayer>(LayerKind::relu);
  if (kind == "sigmoid") return std::make_unique<ActivationLayer>(LayerKind::sigmoid);
  if (kind == "global_avgpool") return std::make_unique<GlobalAvgPoolLayer>();
  if (kind == "flatten") return std::make_unique<FlattenLayer>();
  const auto kv = parse_kv_tokens(in, line);
  if (kind == "dense")
    return std::make_unique<DenseLayer>(kv_num(kv, "in", line), kv_num(kv, "out", line),
                                        kv_num(kv, "bias", line) != 0);
  if (kind == "conv2d")
    return std::make_unique<Conv2dLayer>(kv_num(kv, "in", line), kv_num(kv, "out", line),
                                         kv_num(kv, "kh", line), kv_num(kv, "kw", line),
                                         kv_num(kv, "stride", line), kv_num(kv, "ph", line),
                                         kv_num(kv, "pw", line), kv_num(kv, "bias", line) != 0);
  if (kind == "lowrank_conv2d")
    return std::make_unique<LowRankConv2dLayer>(
        kv_num(kv, "in", line), kv_num(kv, "out", line), kv_num(kv, "kh", line),
        kv_num(kv, "kw", line), kv_num(kv, "rank", line), kv_num(kv, "ph", line),
        kv_num(kv, "pw", line), kv_num(kv, "bias", line) != 0);
  if (kind == "affine")
    return std::make_unique<AffineLayer>(kv_real(kv, "scale", line), kv_real(kv, "shift", line));
  if (kind == "avgpool") return std::make_unique<AvgPoolLayer>(kv_num(kv, "factor", line));
  if (kind == "upsample") return std::make_unique<UpsampleLayer>(kv_num(kv, "factor", line));
  if (kind == "fire")
    return std::make_unique<FireModule>(kv_num(kv, "in", line), kv_num(kv, "squeeze", line),
                                        kv_num(kv, "e1", line), kv_num(kv, "e3", line));
  if (kind == "reshape") {
    const auto it = kv.find("dims");
    if (it == kv.end()) throw DataError("manifest: layer line '" + line + "' lacks dims");
    return std::make_unique<ReshapeLayer>(parse_dims(it->second));
  }
  throw DataError("manifest: unknown layer kind '" + kind + "'");
}

inline std::string build_manifest(const ModelGraph& model) {
  for (const auto& [k, v] : model.metadata()) {
    if (k.empty() || k.find_first_of(" \t\n") != std::string::npos)
      throw ConfigError("model metadata key '" + k + "' must be non-empty without whitespace");
    if (v.find('\n') != std::string::npos)
      throw ConfigError("model metadata value for '" + k + "' must not contain newlines");
  }
  if (model.name().find('\n') != std::string::npos)
    throw ConfigError("model name must not contain newlines");
  std::string m;
  m += "name " + model.name() + "\n";
  m += "input";
  for (size_t d : model.input_shape()) m += " " + std::to_string(d);
  m += "\n";
  for (size_t i = 0; i < model.layer_count(); ++i)
    m += "layer " + model.layer(i).describe() + "\n";
  for (const auto& [k, v] : model.metadata()) m += "meta " + k + " " + v + "\n";
  return m;
}

inline float stored_f32(double v) { return static_cast<float>(v); }

}  // namespace detail

// Exact byte size a save_model call will produce, without writing anything.
// Section payloads are tensor_storage_bytes, so the sum over payloads equals
// the accounting report for the same representation.
inline size_t predicted_file_bytes(const ModelGraph& model, StorageRep rep) {
  size_t total = 4 + 2;  // magic + version
  const std::string manifest = detail::build_manifest(model);
  total += 4 + manifest.size() + 4;
  const auto ps = model.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    const bool has_mask = model.has_mask(i);
    const bool has_quant = model.has_quant(i);
    const QuantInfo* q = has_quant ? &model.quant(i) : nullptr;
    size_t surviving = ps[i].tensor->numel();
    if (has_mask) {
      surviving = 0;
      const Tensor& mk = model.mask(i);
      for (size_t j = 0; j < mk.numel(); ++j)
        if (mk[j] != 0.0) ++surviving;
    }
    total += detail::kSectionHeaderBytes + detail::kSectionCrcBytes;
    total += tensor_storage_bytes(ps[i].tensor->numel(), surviving, has_mask, q, rep);
  }
  return total;
}

// Writes the model under the given representation; returns bytes written.
inline size_t save_model(const ModelGraph& model, StorageRep rep, const std::string& path) {
  if (rep == StorageRep::quantized && !model.any_quant())
    throw ConfigError("save_model: quantized representation requires quantized tensors");
  ByteWriter w;
  w.text("NNCM");
  w.u16(kModelVersion);
  const std::string manifest = detail::build_manifest(model);
  w.u32(static_cast<uint32_t>(manifest.size()));
  w.text(manifest);
  w.u32(crc32_of(manifest));

  const auto ps = model.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    const Tensor& t = *ps[i].tensor;
    const bool has_mask = model.has_mask(i);
    const bool has_quant = model.has_quant(i);
    const StorageRep eff = detail::effective_rep(rep, has_mask, has_quant);

    ByteWriter payload;
    uint8_t bits = 0;
    int32_t zero_index = -1;
    switch (eff) {
      case StorageRep::dense32:
        for (size_t j = 0; j < t.numel(); ++j) payload.f32(detail::stored_f32(t[j]));
        break;
      case StorageRep::pruned: {
        const Tensor& mk = model.mask(i);
        const size_t mask_bytes = (t.numel() + 7) / 8;
        std::vector<uint8_t> mbytes(mask_bytes, 0);
        for (size_t j = 0; j < t.numel(); ++j)
          if (mk[j] != 0.0) mbytes[j / 8] |= uint8_t(1u << (j % 8));
        payload.bytes(mbytes.data(), mbytes.size());
        for (size_t j = 0; j < t.numel(); ++j)
          if (mk[j] != 0.0) payload.f32(detail::stored_f32(t[j]));
        break;
      }
      case StorageRep::quantized: {
        const QuantInfo& q = model.quant(i);
        bits = q.bits;
        zero_index = q.zero_index;
        for (double c : q.codebook) payload.f32(detail::stored_f32(c));
        detail::pack_bits_be(payload, q.indices, q.bits);
        break;
      }
      case StorageRep::automatic:
        throw StateError("save_model: unresolved representation");
    }

    w.u8(detail::rep_tag(eff));
    w.u8(bits);
    w.u32(static_cast<uint32_t>(zero_index));
    w.u32(static_cast<uint32_t>(payload.size()));
    w.text(payload.str());
    w.u32(crc32_of(payload.str()));
  }

  write_file_atomic(path, w.str());
  return w.size();
}

// Rebuilds the graph from the manifest, then restores every tensor section.
// Quantized tensors come back with codebook and indices attached; masked
// positions are recovered from the bitmask or the pinned zero entry.
inline ModelGraph load_model(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  if (r.bytes(4) != "NNCM") throw DataError(path + ": bad magic, not a model file");
  const uint16_t version = r.u16();
  if (version != kModelVersion)
    throw DataError(path + ": unsupported model file version " + std::to_string(version));
  const uint32_t mlen = r.u32();
  const std::string manifest = r.bytes(mlen);
  if (r.u32() != crc32_of(manifest)) throw DataError(path + ": manifest: CRC mismatch");

  std::string name;
  std::vector<size_t> input_shape;
  std::vector<std::string> layer_lines;
  std::map<std::string, std::string> metadata;
  std::istringstream min(manifest);
  std::string line;
  while (std::getline(min, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    const std::string head = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (head == "name") {
      name = rest;
    } else if (head == "input") {
      std::istringstream di(rest);
      size_t d;
      while (di >> d) input_shape.push_back(d);
    } else if (head == "layer") {
      layer_lines.push_back(rest);
    } else if (head == "meta") {
      const auto msp = rest.find(' ');
      if (msp == std::string::npos)
        metadata[rest] = "";
      else
        metadata[rest.substr(0, msp)] = rest.substr(msp + 1);
    } else {
      throw DataError(path + ": manifest: unknown directive '" + head + "'");
    }
  }
  if (input_shape.empty()) throw DataError(path + ": manifest: missing input shape");

  ModelGraph model(name, input_shape);
  for (const auto& ll : layer_lines) model.add(detail::layer_from_description(ll));
  model.metadata() = metadata;
  model.validate();

  const auto ps = model.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    Tensor& t = *ps[i].tensor;
    const size_t n = t.numel();
    const std::string section = "section " + std::to_string(i) + " (" + ps[i].name + ")";
    const uint8_t tag = r.u8();
    const uint8_t bits = r.u8();
    const int32_t zero_index = static_cast<int32_t>(r.u32());
    const uint32_t payload_len = r.u32();
    const std::string payload = r.bytes(payload_len);
    if (r.u32() != crc32_of(payload)) throw DataError(path + ": " + section + ": CRC mismatch");
    ByteReader pr(payload, path + ": " + section);

    if (tag == 0) {
      if (payload_len != 4 * n)
        throw DataError(path + ": " + section + ": dense payload of " +
                        std::to_string(payload_len) + " bytes does not match " +
                        std::to_string(n) + " values");
      for (size_t j = 0; j < n; ++j) t[j] = static_cast<double>(pr.f32());
    } else if (tag == 1) {
      const size_t mask_bytes = (n + 7) / 8;
      if (payload_len < mask_bytes || (payload_len - mask_bytes) % 4 != 0)
        throw DataError(path + ": " + section + ": sparse payload of " +
                        std::to_string(payload_len) + " bytes is malformed for " +
                        std::to_string(n) + " positions");
      const std::string mbytes = pr.bytes(mask_bytes);
      Tensor mask(t.shape());
      size_t surviving = 0;
      for (size_t j = 0; j < n; ++j) {
        const bool kept = (static_cast<uint8_t>(mbytes[j / 8]) >> (j % 8)) & 1u;
        mask[j] = kept ? 1.0 : 0.0;
        surviving += kept;
      }
      if (payload_len - mask_bytes != 4 * surviving)
        throw DataError(path + ": " + section + ": sparse payload holds " +
                        std::to_string((payload_len - mask_bytes) / 4) + " values but the mask keeps " +
                        std::to_string(surviving));
      for (size_t j = 0; j < n; ++j) t[j] = mask[j] != 0.0 ? static_cast<double>(pr.f32()) : 0.0;
      model.set_mask(i, std::move(mask));
    } else if (tag == 2) {
      const size_t index_bytes = packed_index_bytes(n, bits);
      if (payload_len < index_bytes || (payload_len - index_bytes) % 4 != 0)
        throw DataError(path + ": " + section + ": quantized payload of " +
                        std::to_string(payload_len) + " bytes is malformed for " +
                        std::to_string(n) + " indices at " + std::to_string(bits) + " bits");
      const size_t entries = (payload_len - index_bytes) / 4;
      if (entries == 0 || (bits > 0 && entries > (size_t(1) << bits)))
        throw DataError(path + ": " + section + ": codebook of " + std::to_string(entries) +
                        " entries does not fit " + std::to_string(bits) + " bits");
      QuantInfo q;
      q.bits = bits;
      q.zero_index = zero_index;
      q.codebook.resize(entries);
      for (size_t e = 0; e < entries; ++e) q.codebook[e] = static_cast<double>(pr.f32());
      q.indices = detail::unpack_bits_be(pr.bytes(index_bytes), n, bits);
      for (uint32_t idx : q.indices)
        if (idx >= entries)
          throw DataError(path + ": " + section + ": index " + std::to_string(idx) +
                          " exceeds codebook size " + std::to_string(entries));
      if (zero_index >= 0) {
        if (static_cast<size_t>(zero_index) >= entries)
          throw DataError(path + ": " + section + ": zero index " + std::to_string(zero_index) +
                          " exceeds codebook size " + std::to_string(entries));
        Tensor mask(t.shape());
        for (size_t j = 0; j < n; ++j)
          mask[j] = q.indices[j] == static_cast<uint32_t>(zero_index) ? 0.0 : 1.0;
        model.set_mask(i, std::move(mask));
      }
      model.set_quant(i, std::move(q));
    } else {
      throw DataError(path + ": " + section + ": unknown representation tag " +
                      std::to_string(tag));
    }
    pr.expect_end();
  }
  r.expect_end();
  model.apply_quant();
  model.apply_masks();
  return model;
}

}  // namespace nncomp
