#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nncomp/accounting.hpp"
#include "nncomp/binio.hpp"
#include "nncomp/error.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/model_io.hpp"
#include "nncomp/model_zoo.hpp"
#include "nncomp/prune.hpp"
#include "nncomp/quantize.hpp"
#include "nncomp/rng.hpp"
#include "nncomp/tensor.hpp"

namespace nncomp {
namespace {

std::string temp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

std::string slurp(const std::string& path) { return read_file(path); }

ModelGraph small_model(uint64_t seed = 7) {
  ModelGraph g("tiny detector", {6});
  g.add(std::make_unique<DenseLayer>(6, 10));
  g.add(std::make_unique<ActivationLayer>(LayerKind::relu));
  g.add(std::make_unique<DenseLayer>(10, 4));
  g.add(std::make_unique<ActivationLayer>(LayerKind::sigmoid));
  SeededRng rng(seed);
  g.init_params(rng);
  return g;
}

Tensor random_batch(const std::vector<size_t>& sample_shape, size_t count, uint64_t seed) {
  std::vector<size_t> shape = {count};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor x(shape);
  SeededRng rng(seed);
  for (double& v : x.values()) v = rng.normal();
  return x;
}

size_t sum_section_payloads(const std::string& bytes) {
  ByteReader r(bytes, "parse");
  r.bytes(4);
  r.u16();
  const uint32_t mlen = r.u32();
  r.bytes(mlen);
  r.u32();
  size_t total = 0;
  while (r.remaining() > 0) {
    r.u8();
    r.u8();
    r.u32();
    const uint32_t plen = r.u32();
    r.bytes(plen);
    r.u32();
    total += plen;
  }
  return total;
}

TEST(BitPacking, EightFiveBitIndicesUseFiveBytes) {
  std::vector<uint32_t> idx = {3, 17, 31, 0, 9, 22, 4, 30};
  ByteWriter w;
  detail::pack_bits_be(w, idx, 5);
  EXPECT_EQ(w.size(), 5u);
  EXPECT_EQ(detail::unpack_bits_be(w.str(), idx.size(), 5), idx);
}

TEST(BitPacking, PartialFinalBytePadsWithZeros) {
  std::vector<uint32_t> idx = {5, 2, 7};
  ByteWriter w;
  detail::pack_bits_be(w, idx, 3);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(detail::unpack_bits_be(w.str(), idx.size(), 3), idx);
  EXPECT_EQ(static_cast<uint8_t>(w.str()[1]) & 0x7f, 0);
}

TEST(SaveModel, ReturnsOnDiskByteCount) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_count.nncm");
  const size_t n = save_model(g, StorageRep::dense32, path);
  EXPECT_EQ(n, std::filesystem::file_size(path));
  EXPECT_EQ(n, predicted_file_bytes(g, StorageRep::dense32));
  std::filesystem::remove(path);
}

TEST(SaveModel, DenseRoundTripIsF32Exact) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_dense.nncm");
  save_model(g, StorageRep::dense32, path);
  ModelGraph back = load_model(path);
  const auto orig = g.params();
  const auto got = back.params();
  ASSERT_EQ(orig.size(), got.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    EXPECT_EQ(got[i].name, orig[i].name);
    for (size_t j = 0; j < orig[i].tensor->numel(); ++j)
      EXPECT_EQ((*got[i].tensor)[j], to_f32((*orig[i].tensor)[j]));
  }
  std::filesystem::remove(path);
}

TEST(SaveModel, SaveLoadSaveIsByteIdentical) {
  ModelGraph g = small_model();
  const std::string p1 = temp_path("nncm_idem1.nncm");
  const std::string p2 = temp_path("nncm_idem2.nncm");
  save_model(g, StorageRep::dense32, p1);
  ModelGraph back = load_model(p1);
  save_model(back, StorageRep::dense32, p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(SaveModel, PayloadBytesMatchAccountingExactly) {
  ModelGraph g = small_model();
  SeededRng rng(11);
  prune_magnitude(g, 0.05, PruneGranularity::fine_grained);
  quantize_kmeans(g, 4, rng);
  for (StorageRep rep : {StorageRep::dense32, StorageRep::pruned, StorageRep::quantized,
                         StorageRep::automatic}) {
    const std::string path = temp_path("nncm_acct.nncm");
    const size_t written = save_model(g, rep, path);
    EXPECT_EQ(written, predicted_file_bytes(g, rep)) << storage_rep_name(rep);
    EXPECT_EQ(sum_section_payloads(slurp(path)), cost_report(g, rep).bytes_current)
        << storage_rep_name(rep);
    std::filesystem::remove(path);
  }
}

TEST(SaveModel, PrunedRoundTripRestoresMaskAndWeights) {
  ModelGraph g = small_model();
  prune_magnitude(g, 0.12, PruneGranularity::fine_grained);
  const std::string path = temp_path("nncm_pruned.nncm");
  save_model(g, StorageRep::pruned, path);
  ModelGraph back = load_model(path);
  const auto orig = g.params();
  const auto got = back.params();
  ASSERT_EQ(orig.size(), got.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    ASSERT_EQ(back.has_mask(i), g.has_mask(i));
    for (size_t j = 0; j < orig[i].tensor->numel(); ++j) {
      if (g.has_mask(i)) EXPECT_EQ(back.mask(i)[j], g.mask(i)[j]);
      EXPECT_EQ((*got[i].tensor)[j], to_f32((*orig[i].tensor)[j]));
    }
  }
  const std::string p2 = temp_path("nncm_pruned2.nncm");
  save_model(back, StorageRep::pruned, p2);
  EXPECT_EQ(slurp(path), slurp(p2));
  std::filesystem::remove(path);
  std::filesystem::remove(p2);
}

TEST(SaveModel, AllZeroMaskStoresMaskBytesOnly) {
  ModelGraph g("null", {3});
  g.add(std::make_unique<DenseLayer>(3, 4, false));
  SeededRng rng(3);
  g.init_params(rng);
  g.set_mask(0, Tensor({4, 3}));
  g.apply_masks();
  const std::string path = temp_path("nncm_nullmask.nncm");
  save_model(g, StorageRep::pruned, path);
  const std::string bytes = slurp(path);
  EXPECT_EQ(sum_section_payloads(bytes), (12 + 7) / 8);
  ModelGraph back = load_model(path);
  for (size_t j = 0; j < 12; ++j) {
    EXPECT_EQ((*back.params()[0].tensor)[j], 0.0);
    EXPECT_EQ(back.mask(0)[j], 0.0);
  }
  std::filesystem::remove(path);
}

TEST(SaveModel, QuantizedRoundTripKeepsCodebookIndicesAndMask) {
  ModelGraph g = small_model();
  SeededRng rng(19);
  prune_magnitude(g, 0.1, PruneGranularity::fine_grained);
  quantize_kmeans(g, 3, rng);
  const std::string path = temp_path("nncm_quant.nncm");
  save_model(g, StorageRep::quantized, path);
  ModelGraph back = load_model(path);
  const auto orig = g.params();
  for (size_t i = 0; i < orig.size(); ++i) {
    ASSERT_EQ(back.has_quant(i), g.has_quant(i));
    if (!g.has_quant(i)) continue;
    const QuantInfo& a = g.quant(i);
    const QuantInfo& b = back.quant(i);
    EXPECT_EQ(b.bits, a.bits);
    EXPECT_EQ(b.zero_index, a.zero_index);
    EXPECT_EQ(b.codebook, a.codebook);
    EXPECT_EQ(b.indices, a.indices);
    ASSERT_EQ(back.has_mask(i), g.has_mask(i));
    if (g.has_mask(i))
      for (size_t j = 0; j < orig[i].tensor->numel(); ++j)
        EXPECT_EQ(back.mask(i)[j], g.mask(i)[j]);
  }
  const std::string p2 = temp_path("nncm_quant2.nncm");
  save_model(back, StorageRep::quantized, p2);
  EXPECT_EQ(slurp(path), slurp(p2));
  std::filesystem::remove(path);
  std::filesystem::remove(p2);
}

TEST(SaveModel, QuantizedRoundTripPreservesOutputsBitwise) {
  ModelGraph g = small_model(23);
  SeededRng rng(29);
  quantize_kmeans(g, 5, rng);
  const Tensor x = random_batch(g.input_shape(), 32, 101);
  const Tensor before = g.forward(x);
  const std::string path = temp_path("nncm_eval.nncm");
  save_model(g, StorageRep::quantized, path);
  ModelGraph back = load_model(path);
  const Tensor after = back.forward(x);
  ASSERT_EQ(after.numel(), before.numel());
  for (size_t i = 0; i < before.numel(); ++i) EXPECT_EQ(after[i], before[i]);
  std::filesystem::remove(path);
}

TEST(SaveModel, DegenerateSingleEntryCodebookRoundTrips) {
  ModelGraph g("flat", {4});
  g.add(std::make_unique<DenseLayer>(4, 3, false));
  for (double& v : g.params()[0].tensor->values()) v = 0.25;
  SeededRng rng(5);
  quantize_kmeans(g, 4, rng);
  ASSERT_EQ(g.quant(0).codebook.size(), 1u);
  ASSERT_EQ(g.quant(0).bits, 0);
  const std::string path = temp_path("nncm_flat.nncm");
  save_model(g, StorageRep::quantized, path);
  ModelGraph back = load_model(path);
  EXPECT_EQ(back.quant(0).codebook, g.quant(0).codebook);
  for (size_t j = 0; j < 12; ++j) EXPECT_EQ((*back.params()[0].tensor)[j], 0.25);
  std::filesystem::remove(path);
}

TEST(SaveModel, FileSizeIsMonotoneInBitWidth) {
  size_t prev = 0;
  for (size_t bits = 2; bits <= 6; ++bits) {
    ModelGraph g("wide", {30});
    g.add(std::make_unique<DenseLayer>(30, 100));
    g.add(std::make_unique<ActivationLayer>(LayerKind::relu));
    g.add(std::make_unique<DenseLayer>(100, 20));
    SeededRng init(41);
    g.init_params(init);
    SeededRng rng(43);
    quantize_kmeans(g, bits, rng);
    const std::string path = temp_path("nncm_mono.nncm");
    const size_t sz = save_model(g, StorageRep::quantized, path);
    if (prev) EXPECT_GT(sz, prev) << "bits=" << bits;
    prev = sz;
    std::filesystem::remove(path);
  }
}

TEST(SaveModel, QuantizedRepWithoutStateIsRejected) {
  ModelGraph g = small_model();
  EXPECT_THROW(save_model(g, StorageRep::quantized, temp_path("nncm_bad.nncm")), ConfigError);
}

TEST(SaveModel, AutomaticPicksAttachedState) {
  ModelGraph g = small_model();
  SeededRng rng(13);
  quantize_kmeans(g, 4, rng);
  const std::string pa = temp_path("nncm_auto.nncm");
  const std::string pq = temp_path("nncm_autoq.nncm");
  save_model(g, StorageRep::automatic, pa);
  save_model(g, StorageRep::quantized, pq);
  EXPECT_EQ(slurp(pa), slurp(pq));
  std::filesystem::remove(pa);
  std::filesystem::remove(pq);
}

TEST(LoadModel, ManifestAloneRebuildsEveryArchitecture) {
  std::vector<ModelGraph> models;
  DetectionConfig det;
  models.push_back(build_fullycon(det));
  FeedbackConfig fb;
  fb.cr = 8;
  models.push_back(build_csinet_plus_like(fb));
  models.push_back(build_convcsinet(fb));
  models.push_back(build_convsqucsinet(fb));
  SeededRng rng(71);
  for (ModelGraph& m : models) {
    m.init_params(rng);
    const std::string path = temp_path("nncm_arch.nncm");
    save_model(m, StorageRep::dense32, path);
    ModelGraph back = load_model(path);
    EXPECT_EQ(back.name(), m.name());
    EXPECT_EQ(back.input_shape(), m.input_shape());
    ASSERT_EQ(back.layer_count(), m.layer_count());
    for (size_t i = 0; i < m.layer_count(); ++i)
      EXPECT_EQ(back.layer(i).describe(), m.layer(i).describe());
    EXPECT_EQ(back.weight_count(), m.weight_count());
    EXPECT_EQ(back.validate(), m.validate());
    std::filesystem::remove(path);
  }
}

TEST(LoadModel, MetadataAndSpacedNameSurvive) {
  ModelGraph g = small_model();
  g.metadata()["channel"] = "30 20 0.123456789 -0.987654321";
  g.metadata()["seed"] = "42";
  g.metadata()["snr_db"] = "8 9 10 11 12 13";
  const std::string path = temp_path("nncm_meta.nncm");
  save_model(g, StorageRep::dense32, path);
  ModelGraph back = load_model(path);
  EXPECT_EQ(back.name(), "tiny detector");
  EXPECT_EQ(back.metadata(), g.metadata());
  std::filesystem::remove(path);
}

TEST(LoadModel, SectionCrcCorruptionNamesTheTensor) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_crc.nncm");
  save_model(g, StorageRep::dense32, path);
  std::string bytes = slurp(path);
  bytes[bytes.size() - 10] ^= 0x40;
  write_file_atomic(path, bytes);
  try {
    load_model(path);
    FAIL() << "corrupt section accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("section 3 (layer2.b)"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("CRC mismatch"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(LoadModel, ManifestCorruptionIsCaught) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_mcrc.nncm");
  save_model(g, StorageRep::dense32, path);
  std::string bytes = slurp(path);
  bytes[12] ^= 0x01;
  write_file_atomic(path, bytes);
  try {
    load_model(path);
    FAIL() << "corrupt manifest accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest: CRC mismatch"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(LoadModel, UnknownVersionAndMagicAreRejected) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_ver.nncm");
  save_model(g, StorageRep::dense32, path);
  std::string bytes = slurp(path);
  std::string wrong_ver = bytes;
  wrong_ver[4] = 9;
  write_file_atomic(path, wrong_ver);
  EXPECT_THROW(load_model(path), DataError);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write_file_atomic(path, wrong_magic);
  EXPECT_THROW(load_model(path), DataError);
  std::filesystem::remove(path);
}

TEST(LoadModel, UnknownSectionTagNamesTheSection) {
  ModelGraph g("one", {2});
  g.add(std::make_unique<DenseLayer>(2, 2, false));
  SeededRng rng(2);
  g.init_params(rng);
  const std::string path = temp_path("nncm_tag.nncm");
  save_model(g, StorageRep::dense32, path);
  std::string bytes = slurp(path);
  ByteReader r(bytes, "scan");
  r.bytes(4);
  r.u16();
  const uint32_t mlen = r.u32();
  r.bytes(mlen);
  r.u32();
  bytes[r.offset()] = 7;
  write_file_atomic(path, bytes);
  try {
    load_model(path);
    FAIL() << "unknown tag accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("section 0 (layer0.W)"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("unknown representation tag 7"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(LoadModel, TruncatedFileReportsOffset) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_trunc.nncm");
  save_model(g, StorageRep::dense32, path);
  std::string bytes = slurp(path);
  write_file_atomic(path, bytes.substr(0, bytes.size() - 3));
  try {
    load_model(path);
    FAIL() << "truncated file accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(LoadModel, TrailingGarbageIsRejected) {
  ModelGraph g = small_model();
  const std::string path = temp_path("nncm_tail.nncm");
  save_model(g, StorageRep::dense32, path);
  write_file_atomic(path, slurp(path) + "zz");
  EXPECT_THROW(load_model(path), DataError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace nncomp
