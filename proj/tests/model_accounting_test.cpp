#include <gtest/gtest.h>

#include <cmath>

#include "nncomp/accounting.hpp"
#include "nncomp/graph.hpp"
#include "nncomp/layers.hpp"
#include "nncomp/model_zoo.hpp"
#include "nncomp/rng.hpp"

using namespace nncomp;

namespace {

size_t count_layers_of_kind(const ModelGraph& g, LayerKind k) {
  size_t n = 0;
  for (size_t i = 0; i < g.layer_count(); ++i)
    if (g.layer(i).kind() == k) ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// FullyCon detector
// ---------------------------------------------------------------------------

TEST(FullyCon, SixHiddenWeightCount) {
  DetectionConfig cfg;
  cfg.hidden_count = 6;
  ModelGraph g = build_fullycon(cfg);
  // (30+1)*200 + 5*(200+1)*200 + (200+1)*20
  const size_t expect = 31 * 200 + 5 * 201 * 200 + 201 * 20;
  EXPECT_EQ(expect, 211220u);
  EXPECT_EQ(g.weight_count(), 211220u);
  EXPECT_EQ(cost_report(g).total_weights, 211220u);
}

TEST(FullyCon, FourHiddenWeightCount) {
  DetectionConfig cfg;
  cfg.hidden_count = 4;
  ModelGraph g = build_fullycon(cfg);
  const size_t expect = 31 * 200 + 3 * 201 * 200 + 201 * 20;
  EXPECT_EQ(expect, 130820u);
  EXPECT_EQ(g.weight_count(), 130820u);
}

TEST(FullyCon, BatchOutputShapeAndRange) {
  DetectionConfig cfg;
  ModelGraph g = build_fullycon(cfg);
  SeededRng rng(1);
  g.init_params(rng);
  Tensor x({1000, 30});
  for (double& v : x.values()) v = rng.uniform(-2.0, 2.0);
  Tensor y = g.forward(x);
  ASSERT_EQ(y.ndim(), 2u);
  EXPECT_EQ(y.dim(0), 1000u);
  EXPECT_EQ(y.dim(1), 20u);
  for (size_t i = 0; i < y.numel(); ++i) {
    EXPECT_GT(y[i], 0.0);
    EXPECT_LT(y[i], 1.0);
  }
}

TEST(FullyCon, HiddenWidthIsTenK) {
  DetectionConfig cfg;
  cfg.k = 13;
  cfg.n = 21;
  EXPECT_EQ(cfg.hidden_width(), 130u);
  ModelGraph g = build_fullycon(cfg);
  auto shapes = g.layer_input_shapes();
  EXPECT_EQ(shapes[2][0], 130u);  // input of second dense
}

// ---------------------------------------------------------------------------
// CsiNet+-like autoencoder
// ---------------------------------------------------------------------------

TEST(CsiNetPlusLike, DenseWeightsAndFcShare) {
  FeedbackConfig cfg;
  cfg.cr = 4;
  EXPECT_EQ(cfg.codeword_length(), 512u);
  ModelGraph g = build_csinet_plus_like(cfg);
  EXPECT_EQ(count_layers_of_kind(g, LayerKind::dense), 2u);

  const size_t fc = (2048 + 1) * 512 + (512 + 1) * 2048;
  size_t fc_found = 0;
  for (size_t i = 0; i < g.layer_count(); ++i)
    if (g.layer(i).kind() == LayerKind::dense) fc_found += g.layer(i).weight_count();
  EXPECT_EQ(fc_found, fc);

  const size_t total = g.weight_count();
  EXPECT_GT(static_cast<double>(fc) / static_cast<double>(total), 0.9);
}

TEST(CsiNetPlusLike, AutoencoderPreservesShape) {
  FeedbackConfig cfg;
  cfg.cr = 16;
  ModelGraph g = build_csinet_plus_like(cfg);
  EXPECT_EQ(g.output_shape(), (std::vector<size_t>{2, 32, 32}));
  SeededRng rng(2);
  g.init_params(rng);
  Tensor x({3, 2, 32, 32});
  for (double& v : x.values()) v = rng.uniform();
  Tensor y = g.forward(x);
  EXPECT_TRUE(y.same_shape(x));
  EXPECT_TRUE(y.all_finite());
}

// ---------------------------------------------------------------------------
// ConvCsiNet / ConvSquCsiNet
// ---------------------------------------------------------------------------

TEST(ConvCsiNet, NoDenseLayersAndBottleneckSize) {
  for (size_t cr : {4u, 8u, 16u, 32u}) {
    FeedbackConfig cfg;
    cfg.cr = cr;
    ModelGraph g = build_convcsinet(cfg);
    EXPECT_EQ(count_layers_of_kind(g, LayerKind::dense), 0u);
    EXPECT_EQ(g.output_shape(), (std::vector<size_t>{2, 32, 32}));

    // codeword = input of the decoder's 1x1 expansion conv (layer 12)
    auto shapes = g.layer_input_shapes();
    const auto& code = shapes[12];
    size_t elems = 1;
    for (size_t d : code) elems *= d;
    EXPECT_EQ(elems, cfg.codeword_length()) << "CR " << cr;
    EXPECT_EQ(code[1], 4u);
    EXPECT_EQ(code[2], 4u);
  }
}

TEST(ConvCsiNet, WeightCountsMatchClosedForm) {
  // fixed part: 304 + 4640 + 18496 (encoder convs) + 64 (expansion bias)
  //           + 18464 + 4624 + 290 (decoder convs); bottleneck adds 129*c_b
  const size_t fixed = 304 + 4640 + 18496 + 64 + 18464 + 4624 + 290;
  for (size_t cr : {4u, 8u, 16u, 32u}) {
    FeedbackConfig cfg;
    cfg.cr = cr;
    const size_t cb = cfg.codeword_length() / 16;
    ModelGraph g = build_convcsinet(cfg);
    EXPECT_EQ(g.weight_count(), fixed + 129 * cb) << "CR " << cr;
  }
}

TEST(ConvSquCsiNet, UnderHalfTheWeightsAtEveryCr) {
  for (size_t cr : {4u, 8u, 16u, 32u}) {
    FeedbackConfig cfg;
    cfg.cr = cr;
    ModelGraph conv = build_convcsinet(cfg);
    ModelGraph squ = build_convsqucsinet(cfg);
    EXPECT_EQ(count_layers_of_kind(squ, LayerKind::dense), 0u);
    EXPECT_EQ(squ.output_shape(), (std::vector<size_t>{2, 32, 32}));
    const double ratio = static_cast<double>(squ.weight_count()) /
                         static_cast<double>(conv.weight_count());
    EXPECT_LT(ratio, 0.5) << "CR " << cr;
  }
}

TEST(ConvSquCsiNet, WeightCountsMatchClosedForm) {
  // fire(in, s=o/4, e1=e3=o/2) per replaced block; head conv and 1x1
  // projections stay plain convs
  const size_t fire_2_16 = 3 * 4 + 5 * 8 + 37 * 8;
  const size_t fire_16_32 = 17 * 8 + 9 * 16 + 73 * 16;
  const size_t fire_32_64 = 33 * 16 + 17 * 32 + 145 * 32;
  const size_t fire_64_32 = 65 * 8 + 9 * 16 + 73 * 16;
  const size_t fire_32_16 = 33 * 4 + 5 * 8 + 37 * 8;
  const size_t fixed = fire_2_16 + fire_16_32 + fire_32_64 + 64 + fire_64_32 + fire_32_16 + 290;
  for (size_t cr : {4u, 8u, 16u, 32u}) {
    FeedbackConfig cfg;
    cfg.cr = cr;
    const size_t cb = cfg.codeword_length() / 16;
    ModelGraph g = build_convsqucsinet(cfg);
    EXPECT_EQ(g.weight_count(), fixed + 129 * cb) << "CR " << cr;
  }
}

TEST(FireModule, ReferenceSizedExampleCount) {
  FireModule fire(64, 16, 64, 64);
  EXPECT_EQ(fire.weight_count(), (64u + 1) * 16 + (16u + 1) * 64 + (16u * 9 + 1) * 64);
  EXPECT_EQ(fire.weight_count(), 11408u);
  auto out = fire.output_shape({64, 8, 8});
  EXPECT_EQ(out, (std::vector<size_t>{128, 8, 8}));
}

TEST(FireModule, SqueezeBottleneckEnforced) {
  EXPECT_THROW(FireModule(8, 16, 8, 8), ConfigError);
}

// ---------------------------------------------------------------------------
// FLOP accounting
// ---------------------------------------------------------------------------

TEST(Flops, ConvFormulaHandChecked) {
  struct Case {
    size_t cin, cout, k, stride, pad, h, w;
    size_t expect;
  };
  // 2*H'*W'*(C_in*K*K+1)*C_out, hand-computed
  const Case cases[] = {
      {2, 16, 3, 1, 1, 32, 32, 2 * 32 * 32 * (2 * 9 + 1) * 16},     // 622,592
      {16, 32, 3, 1, 1, 16, 16, 2 * 16 * 16 * (16 * 9 + 1) * 32},   // 2,375,680
      {64, 4, 1, 1, 0, 4, 4, 2 * 4 * 4 * (64 + 1) * 4},             // 8,320
      {8, 8, 5, 1, 0, 12, 12, 2 * 8 * 8 * (8 * 25 + 1) * 8},        // 205,824
      {3, 7, 3, 2, 1, 9, 9, 2 * 5 * 5 * (3 * 9 + 1) * 7},           // 9,800
  };
  EXPECT_EQ(cases[0].expect, 622592u);
  for (const auto& c : cases) {
    Conv2dLayer layer(c.cin, c.cout, c.k, c.k, c.stride, c.pad, c.pad);
    EXPECT_EQ(layer.flop_count({c.cin, c.h, c.w}), c.expect)
        << "cin=" << c.cin << " k=" << c.k << " stride=" << c.stride;
  }
}

TEST(Flops, DenseAndActivation) {
  DenseLayer d(30, 200);
  EXPECT_EQ(d.flop_count({30}), 2u * 31 * 200);
  EXPECT_EQ(d.flop_count({30}), 12400u);

  ActivationLayer relu(LayerKind::relu);
  EXPECT_EQ(relu.flop_count({1, 32, 32}), 1024u);
}

TEST(Flops, ModelTotalsEqualLayerSums) {
  FeedbackConfig cfg;
  cfg.cr = 8;
  ModelGraph g = build_convcsinet(cfg);
  CostReport rpt = cost_report(g);
  size_t weights = 0, flops = 0;
  for (const auto& l : rpt.layers) {
    weights += l.weights;
    flops += l.flops;
  }
  EXPECT_EQ(weights, rpt.total_weights);
  EXPECT_EQ(flops, rpt.total_flops);
}

// ---------------------------------------------------------------------------
// Storage accounting
// ---------------------------------------------------------------------------

TEST(Storage, Dense32IsFourBytesPerWeight) {
  DetectionConfig cfg;
  ModelGraph g = build_fullycon(cfg);
  CostReport rpt = cost_report(g, StorageRep::dense32);
  EXPECT_EQ(rpt.bytes_dense32, 4 * rpt.total_weights);
  EXPECT_EQ(rpt.bytes_current, rpt.bytes_dense32);
  EXPECT_DOUBLE_EQ(rpt.saving, 0.0);
}

TEST(Storage, IndexOnlySavingValues) {
  EXPECT_DOUBLE_EQ(index_only_saving(7), 0.78125);
  EXPECT_DOUBLE_EQ(index_only_saving(9), 0.71875);
  EXPECT_DOUBLE_EQ(index_only_saving(32), 0.0);
}

TEST(Storage, PackedIndexBytes) {
  EXPECT_EQ(packed_index_bytes(8, 5), 5u);
  EXPECT_EQ(packed_index_bytes(3, 9), 4u);   // 27 bits -> 4 bytes
  EXPECT_EQ(packed_index_bytes(16, 4), 8u);
}

TEST(Storage, QuantizedTensorBytes) {
  QuantInfo q;
  q.bits = 3;
  q.codebook.assign(8, 0.0);
  EXPECT_EQ(tensor_storage_bytes(100, 100, false, &q, StorageRep::quantized),
            4u * 8 + (100 * 3 + 7) / 8);
}

TEST(Storage, PrunedBytesAndMonotonicity) {
  // 1 bit/position + 4 bytes per survivor
  EXPECT_EQ(tensor_storage_bytes(64, 40, true, nullptr, StorageRep::pruned), 8u + 160u);
  size_t prev = SIZE_MAX;
  for (size_t surviving : {64u, 48u, 32u, 16u, 0u}) {
    const size_t b = tensor_storage_bytes(64, surviving, true, nullptr, StorageRep::pruned);
    EXPECT_LT(b, prev);
    prev = b;
  }
}

TEST(Storage, MasksDoNotChangeWeightOrFlopCounts) {
  DetectionConfig cfg;
  cfg.hidden_count = 4;
  ModelGraph g = build_fullycon(cfg);
  CostReport before = cost_report(g);

  auto ps = g.params();
  Tensor mask = Tensor::ones_like(*ps[0].tensor);
  for (size_t i = 0; i < mask.numel(); i += 2) mask[i] = 0.0;
  g.set_mask(0, mask);
  g.apply_masks();

  CostReport after = cost_report(g);
  EXPECT_EQ(before.total_weights, after.total_weights);
  EXPECT_EQ(before.total_flops, after.total_flops);
  EXPECT_LT(after.bytes_current, after.bytes_dense32);
  EXPECT_LT(after.remaining_overall, 1.0);
}

TEST(Storage, AutomaticPicksAttachedState) {
  SeededRng rng(5);
  ModelGraph g("mini", {4});
  g.emplace<DenseLayer>(4, 8);
  g.init_params(rng);

  // no state: dense32
  EXPECT_EQ(cost_report(g).bytes_current, 4u * 40);

  // quantized state on the weight tensor
  QuantInfo q;
  q.bits = 2;
  q.codebook = {-0.2, -0.1, 0.1, 0.2};
  q.indices.assign(32, 1);
  g.set_quant(0, q);
  CostReport rpt = cost_report(g);
  EXPECT_EQ(rpt.tensors[0].bytes, 4u * 4 + (32 * 2 + 7) / 8);
  EXPECT_EQ(rpt.tensors[1].bytes, 4u * 8);  // bias stays dense
  EXPECT_DOUBLE_EQ(rpt.index_only_saving, 1.0 - 2.0 / 32.0);
}

TEST(Sparsity, ReportValues) {
  SeededRng rng(6);
  ModelGraph g("mini", {3});
  g.emplace<DenseLayer>(3, 1);
  g.init_params(rng);

  SparsityReport none = sparsity_report(g);
  for (const auto& e : none.tensors) EXPECT_DOUBLE_EQ(e.remaining, 1.0);
  EXPECT_DOUBLE_EQ(none.overall, 1.0);

  Tensor mask({1, 3}, {1, 0, 1});
  g.set_mask(0, mask);
  SparsityReport rpt = sparsity_report(g);
  EXPECT_NEAR(rpt.tensors[0].remaining, 2.0 / 3.0, 1e-12);
}

TEST(Csv, ReportShapeAndDeterminism) {
  DetectionConfig cfg;
  cfg.hidden_count = 4;
  ModelGraph g = build_fullycon(cfg);
  const std::string a = cost_report(g).to_csv();
  const std::string b = cost_report(g).to_csv();
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("layer,kind,weights,flops,bytes_dense32,bytes_current,saving"),
            std::string::npos);
  EXPECT_NE(a.find("total,"), std::string::npos);
  // one line per layer + header + total
  size_t lines = 0;
  for (char c : a)
    if (c == '\n') ++lines;
  EXPECT_EQ(lines, g.layer_count() + 2);
}
