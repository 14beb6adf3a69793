#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "accounting.hpp"
#include "config.hpp"
#include "datagen.hpp"
#include "distill.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "graph.hpp"
#include "lowrank.hpp"
#include "model_io.hpp"
#include "model_zoo.hpp"
#include "prune.hpp"
#include "quantize.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace nncomp {

// Fixed fork offsets so every stage draws from its own deterministic stream.
namespace seed_stream {
constexpr uint64_t channel = 1;
constexpr uint64_t train_data = 2;
constexpr uint64_t val_data = 3;
constexpr uint64_t test_data = 4;
constexpr uint64_t model_init = 100;
constexpr uint64_t train_loop = 101;
constexpr uint64_t step_base = 200;
}  // namespace seed_stream

struct ExperimentData {
  Dataset train;
  Dataset val;
  std::vector<SnrGroup> test_groups;  // detection
  Dataset test;                       // csi
  Tensor channel;
  double norm_min = 0.0;
  double norm_max = 1.0;
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg, SeededRng& master,
                                   const Tensor* channel_override = nullptr) {
  ExperimentData data;
  if (cfg.task == TaskKind::detection) {
    if (channel_override) {
      if (channel_override->ndim() != 2 || channel_override->dim(0) != cfg.detection.n ||
          channel_override->dim(1) != cfg.detection.k)
        throw ConfigError("prepare_data: channel override shape mismatch");
      data.channel = *channel_override;
    } else {
      SeededRng ch = master.fork(seed_stream::channel);
      data.channel = make_detection_channel(cfg.detection.n, cfg.detection.k, ch);
    }
    SeededRng tr = master.fork(seed_stream::train_data);
    data.train = gen_detection_mixed(data.channel, cfg.train_count, cfg.snr_db, tr);
    SeededRng va = master.fork(seed_stream::val_data);
    data.val = gen_detection_mixed(data.channel, cfg.val_count, cfg.snr_db, va);
    for (size_t i = 0; i < cfg.snr_db.size(); ++i) {
      SeededRng te = master.fork(seed_stream::test_data + i);
      data.test_groups.push_back(
          {cfg.snr_db[i], gen_detection_dataset(data.channel, cfg.test_count, cfg.snr_db[i], te)});
    }
  } else {
    SeededRng tr = master.fork(seed_stream::train_data);
    CsiDataset train = gen_csi_dataset(cfg.scenario, cfg.train_count, tr);
    SeededRng va = master.fork(seed_stream::val_data);
    CsiDataset val = gen_csi_dataset(cfg.scenario, cfg.val_count, va, train.norm_min, train.norm_max);
    SeededRng te = master.fork(seed_stream::test_data);
    CsiDataset test = gen_csi_dataset(cfg.scenario, cfg.test_count, te, train.norm_min, train.norm_max);
    data.train = std::move(train.data);
    data.val = std::move(val.data);
    data.test = std::move(test.data);
    data.norm_min = train.norm_min;
    data.norm_max = train.norm_max;
  }
  return data;
}

inline ModelGraph build_model(const ExperimentConfig& cfg) {
  if (cfg.task == TaskKind::detection) {
    if (cfg.architecture != "fullycon")
      throw ConfigError("pipeline: unknown detection architecture '" + cfg.architecture + "'");
    return build_fullycon(cfg.detection);
  }
  return build_feedback_model(cfg.architecture, cfg.feedback);
}

struct StageLog {
  std::string stage;
  uint64_t seed = 0;
  size_t epochs = 0;
  double final_train_loss = std::nan("");
  double final_val_loss = std::nan("");
  std::string note;
};

struct PipelineResult {
  std::vector<ResultRow> rows;
  std::vector<std::pair<std::string, CostReport>> costs;
  std::vector<std::string> artifacts;
  std::vector<StageLog> logs;
};

namespace detail {

inline std::string fmt_desc_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::string step_descriptor(const CompressionStep& s) {
  if (s.op == "prune") return "t=" + fmt_desc_num(s.threshold);
  if (s.op == "quantize") return "B=" + std::to_string(s.bits);
  if (s.op == "distill") return "lambda=" + fmt_desc_num(s.lambda);
  return "r=" + std::to_string(s.rank);
}

inline StageLog log_of(const std::string& stage, uint64_t seed, const TrainStats& st) {
  StageLog l;
  l.stage = stage;
  l.seed = seed;
  l.epochs = st.epochs;
  if (!st.train_loss.empty()) l.final_train_loss = st.train_loss.back();
  if (!st.val_loss.empty()) l.final_val_loss = st.val_loss.back();
  return l;
}

inline void eval_rows(const ExperimentConfig& cfg, const ModelGraph& model,
                      const ExperimentData& data, const std::string& descriptor,
                      double remaining, std::vector<ResultRow>& rows) {
  if (cfg.task == TaskKind::detection) {
    for (const BerResult& b : eval_ber(model, data.test_groups)) {
      ResultRow r;
      r.metric = "BER";
      r.sweep = "snr_db";
      r.coordinate = b.snr_db;
      r.descriptor = descriptor;
      r.value = b.ber;
      r.ci_lo = b.interval.lo;
      r.ci_hi = b.interval.hi;
      r.remaining = remaining;
      r.samples = b.total_bits;
      r.seed = cfg.seed;
      rows.push_back(r);
    }
  } else {
    const NmseResult n = eval_nmse(model, data.test, data.norm_min, data.norm_max);
    ResultRow r;
    r.metric = "NMSE_dB";
    r.sweep = "cr";
    r.coordinate = static_cast<double>(cfg.feedback.cr);
    r.descriptor = descriptor;
    r.value = n.nmse_db;
    r.remaining = remaining;
    r.samples = n.samples_used;
    r.seed = cfg.seed;
    rows.push_back(r);
  }
}

// Replaces every stride-1 conv with kernel >= 2x2 by its rank-r factorization.
inline size_t decompose_all_convs(ModelGraph& model, size_t rank) {
  size_t replaced = 0;
  for (size_t i = 0; i < model.layer_count(); ++i) {
    const auto* conv = dynamic_cast<const Conv2dLayer*>(&model.layer(i));
    if (!conv) continue;
    if (conv->stride() != 1 || conv->kernel_h() < 2 || conv->kernel_w() < 2) continue;
    if (rank > std::min(conv->kernel_h(), conv->kernel_w())) continue;
    LowRankDecomposition dec = decompose_conv_lowrank(*conv, rank);
    model.replace_layer(i, std::move(dec.layer));
    ++replaced;
  }
  if (replaced == 0)
    throw ConfigError("pipeline: decompose found no compatible conv layer at rank " +
                      std::to_string(rank));
  return replaced;
}

inline std::string sanitize_filename(std::string s) {
  for (char& c : s)
    if (c == '=' || c == ' ' || c == '/') c = '_';
  return s;
}

}  // namespace detail

// Trains the baseline, applies the compression plan step by step with a
// small-learning-rate retrain after each, evaluates after every stage, and
// persists models plus cost tables. Baseline rows always come first.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.check();
  std::filesystem::create_directories(out_dir);
  PipelineResult result;
  std::string stage = "setup";
  auto fail = [&](const std::exception& e) {
    StageLog l;
    l.stage = stage;
    l.note = std::string("failed: ") + e.what();
    result.logs.push_back(l);
    if (!result.rows.empty()) {
      emit_csv(result.rows, out_dir + "/results.partial.csv");
      result.artifacts.push_back(out_dir + "/results.partial.csv");
    }
    return "stage " + stage + ": " + e.what();
  };
  try {
    SeededRng master(cfg.seed);
    stage = "data";
    ExperimentData data = prepare_data(cfg, master);

    stage = "train";
    ModelGraph model = build_model(cfg);
    if (cfg.task == TaskKind::detection) {
      model.metadata()["channel"] = detection_channel_text(data.channel);
    } else {
      model.metadata()["scenario"] = csi_scenario_name(cfg.scenario);
      model.metadata()["norm_min"] = detail::fmt_g(data.norm_min);
      model.metadata()["norm_max"] = detail::fmt_g(data.norm_max);
    }
    model.metadata()["seed"] = std::to_string(cfg.seed);
    SeededRng init = master.fork(seed_stream::model_init);
    model.init_params(init);
    SeededRng loop = master.fork(seed_stream::train_loop);
    const TrainStats base_stats = train_model(model, data.train, data.val, cfg.schedule, loop);
    result.logs.push_back(detail::log_of("train", cfg.seed, base_stats));

    stage = "eval baseline";
    detail::eval_rows(cfg, model, data, "baseline", std::nan(""), result.rows);
    result.costs.emplace_back("baseline", cost_report(model));
    {
      const std::string path = out_dir + "/" + cfg.name + "_baseline.nncm";
      save_model(model, StorageRep::automatic, path);
      result.artifacts.push_back(path);
    }

    double remaining = std::nan("");
    for (size_t si = 0; si < cfg.plan.size(); ++si) {
      const CompressionStep& step = cfg.plan[si];
      const std::string desc = detail::step_descriptor(step);
      SeededRng step_rng = master.fork(seed_stream::step_base + si);
      const TrainSchedule retrain = cfg.retrain_schedule();

      stage = step.op + " " + desc;
      if (step.op == "prune") {
        model.metadata()["prune_t"] = detail::fmt_desc_num(step.threshold);
        const PruneResult pr =
            prune_magnitude(model, step.threshold, parse_prune_granularity(step.granularity));
        remaining = pr.overall_remaining;
        const TrainStats st = train_model(model, data.train, data.val, retrain, step_rng);
        StageLog l = detail::log_of(stage, cfg.seed, st);
        l.note = "remaining=" + detail::fmt_g(pr.overall_remaining);
        result.logs.push_back(l);
      } else if (step.op == "quantize") {
        model.metadata()["quant_bits"] = std::to_string(step.bits);
        quantize_kmeans(model, static_cast<uint8_t>(step.bits), step_rng);
        SeededRng retrain_rng = master.fork(seed_stream::step_base + si + 1000);
        const TrainStats st =
            retrain_quantized(model, data.train, data.val, retrain, retrain_rng);
        result.logs.push_back(detail::log_of(stage, cfg.seed, st));
      } else if (step.op == "distill") {
        if (cfg.task != TaskKind::detection)
          throw ConfigError("pipeline: distillation is defined for the detection task");
        DetectionConfig dc = cfg.detection;
        const size_t hidden = step.student_hidden ? step.student_hidden : dc.hidden_count;
        const size_t width = step.student_width ? step.student_width : dc.hidden_width();
        ModelGraph student = build_detector(dc.n, dc.k, hidden, width, "FullyCon-student");
        for (const char* key : {"channel", "seed", "prune_t", "quant_bits"}) {
          const auto it = model.metadata().find(key);
          if (it != model.metadata().end()) student.metadata()[key] = it->second;
        }
        SeededRng s_init = master.fork(seed_stream::step_base + si + 2000);
        student.init_params(s_init);
        const TrainStats st = distill_train(model, student, data.train, data.val, step.lambda,
                                            cfg.schedule, step_rng);
        model = std::move(student);
        remaining = std::nan("");
        result.logs.push_back(detail::log_of(stage, cfg.seed, st));
      } else if (step.op == "decompose") {
        const size_t replaced = detail::decompose_all_convs(model, step.rank);
        const TrainStats st = train_model(model, data.train, data.val, retrain, step_rng);
        StageLog l = detail::log_of(stage, cfg.seed, st);
        l.note = "replaced=" + std::to_string(replaced);
        result.logs.push_back(l);
      }

      stage = "eval " + desc;
      detail::eval_rows(cfg, model, data, desc, remaining, result.rows);
      result.costs.emplace_back(desc, cost_report(model));
      const std::string path =
          out_dir + "/" + cfg.name + "_" + detail::sanitize_filename(desc) + ".nncm";
      save_model(model, StorageRep::automatic, path);
      result.artifacts.push_back(path);
    }

    stage = "report";
    emit_csv(result.rows, out_dir + "/results.csv");
    result.artifacts.push_back(out_dir + "/results.csv");
    std::string costs = "descriptor,weights,flops,bytes_dense32,bytes_current,saving,remaining\n";
    for (const auto& [desc, rpt] : result.costs) {
      costs += desc + "," + std::to_string(rpt.total_weights) + "," +
               std::to_string(rpt.total_flops) + "," + std::to_string(rpt.bytes_dense32) + "," +
               std::to_string(rpt.bytes_current) + "," + detail::fmt_g(rpt.saving) + "," +
               detail::fmt_g(rpt.remaining_overall) + "\n";
    }
    write_file_atomic(out_dir + "/costs.csv", costs);
    result.artifacts.push_back(out_dir + "/costs.csv");
  } catch (const ConfigError& e) {
    throw ConfigError(fail(e));
  } catch (const DataError& e) {
    throw DataError(fail(e));
  } catch (const NumericError& e) {
    throw NumericError(fail(e));
  } catch (const std::exception& e) {
    throw StateError(fail(e));
  }
  return result;
}

}  // namespace nncomp
