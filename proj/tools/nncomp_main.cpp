#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nncomp/accounting.hpp"
#include "nncomp/config.hpp"
#include "nncomp/datagen.hpp"
#include "nncomp/error.hpp"
#include "nncomp/eval.hpp"
#include "nncomp/model_io.hpp"
#include "nncomp/pipeline.hpp"
#include "nncomp/report.hpp"

namespace {

using namespace nncomp;

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool small = false;
  std::string out = "out";
  std::string snr_range;
  std::string cr_list;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config file");
  cmd->add_option("--seed", o.seed, "master seed override");
  cmd->add_flag("--small", o.small, "tenth-scale sample counts and epoch caps");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--snr", o.snr_range, "SNR sweep, a:b range or comma list of dB values");
  cmd->add_option("--cr", o.cr_list, "compression-ratio list, e.g. 4,8,16,32");
}

std::vector<double> parse_snr_arg(const std::string& s) {
  const auto colon = s.find(':');
  std::vector<double> out;
  if (colon != std::string::npos) {
    const double lo = detail::num(s.substr(0, colon), "--snr");
    const double hi = detail::num(s.substr(colon + 1), "--snr");
    if (hi < lo) throw ConfigError("--snr range must be ascending");
    for (double v = lo; v <= hi + 1e-12; v += 1.0) out.push_back(v);
    return out;
  }
  return detail::num_list(s, "--snr");
}

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    if (!std::filesystem::exists(o.config_path))
      throw ConfigError("config file not found: " + o.config_path);
    cfg = ExperimentConfig::from_file(o.config_path);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.snr_range.empty()) {
    cfg.snr_db = parse_snr_arg(o.snr_range);
    cfg.detection.snr_db = cfg.snr_db;
  }
  if (!o.cr_list.empty()) {
    cfg.cr_list.clear();
    for (double d : detail::num_list(o.cr_list, "--cr"))
      cfg.cr_list.push_back(static_cast<size_t>(d));
    cfg.feedback.cr = cfg.cr_list.front();
  }
  if (o.small && !cfg.small) cfg.apply_small();
  cfg.check();
  return cfg;
}

std::string snr_tag(double snr) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", snr);
  std::string s = buf;
  for (char& c : s)
    if (c == '.' || c == '-') c = '_';
  return s;
}

int cmd_gen_data(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_config(o);
  std::filesystem::create_directories(o.out);
  SeededRng master(cfg.seed);
  ExperimentData data = prepare_data(cfg, master);
  if (cfg.task == TaskKind::detection) {
    save_dataset(o.out + "/channel.nncd", data.channel);
    save_dataset(o.out + "/train_x.nncd", data.train.inputs);
    save_dataset(o.out + "/train_y.nncd", data.train.targets);
    save_dataset(o.out + "/val_x.nncd", data.val.inputs);
    save_dataset(o.out + "/val_y.nncd", data.val.targets);
    for (const auto& g : data.test_groups) {
      save_dataset(o.out + "/test_x_" + snr_tag(g.snr_db) + ".nncd", g.data.inputs);
      save_dataset(o.out + "/test_y_" + snr_tag(g.snr_db) + ".nncd", g.data.targets);
    }
    std::printf("wrote detection data for %zux%zu channel, %zu train / %zu val / %zu per SNR\n",
                cfg.detection.n, cfg.detection.k, data.train.size(), data.val.size(),
                cfg.test_count);
  } else {
    save_dataset(o.out + "/train_x.nncd", data.train.inputs, true, data.norm_min, data.norm_max);
    save_dataset(o.out + "/val_x.nncd", data.val.inputs, true, data.norm_min, data.norm_max);
    save_dataset(o.out + "/test_x.nncd", data.test.inputs, true, data.norm_min, data.norm_max);
    std::printf("wrote %s CSI data, %zu train / %zu val / %zu test\n",
                csi_scenario_name(cfg.scenario), data.train.size(), data.val.size(),
                data.test.size());
  }
  return 0;
}

int run_and_summarize(const ExperimentConfig& cfg, const std::string& out_dir) {
  const PipelineResult res = run_pipeline(cfg, out_dir);
  for (const auto& log : res.logs) {
    std::printf("stage %-24s seed=%llu epochs=%zu", log.stage.c_str(),
                static_cast<unsigned long long>(log.seed), log.epochs);
    if (!std::isnan(log.final_val_loss)) std::printf(" val_loss=%.6g", log.final_val_loss);
    if (!log.note.empty()) std::printf(" %s", log.note.c_str());
    std::printf("\n");
  }
  for (const auto& r : res.rows)
    std::printf("%s %s=%g %s: %.6g (n=%zu)\n", r.metric.c_str(), r.sweep.c_str(), r.coordinate,
                r.descriptor.c_str(), r.value, r.samples);
  std::printf("artifacts in %s\n", out_dir.c_str());
  return 0;
}

int cmd_pipeline(const CommonOpts& o) { return run_and_summarize(resolve_config(o), o.out); }

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o);
  cfg.plan.clear();
  return run_and_summarize(cfg, o.out);
}

int cmd_single_step(const CommonOpts& o, CompressionStep step) {
  ExperimentConfig cfg = resolve_config(o);
  cfg.plan = {std::move(step)};
  cfg.check();
  return run_and_summarize(cfg, o.out);
}

int cmd_eval(const CommonOpts& o, const std::string& model_path) {
  if (!std::filesystem::exists(model_path))
    throw ConfigError("model file not found: " + model_path);
  ExperimentConfig cfg = resolve_config(o);
  const ModelGraph model = load_model(model_path);
  std::filesystem::create_directories(o.out);
  SeededRng master(cfg.seed);
  std::vector<ResultRow> rows;
  if (cfg.task == TaskKind::detection) {
    const auto it = model.metadata().find("channel");
    if (it == model.metadata().end())
      throw DataError("model file lacks channel metadata; cannot rebuild the test set");
    const Tensor channel = detection_channel_from_text(it->second);
    cfg.detection.n = channel.dim(0);
    cfg.detection.k = channel.dim(1);
    ExperimentData data = prepare_data(cfg, master, &channel);
    for (const BerResult& b : eval_ber(model, data.test_groups)) {
      ResultRow r;
      r.metric = "BER";
      r.sweep = "snr_db";
      r.coordinate = b.snr_db;
      r.descriptor = model.name();
      r.value = b.ber;
      r.ci_lo = b.interval.lo;
      r.ci_hi = b.interval.hi;
      r.samples = b.total_bits;
      r.seed = cfg.seed;
      rows.push_back(r);
      std::printf("BER @ %g dB: %.6g [%.6g, %.6g]\n", b.snr_db, b.ber, b.interval.lo,
                  b.interval.hi);
    }
  } else {
    Dataset test;
    double norm_min = 0.0;
    double norm_max = 1.0;
    const auto lo_meta = model.metadata().find("norm_min");
    const auto hi_meta = model.metadata().find("norm_max");
    if (lo_meta != model.metadata().end() && hi_meta != model.metadata().end()) {
      const auto sc_meta = model.metadata().find("scenario");
      if (sc_meta != model.metadata().end()) cfg.scenario = parse_csi_scenario(sc_meta->second);
      norm_min = std::stod(lo_meta->second);
      norm_max = std::stod(hi_meta->second);
      SeededRng te = master.fork(seed_stream::test_data);
      test = gen_csi_dataset(cfg.scenario, cfg.test_count, te, norm_min, norm_max).data;
    } else {
      ExperimentData data = prepare_data(cfg, master);
      test = std::move(data.test);
      norm_min = data.norm_min;
      norm_max = data.norm_max;
    }
    const NmseResult n = eval_nmse(model, test, norm_min, norm_max);
    const auto cr_meta = model.metadata().find("cr");
    if (cr_meta != model.metadata().end())
      cfg.feedback.cr = static_cast<size_t>(std::stoull(cr_meta->second));
    ResultRow r;
    r.metric = "NMSE_dB";
    r.sweep = "cr";
    r.coordinate = static_cast<double>(cfg.feedback.cr);
    r.descriptor = model.name();
    r.value = n.nmse_db;
    r.samples = n.samples_used;
    r.seed = cfg.seed;
    rows.push_back(r);
    std::printf("NMSE @ CR=%zu: %.4f dB%s (n=%zu, %zu zero-norm excluded)\n", cfg.feedback.cr,
                n.nmse_db, n.capped ? " (capped)" : "", n.samples_used, n.zero_norm_excluded);
  }
  emit_csv(rows, o.out + "/eval.csv");
  std::printf("rows written to %s/eval.csv\n", o.out.c_str());
  return 0;
}

int cmd_report(const CommonOpts& o, const std::string& rows_path, const std::string& format) {
  if (!std::filesystem::exists(rows_path))
    throw ConfigError("rows file not found: " + rows_path);
  const std::vector<ResultRow> rows = parse_csv(read_file(rows_path));
  std::filesystem::create_directories(o.out);
  if (format == "csv") {
    emit_csv(rows, o.out + "/report.csv");
    std::printf("wrote %s/report.csv\n", o.out.c_str());
  } else if (format == "plotdata") {
    for (const std::string& path : emit_plotdata(rows, o.out))
      std::printf("wrote %s\n", path.c_str());
  } else {
    throw ConfigError("unknown report format '" + format + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-network compression toolkit for communication workloads"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, prune_o, quant_o, distill_o, decomp_o, eval_o, report_o, pipe_o;
  double threshold = 0.05;
  std::string granularity = "fine_grained";
  size_t bits = 7;
  double lambda = 0.7;
  size_t student_hidden = 0, student_width = 0;
  size_t rank = 1;
  std::string eval_model, report_rows;
  std::string report_format = "plotdata";

  add_common(app.add_subcommand("gen-data", "generate and save datasets"), gen_o);
  add_common(app.add_subcommand("train", "train the baseline model"), train_o);

  CLI::App* prune_cmd = app.add_subcommand("prune", "train, magnitude-prune, retrain");
  add_common(prune_cmd, prune_o);
  prune_cmd->add_option("--threshold", threshold, "magnitude threshold t");
  prune_cmd->add_option("--granularity", granularity, "fine_grained or filter_level");

  CLI::App* quant_cmd = app.add_subcommand("quantize", "train, k-means quantize, retrain");
  add_common(quant_cmd, quant_o);
  quant_cmd->add_option("--bits", bits, "codebook bit width B");

  CLI::App* distill_cmd = app.add_subcommand("distill", "train teacher, distill student");
  add_common(distill_cmd, distill_o);
  distill_cmd->add_option("--lambda", lambda, "soft-target weight in [0,1]");
  distill_cmd->add_option("--hidden", student_hidden, "student hidden layer count");
  distill_cmd->add_option("--width", student_width, "student hidden width");

  CLI::App* decomp_cmd = app.add_subcommand("decompose", "train, low-rank factorize, retrain");
  add_common(decomp_cmd, decomp_o);
  decomp_cmd->add_option("--rank", rank, "factorization rank r");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a saved model file");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--model", eval_model, "model .nncm file")->required();

  CLI::App* report_cmd = app.add_subcommand("report", "render result rows to files");
  add_common(report_cmd, report_o);
  report_cmd->add_option("--rows", report_rows, "results.csv from a pipeline run")->required();
  report_cmd->add_option("--format", report_format, "csv or plotdata");

  add_common(app.add_subcommand("pipeline", "full train + compression plan run"), pipe_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_o);
    if (app.got_subcommand("train")) return cmd_train(train_o);
    if (app.got_subcommand("prune")) {
      CompressionStep s;
      s.op = "prune";
      s.threshold = threshold;
      s.granularity = granularity;
      return cmd_single_step(prune_o, s);
    }
    if (app.got_subcommand("quantize")) {
      CompressionStep s;
      s.op = "quantize";
      s.bits = bits;
      return cmd_single_step(quant_o, s);
    }
    if (app.got_subcommand("distill")) {
      CompressionStep s;
      s.op = "distill";
      s.lambda = lambda;
      s.student_hidden = student_hidden;
      s.student_width = student_width;
      return cmd_single_step(distill_o, s);
    }
    if (app.got_subcommand("decompose")) {
      CompressionStep s;
      s.op = "decompose";
      s.rank = rank;
      return cmd_single_step(decomp_o, s);
    }
    if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_model);
    if (app.got_subcommand("report")) return cmd_report(report_o, report_rows, report_format);
    if (app.got_subcommand("pipeline")) return cmd_pipeline(pipe_o);
    std::fprintf(stderr, "no subcommand selected\n");
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
