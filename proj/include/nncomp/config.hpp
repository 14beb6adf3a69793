#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "binio.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "model_zoo.hpp"
#include "train.hpp"

namespace nncomp {

// Line-oriented config text: [section] headers, key value pairs, # or ;
// comments. Keys repeat (order preserved); lookups take the last occurrence.
struct ConfigFile {
  struct Entry {
    std::string key;
    std::string value;
    size_t line = 0;
  };
  std::map<std::string, std::vector<Entry>> sections;

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  const Entry* find(const std::string& section, const std::string& key) const {
    const auto it = sections.find(section);
    if (it == sections.end()) return nullptr;
    const Entry* hit = nullptr;
    for (const auto& e : it->second)
      if (e.key == key) hit = &e;
    return hit;
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const Entry* e = find(section, key);
    return e ? e->value : fallback;
  }

  std::string require(const std::string& section, const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) throw ConfigError("config: missing [" + section + "] " + key);
    return e->value;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double num(const std::string& v, const std::string& what) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: " + what + " expects a number, got '" + v + "'");
  }
}

inline uint64_t unum(const std::string& v, const std::string& what) {
  const double d = num(v, what);
  if (d < 0 || d != static_cast<double>(static_cast<uint64_t>(d)))
    throw ConfigError("config: " + what + " expects a non-negative integer, got '" + v + "'");
  return static_cast<uint64_t>(d);
}

inline std::vector<double> num_list(const std::string& v, const std::string& what) {
  std::vector<double> out;
  std::istringstream in(v);
  std::string tok;
  while (in >> tok) {
    for (char& c : tok)
      if (c == ',') c = ' ';
    std::istringstream sub(tok);
    std::string part;
    while (sub >> part) out.push_back(num(part, what));
  }
  if (out.empty()) throw ConfigError("config: " + what + " expects a list of numbers");
  return out;
}

}  // namespace detail

inline ConfigFile parse_config_text(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section '" +
                          raw + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      cfg.sections[section];
      continue;
    }
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key before any [section]");
    const auto sp = line.find_first_of(" \t=");
    const std::string key = line.substr(0, sp);
    std::string value;
    if (sp != std::string::npos) {
      value = line.substr(sp + 1);
      if (!value.empty() && value.front() == '=') value = value.substr(1);
      value = detail::trim(value);
    }
    cfg.sections[section].push_back({key, value, lineno});
  }
  return cfg;
}

inline ConfigFile parse_config_file(const std::string& path) {
  return parse_config_text(read_file(path));
}

enum class TaskKind { detection, csi_feedback };

inline const char* task_name(TaskKind t) {
  return t == TaskKind::detection ? "detection" : "csi_feedback";
}

inline TaskKind parse_task(const std::string& s) {
  if (s == "detection") return TaskKind::detection;
  if (s == "csi_feedback") return TaskKind::csi_feedback;
  throw ConfigError("config: unknown task '" + s + "'");
}

// One ordered compression step of a pipeline plan.
struct CompressionStep {
  std::string op;  // prune | quantize | distill | decompose
  double threshold = 0.0;
  std::string granularity = "fine_grained";
  size_t bits = 0;
  double lambda = 0.7;
  size_t student_hidden = 0;
  size_t student_width = 0;
  size_t rank = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskKind task = TaskKind::detection;
  uint64_t seed = 1;
  bool small = false;

  // dataset
  CsiScenario scenario = CsiScenario::indoor_like;
  size_t train_count = 100000;
  size_t val_count = 30000;
  size_t test_count = 20000;  // per sweep coordinate

  // model
  std::string architecture = "fullycon";
  DetectionConfig detection;
  FeedbackConfig feedback;

  // training
  TrainSchedule schedule;
  double retrain_lr = 0.0001;
  size_t retrain_epoch_cap = 0;  // 0: same cap as schedule

  // compression plan, applied in order
  std::vector<CompressionStep> plan;

  // evaluation sweep
  std::vector<double> snr_db = {8, 9, 10, 11, 12, 13};
  std::vector<size_t> cr_list = {4, 8, 16, 32};

  static ExperimentConfig from_config(const ConfigFile& cfg);
  static ExperimentConfig from_file(const std::string& path) {
    return from_config(parse_config_file(path));
  }
  static ExperimentConfig from_text(const std::string& text) {
    return from_config(parse_config_text(text));
  }

  // --small keeps the protocol shape at a tenth of the sample and epoch scale
  void apply_small() {
    small = true;
    auto shrink = [](size_t v) { return std::max<size_t>(1, v / 10); };
    train_count = shrink(train_count);
    val_count = shrink(val_count);
    test_count = shrink(test_count);
    schedule.max_epochs = shrink(schedule.max_epochs);
    if (retrain_epoch_cap) retrain_epoch_cap = shrink(retrain_epoch_cap);
  }

  TrainSchedule retrain_schedule() const {
    TrainSchedule s = schedule;
    s.lr = retrain_lr;
    if (retrain_epoch_cap) s.max_epochs = retrain_epoch_cap;
    return s;
  }

  void check() const {
    if (train_count == 0 || val_count == 0 || test_count == 0)
      throw ConfigError("config: dataset sizes must be positive");
    if (task == TaskKind::detection) {
      detection.check();
      if (snr_db.empty()) throw ConfigError("config: detection needs an SNR sweep");
    } else {
      feedback.check();
    }
    for (const auto& step : plan) {
      if (step.op == "prune") {
        if (step.threshold < 0) throw ConfigError("config: prune threshold must be >= 0");
      } else if (step.op == "quantize") {
        if (step.bits < 2 || step.bits > 16)
          throw ConfigError("config: quantize bits must lie in [2, 16]");
      } else if (step.op == "distill") {
        if (step.lambda < 0 || step.lambda > 1)
          throw ConfigError("config: distill lambda must lie in [0, 1]");
      } else if (step.op == "decompose") {
        if (step.rank == 0) throw ConfigError("config: decompose rank must be >= 1");
      } else {
        throw ConfigError("config: unknown compression op '" + step.op + "'");
      }
    }
    for (size_t i = 1; i < plan.size(); ++i) {
      if (plan[i].op == "prune" && plan[i - 1].op == "quantize")
        throw ConfigError("config: pruning after quantization would break codebooks");
      if (plan[i].op == "decompose")
        for (size_t j = 0; j < i; ++j)
          if (plan[j].op == "prune" || plan[j].op == "quantize")
            throw ConfigError("config: decompose must precede pruning and quantization");
    }
  }
};

namespace detail {

inline CompressionStep parse_step(const std::string& value) {
  std::istringstream in(value);
  CompressionStep step;
  if (!(in >> step.op)) throw ConfigError("config: empty compression step");
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: step option '" + tok + "' must look like key=value");
    const std::string k = tok.substr(0, eq);
    const std::string v = tok.substr(eq + 1);
    if (k == "t" || k == "threshold")
      step.threshold = num(v, "step threshold");
    else if (k == "granularity")
      step.granularity = v;
    else if (k == "bits" || k == "B")
      step.bits = static_cast<size_t>(unum(v, "step bits"));
    else if (k == "lambda")
      step.lambda = num(v, "step lambda");
    else if (k == "hidden")
      step.student_hidden = static_cast<size_t>(unum(v, "step hidden"));
    else if (k == "width")
      step.student_width = static_cast<size_t>(unum(v, "step width"));
    else if (k == "rank")
      step.rank = static_cast<size_t>(unum(v, "step rank"));
    else
      throw ConfigError("config: unknown step option '" + k + "'");
  }
  return step;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_config(const ConfigFile& cfg) {
  static const std::map<std::string, std::vector<std::string>> known = {
      {"experiment", {"name", "task", "seed", "small"}},
      {"dataset", {"scenario", "train", "val", "test"}},
      {"model", {"architecture", "n", "k", "hidden", "cr"}},
      {"train", {"lr", "retrain_lr", "batch", "epochs", "retrain_epochs", "patience",
                 "min_rel_improve", "loss"}},
      {"compress", {"step"}},
      {"eval", {"snr", "cr"}},
  };
  for (const auto& [section, entries] : cfg.sections) {
    const auto it = known.find(section);
    if (it == known.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& e : entries) {
      bool ok = false;
      for (const auto& k : it->second) ok = ok || k == e.key;
      if (!ok)
        throw ConfigError("config line " + std::to_string(e.line) + ": unknown key '" + e.key +
                          "' in [" + section + "]");
    }
  }

  ExperimentConfig ec;
  ec.name = cfg.get("experiment", "name", ec.name);
  ec.task = parse_task(cfg.get("experiment", "task", "detection"));
  ec.seed = detail::unum(cfg.get("experiment", "seed", "1"), "seed");
  if (ec.task == TaskKind::csi_feedback) {
    ec.train_count = 80000;
    ec.val_count = 10000;
    ec.test_count = 10000;
    ec.schedule.max_epochs = 500;
    ec.architecture = "convcsinet";
  }
  ec.scenario = parse_csi_scenario(cfg.get("dataset", "scenario", "indoor"));
  ec.train_count = detail::unum(cfg.get("dataset", "train", std::to_string(ec.train_count)),
                                "dataset train");
  ec.val_count =
      detail::unum(cfg.get("dataset", "val", std::to_string(ec.val_count)), "dataset val");
  ec.test_count =
      detail::unum(cfg.get("dataset", "test", std::to_string(ec.test_count)), "dataset test");
  ec.architecture = cfg.get("model", "architecture", ec.architecture);
  ec.detection.n = detail::unum(cfg.get("model", "n", "30"), "model n");
  ec.detection.k = detail::unum(cfg.get("model", "k", "20"), "model k");
  ec.detection.hidden_count = detail::unum(cfg.get("model", "hidden", "6"), "model hidden");
  ec.feedback.cr = detail::unum(cfg.get("model", "cr", "4"), "model cr");
  ec.schedule.lr = detail::num(cfg.get("train", "lr", "0.001"), "train lr");
  ec.retrain_lr = detail::num(cfg.get("train", "retrain_lr", "0.0001"), "train retrain_lr");
  ec.schedule.batch_size = detail::unum(cfg.get("train", "batch", "1000"), "train batch");
  ec.schedule.max_epochs = detail::unum(
      cfg.get("train", "epochs", std::to_string(ec.schedule.max_epochs)), "train epochs");
  ec.retrain_epoch_cap =
      detail::unum(cfg.get("train", "retrain_epochs", "0"), "train retrain_epochs");
  ec.schedule.patience = detail::unum(cfg.get("train", "patience", "10"), "train patience");
  ec.schedule.min_rel_improve =
      detail::num(cfg.get("train", "min_rel_improve", "0.0001"), "train min_rel_improve");
  const std::string loss = cfg.get("train", "loss", ec.task == TaskKind::detection ? "bce" : "mse");
  if (loss == "bce")
    ec.schedule.loss = LossKind::bce;
  else if (loss == "mse")
    ec.schedule.loss = LossKind::mse;
  else
    throw ConfigError("config: unknown loss '" + loss + "'");
  if (cfg.has("eval", "snr")) ec.snr_db = detail::num_list(cfg.require("eval", "snr"), "eval snr");
  if (cfg.has("eval", "cr")) {
    ec.cr_list.clear();
    for (double d : detail::num_list(cfg.require("eval", "cr"), "eval cr"))
      ec.cr_list.push_back(static_cast<size_t>(d));
  }
  ec.detection.snr_db = ec.snr_db;
  const auto cit = cfg.sections.find("compress");
  if (cit != cfg.sections.end())
    for (const auto& e : cit->second) ec.plan.push_back(detail::parse_step(e.value));
  if (cfg.get("experiment", "small", "0") == "1") ec.apply_small();
  ec.check();
  return ec;
}

}  // namespace nncomp
