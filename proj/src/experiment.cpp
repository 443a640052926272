// Copyright 2026 The tfer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tfer/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "tfer/rng.hpp"

namespace tfer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j,
             {"dataset", "synth", "forget_plan", "method", "strategy",
              "lambda_f", "lambda_orth", "tau", "placement", "rank", "epochs",
              "batch_size", "lr", "seed", "scorer", "protect_mode",
              "clip_max_norm", "orth_all_history", "pretrain", "out", "model",
              "bank"},
             "config");
  RunConfig cfg;
  read_field(j, "dataset", cfg.dataset_path);
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s,
               {"classes", "per_class", "d", "kappa", "ood_sets",
                "ood_per_set", "pair_angle_min", "pair_angle_max", "mean_kappa"},
               "synth");
    read_field(s, "classes", cfg.synth.classes);
    read_field(s, "per_class", cfg.synth.per_class);
    read_field(s, "d", cfg.synth.d);
    read_field(s, "kappa", cfg.synth.kappa);
    read_field(s, "ood_sets", cfg.synth.ood_sets);
    read_field(s, "ood_per_set", cfg.synth.ood_per_set);
    read_field(s, "pair_angle_min", cfg.synth.pair_angle_min);
    read_field(s, "pair_angle_max", cfg.synth.pair_angle_max);
    read_field(s, "mean_kappa", cfg.synth.mean_kappa);
  }
  read_field(j, "forget_plan", cfg.forget_plan);
  read_field(j, "method", cfg.method);
  read_field(j, "strategy", cfg.strategy);
  read_field(j, "lambda_f", cfg.lambda_f);
  read_field(j, "lambda_orth", cfg.lambda_orth);
  read_field(j, "tau", cfg.tau);
  read_field(j, "placement", cfg.placement);
  read_field(j, "rank", cfg.rank);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "batch_size", cfg.batch_size);
  read_field(j, "lr", cfg.lr);
  read_field(j, "seed", cfg.seed);
  read_field(j, "scorer", cfg.scorer);
  read_field(j, "protect_mode", cfg.protect_mode);
  read_field(j, "clip_max_norm", cfg.clip_max_norm);
  read_field(j, "orth_all_history", cfg.orth_all_history);
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p,
               {"epochs", "batch_size", "lr", "tau", "hidden_dim", "out_dim",
                "proto_k", "bank_kappa"},
               "pretrain");
    read_field(p, "epochs", cfg.pretrain_cfg.epochs);
    read_field(p, "batch_size", cfg.pretrain_cfg.batch_size);
    read_field(p, "lr", cfg.pretrain_cfg.lr);
    read_field(p, "tau", cfg.pretrain_cfg.tau);
    read_field(p, "hidden_dim", cfg.pretrain_cfg.hidden_dim);
    read_field(p, "out_dim", cfg.pretrain_cfg.out_dim);
    read_field(p, "proto_k", cfg.pretrain_cfg.proto_k);
    read_field(p, "bank_kappa", cfg.pretrain_cfg.bank_kappa);
  }
  read_field(j, "out", cfg.out_dir);
  read_field(j, "model", cfg.model_path);
  read_field(j, "bank", cfg.bank_path);
  cfg.validate();
  return cfg;
}

std::string RunConfig::to_json_text() const {
  json j;
  if (!dataset_path.empty()) j["dataset"] = dataset_path;
  j["synth"] = {{"classes", synth.classes},   {"per_class", synth.per_class},
                {"d", synth.d},               {"kappa", synth.kappa},
                {"ood_sets", synth.ood_sets}, {"ood_per_set", synth.ood_per_set},
                {"pair_angle_min", synth.pair_angle_min},
                {"pair_angle_max", synth.pair_angle_max},
                {"mean_kappa", synth.mean_kappa}};
  j["forget_plan"] = forget_plan;
  j["method"] = method;
  j["strategy"] = strategy;
  j["lambda_f"] = lambda_f;
  j["lambda_orth"] = lambda_orth;
  j["tau"] = tau;
  j["placement"] = placement;
  j["rank"] = rank;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["seed"] = seed;
  j["scorer"] = scorer;
  j["protect_mode"] = protect_mode;
  j["clip_max_norm"] = clip_max_norm;
  j["orth_all_history"] = orth_all_history;
  j["pretrain"] = {{"epochs", pretrain_cfg.epochs},
                   {"batch_size", pretrain_cfg.batch_size},
                   {"lr", pretrain_cfg.lr},
                   {"tau", pretrain_cfg.tau},
                   {"hidden_dim", pretrain_cfg.hidden_dim},
                   {"out_dim", pretrain_cfg.out_dim},
                   {"proto_k", pretrain_cfg.proto_k},
                   {"bank_kappa", pretrain_cfg.bank_kappa}};
  if (!out_dir.empty()) j["out"] = out_dir;
  if (!model_path.empty()) j["model"] = model_path;
  if (!bank_path.empty()) j["bank"] = bank_path;
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  if (method != "tfer" && method != "gradasc" && method != "rlft" &&
      method != "retrain") {
    throw ConfigError("field 'method': unknown method '" + method + "'");
  }
  if (strategy != "single" && strategy != "naive" && strategy != "orthogonal" &&
      strategy != "both") {
    throw ConfigError("field 'strategy': unknown strategy '" + strategy + "'");
  }
  if (protect_mode != "hard_max" && protect_mode != "soft_mixture") {
    throw ConfigError("field 'protect_mode': unknown mode '" + protect_mode +
                      "'");
  }
  score_kind_from_string(scorer);     // throws ConfigError
  placement_from_string(placement);   // throws ConfigError
  if (dataset_path.empty()) {
    if (synth.classes < 2) throw ConfigError("field 'synth.classes': must be >= 2");
    if (synth.per_class < 20)
      throw ConfigError("field 'synth.per_class': must be >= 20");
    if (synth.d < 2) throw ConfigError("field 'synth.d': must be >= 2");
    if (synth.kappa < 0) throw ConfigError("field 'synth.kappa': must be >= 0");
    if (synth.ood_sets < 0)
      throw ConfigError("field 'synth.ood_sets': must be >= 0");
    if (synth.ood_sets > 0 && synth.ood_per_set < 1)
      throw ConfigError("field 'synth.ood_per_set': must be >= 1");
    if (synth.pair_angle_min < 0 || synth.pair_angle_max < synth.pair_angle_min)
      throw ConfigError("field 'synth.pair_angle_min/max': need 0 <= min <= max");
    if (synth.mean_kappa < 0)
      throw ConfigError("field 'synth.mean_kappa': must be >= 0");
  }
  if (!(lambda_f >= 0)) throw ConfigError("field 'lambda_f': must be >= 0");
  if (!(lambda_orth >= 0)) throw ConfigError("field 'lambda_orth': must be >= 0");
  if (!(tau > 0)) throw ConfigError("field 'tau': must be > 0");
  if (rank < 1) throw ConfigError("field 'rank': must be >= 1");
  if (epochs < 0) throw ConfigError("field 'epochs': must be >= 0");
  if (batch_size < 1) throw ConfigError("field 'batch_size': must be >= 1");
  if (!(lr >= 0)) throw ConfigError("field 'lr': must be >= 0");
  try {
    pretrain_cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("field 'pretrain': ") + e.what());
  }
}

UnlearnConfig RunConfig::unlearn_config(const std::vector<int>& forget) const {
  UnlearnConfig u;
  u.forget_classes = forget;
  u.weights.lambda_f = lambda_f;
  u.weights.lambda_orth = lambda_orth;
  u.weights.tau = tau;
  u.epochs = epochs;
  u.batch_size = batch_size;
  u.lr = lr;
  u.seed = seed;
  u.rank = rank;
  u.placement = placement_from_string(placement);
  u.protect_mode = protect_mode == "hard_max" ? ProtectMode::kHardMax
                                              : ProtectMode::kSoftMixture;
  u.clip_max_norm = clip_max_norm;
  u.orth_all_history = orth_all_history;
  u.scorer = scorer_kind();
  u.hidden_dim = pretrain_cfg.hidden_dim;
  u.out_dim = pretrain_cfg.out_dim;
  u.proto_k = pretrain_cfg.proto_k;
  u.bank_kappa = pretrain_cfg.bank_kappa;
  return u;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p = pretrain_cfg;
  p.seed = seed;
  p.protect_mode = protect_mode == "hard_max" ? ProtectMode::kHardMax
                                              : ProtectMode::kSoftMixture;
  return p;
}

EmbeddingDataset obtain_dataset(const RunConfig& cfg) {
  if (!cfg.dataset_path.empty()) {
    if (!fs::exists(cfg.dataset_path)) {
      throw ConfigError("field 'dataset': no file at " + cfg.dataset_path);
    }
    return load_dataset(cfg.dataset_path);
  }
  SynthConfig s = cfg.synth;
  s.seed = cfg.seed;
  return generate_synthetic(s);
}

MethodRunResult run_method(const EmbeddingDataset& ds,
                           const Projector& pre_projector,
                           const PrototypeBank& pre_bank,
                           const RunConfig& cfg) {
  ForgetPlan plan{cfg.forget_plan};
  plan.validate(ds.n_classes);
  require(!cfg.forget_plan.empty(), "run_method: empty forget plan");
  const std::vector<int>& forget = cfg.forget_plan.front();
  const ScoreKind kind = cfg.scorer_kind();

  AdapterStack empty_stack;
  MethodRunResult out{
      evaluate(pre_projector, empty_stack, pre_bank, ds, forget, kind),
      EvalReport{},
      TrainLog{},
      0.0,
      0,
      pre_projector.param_count(),
      pre_projector,
      AdapterStack{},
      pre_bank};
  out.original.label = "original";

  const UnlearnConfig ucfg = cfg.unlearn_config(forget);
  const double t0 = now_seconds();
  if (cfg.method == "retrain") {
    RetrainResult r = baseline_retrain(ds, ucfg);
    out.seconds = now_seconds() - t0;
    out.log = std::move(r.log);
    out.projector = std::move(r.projector);
    out.stack = AdapterStack{};
    out.bank = std::move(r.bank);
    out.trainable_params = out.projector.param_count();
  } else {
    AdapterStack stack;
    PrototypeBank bank = pre_bank;
    TrainLog log;
    if (cfg.method == "tfer") {
      log = unlearn_tfer(pre_projector, stack, bank, ds, ucfg);
    } else if (cfg.method == "gradasc") {
      log = baseline_grad_ascent(pre_projector, stack, bank, ds, ucfg);
    } else if (cfg.method == "rlft") {
      log = baseline_random_label(pre_projector, stack, bank, ds, ucfg);
    } else {
      throw ConfigError("run_method: unknown method '" + cfg.method + "'");
    }
    out.seconds = now_seconds() - t0;
    out.log = std::move(log);
    out.projector = pre_projector;
    stack.set_active(stack.tasks().back().task_id);
    out.trainable_params = trainable_param_count(stack);
    stack.freeze_all();
    out.stack = std::move(stack);
    out.bank = std::move(bank);
  }
  out.post = evaluate(out.projector, out.stack, out.bank, ds, forget, kind);
  out.post.label = cfg.method;
  return out;
}

ContinualRunOutcome run_continual_strategy(const EmbeddingDataset& ds,
                                           const Projector& pre_projector,
                                           const PrototypeBank& pre_bank,
                                           const RunConfig& cfg,
                                           ContinualStrategy strategy) {
  require(cfg.method == "tfer",
          "continual unlearning is defined for the tfer method");
  ContinualRunOutcome out{strategy, ContinualResult{}, AdapterStack{},
                          pre_bank};
  out.result = unlearn_continual(pre_projector, out.stack, out.bank, ds,
                                 cfg.forget_plan, cfg.unlearn_config({}),
                                 strategy);
  return out;
}

// ---------------------------------------------------------------------------
// command pipelines
// ---------------------------------------------------------------------------

namespace {

fs::path ensure_out_dir(const RunConfig& cfg) {
  require(!cfg.out_dir.empty(), "output directory not set");
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "config.json", cfg.to_json_text());
}

std::string summary_json(const RunConfig& cfg, double seconds,
                         long trainable_params, long full_params) {
  json j;
  j["method"] = cfg.method;
  j["seed"] = cfg.seed;
  j["wall_time_sec"] = seconds;
  j["trainable_params"] = trainable_params;
  j["full_projector_params"] = full_params;
  return j.dump(2) + "\n";
}

std::pair<Projector, PrototypeBank> pretrained_from_config(
    const RunConfig& cfg, const EmbeddingDataset& ds, double* seconds) {
  if (!cfg.model_path.empty()) {
    if (!fs::exists(cfg.model_path)) {
      throw ConfigError("field 'model': no file at " + cfg.model_path);
    }
    require(!cfg.bank_path.empty(),
            "field 'bank': required when 'model' is given");
    if (!fs::exists(cfg.bank_path)) {
      throw ConfigError("field 'bank': no file at " + cfg.bank_path);
    }
    auto [projector, stack] = load_model(cfg.model_path);
    require(stack.empty(),
            "field 'model': expected a pretrained checkpoint without adapters");
    return {std::move(projector), load_bank(cfg.bank_path)};
  }
  const double t0 = now_seconds();
  PretrainResult pre = pretrain(ds, cfg.pretrain_config());
  if (seconds) *seconds = now_seconds() - t0;
  return {std::move(pre.projector), std::move(pre.bank)};
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  SynthConfig s = cfg.synth;
  s.seed = cfg.seed;
  const EmbeddingDataset ds = generate_synthetic(s);
  const fs::path path = cfg.dataset_path.empty()
                            ? dir / "dataset.tferds"
                            : fs::path(cfg.dataset_path);
  const std::vector<uint8_t> bytes = serialize_dataset(ds);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
  }
  echo_config(cfg, dir);
  std::cout << "dataset: " << path.string() << "\n"
            << "classes: " << ds.n_classes << "  d: " << ds.d
            << "  train: " << ds.train_X.rows() << "  test: " << ds.test_X.rows()
            << "\n";
  for (const auto& set : ds.external) {
    std::cout << "ood set: " << set.name << " (" << set.X.rows() << ")\n";
  }
  std::cout << "crc32: " << crc32(bytes.data(), bytes.size() - 4) << "\n";
}

void cmd_pretrain(const RunConfig& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  const EmbeddingDataset ds = obtain_dataset(cfg);
  const double t0 = now_seconds();
  PretrainResult pre = pretrain(ds, cfg.pretrain_config());
  const double seconds = now_seconds() - t0;
  AdapterStack empty_stack;
  EvalReport report =
      evaluate(pre.projector, empty_stack, pre.bank, ds, {}, cfg.scorer_kind());
  report.label = "pretrained";

  save_model(pre.projector, empty_stack, (dir / "model.tfermdl").string());
  save_bank(pre.bank, (dir / "bank.tferbnk").string());
  write_text(dir / "report.csv", reports_to_csv({report}));
  write_text(dir / "report.md", reports_to_markdown({report}));
  write_text(dir / "trainlog.csv", pre.log.to_csv());
  write_text(dir / "summary.json",
             summary_json(cfg, seconds, pre.projector.param_count(),
                          pre.projector.param_count()));
  echo_config(cfg, dir);
  std::cout << reports_to_markdown({report});
  std::cout << "accuracy (all classes): " << report.retain_acc << "\n"
            << "wall time (s): " << seconds << "\n";
}

void cmd_unlearn(const RunConfig& cfg, const std::string& sweep_key,
                 const std::vector<double>& sweep_values) {
  if (!sweep_key.empty()) {
    require(!sweep_values.empty(), "sweep: no values given");
    std::vector<std::string> lines;
    std::vector<EvalReport> combined;
    for (double v : sweep_values) {
      RunConfig sub = cfg;
      if (sweep_key == "lambda_f") {
        sub.lambda_f = v;
      } else if (sweep_key == "lambda_orth") {
        sub.lambda_orth = v;
      } else if (sweep_key == "tau") {
        sub.tau = v;
      } else if (sweep_key == "lr") {
        sub.lr = v;
      } else if (sweep_key == "rank") {
        sub.rank = static_cast<int>(v);
      } else if (sweep_key == "epochs") {
        sub.epochs = static_cast<int>(v);
      } else if (sweep_key == "seed") {
        sub.seed = static_cast<uint64_t>(v);
      } else {
        throw ConfigError("sweep: unsupported key '" + sweep_key + "'");
      }
      std::ostringstream tag;
      tag << sweep_key << "_" << v;
      sub.out_dir = (fs::path(cfg.out_dir) / tag.str()).string();
      cmd_unlearn(sub);
      const std::string csv = [&] {
        std::ifstream f(fs::path(sub.out_dir) / "report.csv");
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
      }();
      for (auto& r : reports_from_csv(csv)) {
        r.label = tag.str() + "_" + r.label;
        combined.push_back(std::move(r));
      }
    }
    const fs::path dir = ensure_out_dir(cfg);
    write_text(dir / "sweep.csv", reports_to_csv(combined));
    std::cout << reports_to_markdown(combined);
    return;
  }

  const fs::path dir = ensure_out_dir(cfg);
  const EmbeddingDataset ds = obtain_dataset(cfg);
  auto [pre_projector, pre_bank] = pretrained_from_config(cfg, ds, nullptr);
  const MethodRunResult res = run_method(ds, pre_projector, pre_bank, cfg);

  save_model(res.projector, res.stack, (dir / "model.tfermdl").string());
  save_bank(res.bank, (dir / "bank.tferbnk").string());
  const std::vector<EvalReport> reports{res.original, res.post};
  write_text(dir / "report.csv", reports_to_csv(reports));
  write_text(dir / "report.md", reports_to_markdown(reports));
  write_text(dir / "trainlog.csv", res.log.to_csv());
  write_text(dir / "summary.json",
             summary_json(cfg, res.seconds, res.trainable_params,
                          res.full_params));
  echo_config(cfg, dir);

  std::cout << reports_to_markdown(reports);
  const auto delta = [](std::optional<double> a, std::optional<double> b) {
    return (a && b) ? 100.0 * (*a - *b) : 0.0;
  };
  std::cout << "delta vs original: forget_fpr95 "
            << delta(res.post.forget_fpr95, res.original.forget_fpr95)
            << " points, retain_acc "
            << 100.0 * (res.post.retain_acc - res.original.retain_acc)
            << " points, avg_ood_auroc "
            << 100.0 * (res.post.avg_ood_auroc - res.original.avg_ood_auroc)
            << " points\n";
  std::cout << "trainable params: " << res.trainable_params << " / "
            << res.full_params << "\n"
            << "wall time (s): " << res.seconds << "\n";
}

void cmd_continual(const RunConfig& cfg) {
  const fs::path dir = ensure_out_dir(cfg);
  require(cfg.forget_plan.size() >= 1, "continual: need at least one task");
  const EmbeddingDataset ds = obtain_dataset(cfg);
  auto [pre_projector, pre_bank] = pretrained_from_config(cfg, ds, nullptr);

  std::vector<ContinualStrategy> strategies;
  if (cfg.strategy == "both") {
    strategies = {ContinualStrategy::kOrthogonal, ContinualStrategy::kNaive};
  } else if (cfg.strategy == "naive") {
    strategies = {ContinualStrategy::kNaive};
  } else {
    strategies = {ContinualStrategy::kOrthogonal};
  }

  std::ostringstream trajectory;
  trajectory << "strategy,task,historical_forget_set,fpr95\n";
  std::vector<EvalReport> reports;
  for (ContinualStrategy strategy : strategies) {
    const ContinualRunOutcome outcome =
        run_continual_strategy(ds, pre_projector, pre_bank, cfg, strategy);
    for (const auto& task : outcome.result.tasks) {
      reports.push_back(task.report);
      for (const auto& [hist, fpr] : task.historical_fpr95) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.1f\n",
                      to_string(strategy).c_str(), task.task_index, hist,
                      100.0 * fpr);
        trajectory << buf;
      }
    }
    const std::string suffix = to_string(strategy);
    save_model(pre_projector, outcome.stack,
               (dir / ("model_" + suffix + ".tfermdl")).string());
    save_bank(outcome.bank, (dir / ("bank_" + suffix + ".tferbnk")).string());
  }
  write_text(dir / "report.csv", reports_to_csv(reports));
  write_text(dir / "report.md", reports_to_markdown(reports));
  write_text(dir / "trajectory.csv", trajectory.str());
  echo_config(cfg, dir);
  std::cout << reports_to_markdown(reports);
  std::cout << trajectory.str();
}

void cmd_report(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open " + csv_path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::vector<EvalReport> reports = reports_from_csv(ss.str());
  std::cout << reports_to_markdown(reports);
}

}  // namespace tfer
