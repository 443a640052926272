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

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tfer/experiment.hpp"

namespace {

// exit codes: 0 success, 2 config/validation, 3 numeric failure, 4 IO
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string dataset;
  std::string model;
  std::string bank;
  std::string method, strategy, placement, scorer;
  std::string sweep;
  double lambda_f = -1, lambda_orth = -1, tau = -1, lr = -1;
  long long seed = -1;
  int rank = -1, epochs = -1, batch_size = -1;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--dataset", f.dataset, "dataset file path");
  cmd->add_option("--model", f.model, "pretrained model checkpoint");
  cmd->add_option("--bank", f.bank, "prototype bank checkpoint");
  cmd->add_option("--method", f.method, "tfer | gradasc | rlft | retrain");
  cmd->add_option("--strategy", f.strategy,
                  "single | naive | orthogonal | both");
  cmd->add_option("--placement", f.placement, "layer1 | layer2 | both");
  cmd->add_option("--scorer", f.scorer,
                  "mahalanobis | neg_free_energy | max_similarity");
  cmd->add_option("--lambda-f", f.lambda_f, "push loss weight");
  cmd->add_option("--lambda-orth", f.lambda_orth, "orthogonality loss weight");
  cmd->add_option("--tau", f.tau, "protect temperature");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--seed", f.seed, "experiment seed");
  cmd->add_option("--rank", f.rank, "adapter rank");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
  cmd->add_option("--sweep", f.sweep, "KEY=V1,V2,... run once per value");
}

tfer::RunConfig resolve_config(const CommonFlags& f) {
  std::string text = "{}";
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) {
      throw tfer::ConfigError("cannot open config file " + f.config_path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  tfer::RunConfig cfg = tfer::RunConfig::from_json_text(text);
  // flags override config keys
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (!f.dataset.empty()) cfg.dataset_path = f.dataset;
  if (!f.model.empty()) cfg.model_path = f.model;
  if (!f.bank.empty()) cfg.bank_path = f.bank;
  if (!f.method.empty()) cfg.method = f.method;
  if (!f.strategy.empty()) cfg.strategy = f.strategy;
  if (!f.placement.empty()) cfg.placement = f.placement;
  if (!f.scorer.empty()) cfg.scorer = f.scorer;
  if (f.lambda_f >= 0) cfg.lambda_f = f.lambda_f;
  if (f.lambda_orth >= 0) cfg.lambda_orth = f.lambda_orth;
  if (f.tau >= 0) cfg.tau = f.tau;
  if (f.lr >= 0) cfg.lr = f.lr;
  if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
  if (f.rank >= 0) cfg.rank = f.rank;
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.batch_size >= 0) cfg.batch_size = f.batch_size;
  cfg.validate();
  return cfg;
}

std::pair<std::string, std::vector<double>> parse_sweep(
    const std::string& sweep) {
  const size_t eq = sweep.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= sweep.size()) {
    throw tfer::ConfigError("sweep: expected KEY=V1,V2,..., got '" + sweep +
                            "'");
  }
  const std::string key = sweep.substr(0, eq);
  std::vector<double> values;
  std::stringstream ss(sweep.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw tfer::ConfigError("sweep: bad value '" + item + "'");
    }
  }
  return {key, values};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"boundary-preserving class unlearning for hyperspherical "
               "prototype OOD detectors"};
  app.require_subcommand(1);

  CommonFlags synth_f, pretrain_f, unlearn_f, continual_f;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common_flags(synth, synth_f);
  CLI::App* pretrain =
      app.add_subcommand("pretrain", "train the base detector on all classes");
  add_common_flags(pretrain, pretrain_f);
  CLI::App* unlearn =
      app.add_subcommand("unlearn", "run one unlearning method + evaluation");
  add_common_flags(unlearn, unlearn_f);
  CLI::App* continual =
      app.add_subcommand("continual", "sequential unlearning over a task plan");
  add_common_flags(continual, continual_f);
  std::string report_csv;
  CLI::App* report =
      app.add_subcommand("report", "re-render a report CSV as markdown");
  report->add_option("csv", report_csv, "report.csv produced by a run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed()) {
      tfer::cmd_synth(resolve_config(synth_f));
    } else if (pretrain->parsed()) {
      tfer::cmd_pretrain(resolve_config(pretrain_f));
    } else if (unlearn->parsed()) {
      if (!unlearn_f.sweep.empty()) {
        auto [key, values] = parse_sweep(unlearn_f.sweep);
        tfer::cmd_unlearn(resolve_config(unlearn_f), key, values);
      } else {
        tfer::cmd_unlearn(resolve_config(unlearn_f));
      }
    } else if (continual->parsed()) {
      tfer::cmd_continual(resolve_config(continual_f));
    } else if (report->parsed()) {
      tfer::cmd_report(report_csv);
    }
  } catch (const tfer::NonFiniteLossError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const tfer::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const tfer::VersionMismatchError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const tfer::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const tfer::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
