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

#pragma once

#include <string>
#include <vector>

#include "tfer/data.hpp"
#include "tfer/detection.hpp"
#include "tfer/training.hpp"

namespace tfer {

/// Full declarative experiment description. Parsed from a JSON document with
/// strict validation: unknown keys are rejected, every field is checked
/// before any compute starts.
struct RunConfig {
  std::string dataset_path;  // empty -> synthesize from `synth`
  SynthConfig synth;
  std::vector<std::vector<int>> forget_plan{{8, 9}};
  std::string method = "tfer";      // tfer | gradasc | rlft | retrain
  std::string strategy = "single";  // single | naive | orthogonal | both
  double lambda_f = 1.0;
  double lambda_orth = 1.0;
  double tau = 0.1;
  std::string placement = "both";
  int rank = 4;
  int epochs = 200;
  int batch_size = 64;
  double lr = 3e-4;
  uint64_t seed = 1;
  std::string scorer = "mahalanobis";
  std::string protect_mode = "hard_max";  // hard_max | soft_mixture
  double clip_max_norm = 10.0;
  bool orth_all_history = false;
  PretrainConfig pretrain_cfg;
  std::string out_dir;
  std::string model_path;  // pretrained checkpoint (input for unlearn)
  std::string bank_path;

  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  void validate() const;

  UnlearnConfig unlearn_config(const std::vector<int>& forget) const;
  PretrainConfig pretrain_config() const;
  ScoreKind scorer_kind() const { return score_kind_from_string(scorer); }
};

EmbeddingDataset obtain_dataset(const RunConfig& cfg);

struct MethodRunResult {
  EvalReport original;  // pretrained model under the same forget plan
  EvalReport post;
  TrainLog log;
  double seconds = 0.0;
  long trainable_params = 0;
  long full_params = 0;
  Projector projector;
  AdapterStack stack;
  PrototypeBank bank;
};

/// Runs one unlearning method (task 0 of the forget plan) against a
/// pretrained model. For method == "retrain" the projector and bank are the
/// retrained ones and the stack is empty.
MethodRunResult run_method(const EmbeddingDataset& ds,
                           const Projector& pre_projector,
                           const PrototypeBank& pre_bank,
                           const RunConfig& cfg);

struct ContinualRunOutcome {
  ContinualStrategy strategy;
  ContinualResult result;
  AdapterStack stack;
  PrototypeBank bank;
};

ContinualRunOutcome run_continual_strategy(const EmbeddingDataset& ds,
                                           const Projector& pre_projector,
                                           const PrototypeBank& pre_bank,
                                           const RunConfig& cfg,
                                           ContinualStrategy strategy);

/// Command pipelines backing the CLI subcommands; they write artifacts under
/// cfg.out_dir and print a short summary to stdout.
void cmd_synth(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_unlearn(const RunConfig& cfg, const std::string& sweep_key = "",
                 const std::vector<double>& sweep_values = {});
void cmd_continual(const RunConfig& cfg);
void cmd_report(const std::string& csv_path);

}  // namespace tfer
