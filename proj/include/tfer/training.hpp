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

#include <cstdint>
#include <string>
#include <vector>

#include "tfer/common.hpp"
#include "tfer/data.hpp"
#include "tfer/detection.hpp"
#include "tfer/losses.hpp"
#include "tfer/model.hpp"
#include "tfer/prototypes.hpp"

namespace tfer {

/// Which projector layers receive adapters (mirrors the feature-layer /
/// projection-head placement ablation).
enum class Placement { kLayer1, kLayer2, kBoth };

std::string to_string(Placement p);
Placement placement_from_string(const std::string& s);

std::vector<LowRankAdapter> make_adapters(const Projector& p,
                                          Placement placement, int rank,
                                          uint64_t seed,
                                          double init_std = 0.02);

struct UnlearnConfig {
  std::vector<int> forget_classes;
  LossWeights weights;
  int epochs = 200;
  int batch_size = 64;
  double lr = 3e-4;
  uint64_t seed = 1;
  int rank = 4;
  Placement placement = Placement::kBoth;
  ProtectMode protect_mode = ProtectMode::kHardMax;
  double clip_max_norm = 10.0;    // gradient-ascent baseline only; <= 0 disables
  bool orth_all_history = false;  // orth constraint vs all earlier tasks
  ScoreKind scorer = ScoreKind::kMahalanobis;
  // model/bank shape, used by the retrain baseline which builds from scratch
  int hidden_dim = 128;
  int out_dim = 128;
  int proto_k = 1;
  double bank_kappa = 20.0;
  double adapter_init_std = 0.02;

  void validate() const;
};

struct TrainLogEpoch {
  int epoch = 0;
  double loss_push = 0.0;
  double loss_protect = 0.0;
  double loss_orth = 0.0;
  double retain_acc = 0.0;
  double forget_fpr95 = 0.0;
};

/// Per-epoch record of losses and validation metrics. Every value is finite;
/// a non-finite loss aborts the run with NonFiniteLossError instead.
struct TrainLog {
  std::vector<TrainLogEpoch> epochs;

  /// CSV: epoch,loss_push,loss_protect,loss_orth,retain_acc,forget_fpr95
  std::string to_csv() const;
};

/// Fits prototypes on the model's projected training features (validation
/// rows excluded).
PrototypeBank fit_prototypes_model(const EmbeddingDataset& ds,
                                   const Projector& projector,
                                   const AdapterStack& stack, int K,
                                   double kappa, uint64_t seed);

/// Single-task push-pull unlearning: marks the forget classes in the bank,
/// creates a fresh adapter task, and runs constant-lr mini-batch SGD on the
/// combined objective. Deterministic given cfg.seed.
TrainLog unlearn_tfer(const Projector& projector, AdapterStack& stack,
                      PrototypeBank& bank, const EmbeddingDataset& ds,
                      const UnlearnConfig& cfg);

enum class ContinualStrategy { kNaive, kOrthogonal };

std::string to_string(ContinualStrategy s);
ContinualStrategy strategy_from_string(const std::string& s);

struct ContinualTaskResult {
  int task_index = 0;
  TrainLog log;
  EvalReport report;  // forget metrics are the current task's set
  /// FPR95 of every forget set seen so far (by task index), on test data.
  std::vector<std::pair<int, double>> historical_fpr95;
};

struct ContinualResult {
  std::vector<ContinualTaskResult> tasks;
};

/// Sequential unlearning over disjoint forget sets. Orthogonal strategy:
/// fresh per-task adapters, earlier ones frozen, plus the orthogonality
/// penalty between the new task's A and the preceding task's A. Naive
/// strategy: one shared adapter updated across tasks.
ContinualResult unlearn_continual(const Projector& projector,
                                  AdapterStack& stack, PrototypeBank& bank,
                                  const EmbeddingDataset& ds,
                                  const std::vector<std::vector<int>>& tasks,
                                  const UnlearnConfig& cfg,
                                  ContinualStrategy strategy);

/// Gradient-ascent baseline: negated cross-entropy on the forget samples
/// (softmax over all bank classes, true labels) plus the protect loss, with
/// global gradient-norm clipping.
TrainLog baseline_grad_ascent(const Projector& projector, AdapterStack& stack,
                              PrototypeBank& bank, const EmbeddingDataset& ds,
                              const UnlearnConfig& cfg);

/// Random-label fine-tuning baseline: forget samples get i.i.d. uniform
/// retained labels, re-drawn every epoch; trains cross-entropy on the union
/// batch.
TrainLog baseline_random_label(const Projector& projector, AdapterStack& stack,
                               PrototypeBank& bank, const EmbeddingDataset& ds,
                               const UnlearnConfig& cfg);

struct RetrainResult {
  Projector projector;
  PrototypeBank bank;
  TrainLog log;
};

/// Cost-constrained retraining: random re-init, protect loss on the retained
/// classes only, same epoch/lr budget as the unlearning methods. Prototypes
/// start random and are refit from the model once per epoch; with an epoch
/// budget of zero the returned bank is the random one.
RetrainResult baseline_retrain(const EmbeddingDataset& ds,
                               const UnlearnConfig& cfg);

struct PretrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.05;
  double tau = 0.1;
  int hidden_dim = 128;
  int out_dim = 128;
  int proto_k = 1;
  double bank_kappa = 20.0;
  uint64_t seed = 1;
  ProtectMode protect_mode = ProtectMode::kHardMax;

  void validate() const;
};

struct PretrainResult {
  Projector projector;
  PrototypeBank bank;
  TrainLog log;
};

/// Trains the base projector with the protect loss over all classes and fits
/// the prototype bank; this is the deployed model that unlearning starts
/// from.
PretrainResult pretrain(const EmbeddingDataset& ds, const PretrainConfig& cfg);

}  // namespace tfer
