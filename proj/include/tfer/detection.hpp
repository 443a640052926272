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

#include <optional>
#include <string>
#include <vector>

#include "tfer/common.hpp"
#include "tfer/data.hpp"
#include "tfer/model.hpp"
#include "tfer/prototypes.hpp"

namespace tfer {

enum class ScoreKind { kNegFreeEnergy, kMaxSimilarity, kMahalanobis };

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& s);

struct BinaryScoreSample {
  double score = 0.0;
  bool is_id = false;  // retained-class test sample; forget/external are OOD
};

/// Immutable fitted scorer. Higher score means more in-distribution for all
/// kinds; mahalanobis returns the negated squared distance to the nearest
/// retained class mean under the shared shrunk covariance.
class ScoreFunction {
 public:
  /// Fits the mahalanobis scorer on labeled feature rows (retained classes
  /// only). `shrinkage` > 0 is added as eps * I to the pooled within-class
  /// covariance before the single inversion.
  static ScoreFunction fit_mahalanobis(const Matrix& features,
                                       const std::vector<uint16_t>& labels,
                                       double shrinkage);

  static ScoreFunction neg_free_energy();
  static ScoreFunction max_similarity();

  ScoreKind kind() const { return kind_; }

  /// Mahalanobis scores on feature rows (penultimate features).
  Vector score_features(const Matrix& H) const;

  /// Prototype-based scores on unit rows over the bank's retained classes.
  Vector score_embeddings(const Matrix& Z, const PrototypeBank& bank) const;

 private:
  explicit ScoreFunction(ScoreKind kind) : kind_(kind) {}
  ScoreKind kind_;
  Matrix means_;       // C x D class means (mahalanobis)
  Matrix precision_;   // inverse of shrunk covariance
};

/// Exact AUROC via rank statistics, ties counted 0.5.
/// Throws DegenerateLabelsError without at least one ID and one OOD sample.
double auroc(const std::vector<BinaryScoreSample>& samples);

/// FPR at 95% TPR: threshold is the largest observed score t such that at
/// least 95% of ID samples score >= t; result is the fraction of OOD samples
/// scoring >= t. Requires >= 20 ID samples.
double fpr_at_95_tpr(const std::vector<BinaryScoreSample>& samples);

/// Fraction of samples whose argmax logit over `retained` matches the label;
/// ties break toward the smallest class id.
double retain_accuracy(const Matrix& Z, const std::vector<uint16_t>& y,
                       const PrototypeBank& bank,
                       const std::vector<int>& retained);

struct OodSetMetrics {
  std::string name;
  double auroc = 0.0;
  double fpr95 = 0.0;
};

/// Forget-as-OOD report in the layout of the main results tables: forget
/// efficacy, utility preservation, per-external-set metrics, and their
/// averages.
struct EvalReport {
  std::string label;
  std::string scorer;
  std::optional<double> forget_auroc;
  std::optional<double> forget_fpr95;
  double retain_acc = 0.0;
  std::vector<OodSetMetrics> external;
  double avg_ood_auroc = 0.0;
  double avg_ood_fpr95 = 0.0;
};

/// Scores the dataset under the model and computes the full report.
/// ID = retained-class test samples. The forget set may be empty (pretrain
/// baseline), in which case the forget columns are omitted. Requires at
/// least one external OOD set (MissingPartitionError otherwise); a non-empty
/// forget set with no matching test samples is also MissingPartitionError.
///
/// The mahalanobis shrinkage is shrinkage_scale * trace(cov)/D; the default
/// keeps the whitening from amplifying near-null within-class directions,
/// which at this scale is what separates external samples from the ID tail.
EvalReport evaluate(const Projector& projector, const AdapterStack& stack,
                    const PrototypeBank& bank, const EmbeddingDataset& ds,
                    const std::vector<int>& forget_classes, ScoreKind kind,
                    double shrinkage_scale = 0.1);

/// CSV with one header row and one row per report; values in percent with
/// one decimal. All reports must share the external set layout.
std::string reports_to_csv(const std::vector<EvalReport>& reports);
std::vector<EvalReport> reports_from_csv(const std::string& csv);

/// Aligned-column markdown rendering of the same table.
std::string reports_to_markdown(const std::vector<EvalReport>& reports);

}  // namespace tfer
