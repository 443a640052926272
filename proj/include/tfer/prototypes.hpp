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
#include <set>
#include <string>
#include <vector>

#include "tfer/common.hpp"
#include "tfer/geometry.hpp"

namespace tfer {

/// Per-class sets of K unit mean-direction vectors with a shared
/// concentration kappa, plus the retained/forgotten class partition.
///
/// The class logit is the mixture log-likelihood (up to the constant that
/// never matters) with posterior assignment weights
///   w_k(z) = softmax_k(kappa * p_k . z),
/// which collapses to
///   L_j(z) = LSE_k(2 kappa s_k) - LSE_k(kappa s_k),   s_k = p_k . z.
/// For K = 1 this is exactly kappa * p . z.
class PrototypeBank {
 public:
  PrototypeBank(std::vector<Matrix> per_class_prototypes, double kappa);

  int num_classes() const { return static_cast<int>(protos_.size()); }
  int k() const { return k_; }
  int dim() const { return dim_; }
  double kappa() const { return kappa_; }

  /// K x D unit rows for class j.
  const Matrix& prototypes(int class_id) const;

  const std::set<int>& retained() const { return retained_; }
  const std::set<int>& forgotten() const { return forgotten_; }
  std::vector<int> retained_ids() const;  // ascending

  /// Moves class ids from retained to forgotten. Throws UnknownClassError
  /// for ids outside the bank and OverlappingForgetSetsError if any id was
  /// already forgotten.
  void mark_forgotten(const std::vector<int>& class_ids);

  double class_logit(const UnitVector& z, int class_id) const {
    return class_logit_raw(z.vec(), class_id);
  }
  /// Logit and its gradient w.r.t. z (plain Euclidean gradient).
  std::pair<double, Vector> class_logit_grad(const UnitVector& z,
                                             int class_id) const {
    return class_logit_grad_raw(z.vec(), class_id);
  }

  /// Ambient-space variants: the logit expression extends smoothly off the
  /// sphere, which is what finite-difference checks differentiate.
  double class_logit_raw(const Vector& z, int class_id) const;
  std::pair<double, Vector> class_logit_grad_raw(const Vector& z,
                                                 int class_id) const;

  /// Batched logits for a set of classes: result(i, c) = L_{ids[c]}(Z.row(i)).
  Matrix logits(const Matrix& Z, const std::vector<int>& class_ids) const;

  /// Row-wise gradient of L_{class_id} at every row of Z (N x D).
  Matrix logit_grad_batch(const Matrix& Z, int class_id) const;

  /// Cosine similarity to the best prototype of the class, per row, plus the
  /// index of that prototype. Used by the hard-assignment protect loss.
  void max_similarity(const Matrix& Z, int class_id, Vector& sims,
                      std::vector<int>& argmax) const;

 private:
  std::vector<Matrix> protos_;
  double kappa_;
  int k_;
  int dim_;
  std::set<int> retained_;
  std::set<int> forgotten_;
};

/// Fits per-class prototypes on unit feature rows Z with labels y.
/// K = 1: normalized class mean. K > 1: spherical k-means (cosine
/// similarity, normalize-mean updates), seeded init, at most 100 iterations
/// or until assignments stop changing. Deterministic given seed.
/// Throws InsufficientSamplesError if a class has fewer than K samples.
PrototypeBank fit_prototypes(const Matrix& Z, const std::vector<uint16_t>& y,
                             int n_classes, int K, double kappa,
                             uint64_t seed);

/// The per-class fitting primitive behind fit_prototypes: K x D unit rows
/// for one class's samples.
Matrix fit_class_prototypes(const Matrix& X, int K, uint64_t seed);

/// Bank checkpoint ("TFERBNK1"); bit-exact round-trip.
void save_bank(const PrototypeBank& bank, const std::string& path);
PrototypeBank load_bank(const std::string& path);

}  // namespace tfer
