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
#include <vector>

#include "tfer/common.hpp"
#include "tfer/geometry.hpp"
#include "tfer/model.hpp"
#include "tfer/prototypes.hpp"

namespace tfer {

/// The push gradient written as a convex combination over retained classes:
/// total = sum_j alpha_j * grad L_j, with alpha on the open simplex. Exposed
/// so tests can assert the decomposition identity and its norm bound.
struct PushGradientDecomposition {
  Vector alpha;
  std::vector<Vector> per_class_grads;
  Vector total;
};

struct PushResult {
  double loss = 0.0;
  Vector grad_z;
  PushGradientDecomposition decomposition;
};

/// Push loss: LSE over retained classes of the vMF mixture logits. Minimizing
/// it drives the sample away from every retained manifold at once; the
/// gradient stays inside the convex hull of the per-class logit gradients,
/// which bounds its norm by the largest per-class gradient.
PushResult push_loss(const UnitVector& z, const PrototypeBank& bank);

/// How the protect loss scores a class when the bank holds K > 1 prototypes.
/// HardMax uses the per-class prototype of maximal similarity (exactly the
/// single-prototype form when K = 1); SoftMixture uses the mixture logit
/// scaled by 1/kappa, which also collapses to the same thing at K = 1.
enum class ProtectMode { kHardMax, kSoftMixture };

struct ProtectResult {
  double loss = 0.0;
  Vector grad_z;
};

/// Pull/protect loss: cross-entropy of prototype similarities over the
/// retained classes at temperature tau. Throws ForgetLabelInProtectError if
/// the label is not retained.
ProtectResult protect_loss(const UnitVector& z, int label,
                           const PrototypeBank& bank, double tau,
                           ProtectMode mode = ProtectMode::kHardMax);

struct OrthResult {
  double loss = 0.0;
  Matrix grad;  // w.r.t. A_t
};

/// Continual-unlearning constraint || (A_t - A_ref)^T A_ref ||_F^2 keeping
/// the new task's update out of the reference row space.
/// grad = 2 * A_ref * A_ref^T * (A_t - A_ref).
OrthResult orthogonality_loss(const Matrix& A_t, const Matrix& A_ref);

struct LossWeights {
  double lambda_f = 1.0;
  double lambda_orth = 1.0;
  double tau = 0.1;

  void validate() const {
    require(lambda_f >= 0.0, "LossWeights: lambda_f must be >= 0");
    require(lambda_orth >= 0.0, "LossWeights: lambda_orth must be >= 0");
    require(tau > 0.0, "LossWeights: tau must be > 0");
  }
};

struct ObjectiveResult {
  double value = 0.0;
  double push_term = 0.0;     // mean push loss over the forget batch
  double protect_term = 0.0;  // mean protect loss over the retain batch
  double orth_term = 0.0;     // summed orthogonality losses
  AdapterGrads grads;
};

/// Combined objective J = lambda_f * mean push(forget) + mean protect(retain)
/// (+ lambda_orth * sum orth(A_t, A_ref) when references are given), with
/// gradients flowing only into the active task's adapters. The forget batch
/// may be empty (pure protection).
///
/// `ref_A`, when present, maps adapter index (within the active task) to the
/// reference A matrix of the preceding task's adapter on the same layer.
ObjectiveResult total_objective(const Matrix& forget_X, const Matrix& retain_X,
                                const std::vector<uint16_t>& retain_y,
                                const Projector& projector,
                                const AdapterStack& stack,
                                const PrototypeBank& bank,
                                const LossWeights& weights,
                                const std::vector<Matrix>* ref_A = nullptr,
                                ProtectMode mode = ProtectMode::kHardMax);

/// Batched push loss on projected unit rows; returns per-sample losses and
/// fills `grads` with dL/dz per row.
Vector push_loss_batch(const Matrix& Z, const PrototypeBank& bank,
                       Matrix& grads);

/// Batched cross-entropy over `class_ids` of prototype similarities at
/// temperature tau; labels index into the full class-id space. Used by the
/// protect loss (class_ids = retained) and by baselines that need the
/// softmax over a different class set.
Vector cross_entropy_batch(const Matrix& Z, const std::vector<uint16_t>& y,
                           const std::vector<int>& class_ids,
                           const PrototypeBank& bank, double tau,
                           ProtectMode mode, Matrix& grads);

}  // namespace tfer
