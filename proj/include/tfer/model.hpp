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
#include <optional>
#include <string>
#include <vector>

#include "tfer/common.hpp"
#include "tfer/geometry.hpp"

namespace tfer {

/// One affine map, weight is (out x in).
struct AffineLayer {
  Matrix W;
  Vector b;

  int in_dim() const { return static_cast<int>(W.cols()); }
  int out_dim() const { return static_cast<int>(W.rows()); }
};

/// Frozen two-layer MLP mapping raw embeddings to the hypersphere:
/// x -> tanh(W1 x + b1) -> W2 a + b2 -> normalize. The base weights are the
/// pre-trained parameters and never change during unlearning; only low-rank
/// adapter deltas on top of them do.
///
/// `linear_bypass` replaces tanh with identity; used by oracle tests that
/// need an exactly-identity composition.
class Projector {
 public:
  Projector(AffineLayer l1, AffineLayer l2, bool linear_bypass = false);

  /// Square identity projector (W = I, b = 0, linear bypass).
  static Projector identity(int d);

  /// Gaussian init scaled by 1/sqrt(fan_in); deterministic given seed.
  static Projector random_init(int d_in, int d_h, int d_out, uint64_t seed);

  const AffineLayer& layer(int i) const;
  int num_layers() const { return 2; }
  int d_in() const { return l1_.in_dim(); }
  int d_h() const { return l1_.out_dim(); }
  int d_out() const { return l2_.out_dim(); }
  bool linear_bypass() const { return linear_bypass_; }

  /// Element count of all base parameters (weights + biases).
  long param_count() const;

 private:
  friend class ProjectorBuilder;
  AffineLayer l1_, l2_;
  bool linear_bypass_;
};

/// Mutable access for the training engines that own a projector (pretrain /
/// retrain). Unlearning code never touches this.
class ProjectorBuilder {
 public:
  explicit ProjectorBuilder(Projector& p) : p_(p) {}
  AffineLayer& layer(int i) { return i == 0 ? p_.l1_ : p_.l2_; }

 private:
  Projector& p_;
};

/// Low-rank delta for one projector layer: effective update is
/// scale * B * A with A (r x in) and B (out x r). B starts at zero so a
/// freshly created adapter leaves the model bit-identical.
struct LowRankAdapter {
  int layer_index = 0;
  Matrix A;  // r x in
  Matrix B;  // out x r
  double scale = 1.0;

  int rank() const { return static_cast<int>(A.rows()); }
  Matrix delta() const { return scale * B * A; }

  /// A ~ N(0, init_std^2), B = 0, scale = 1/r: the zero-initialized B
  /// keeps a fresh adapter an exact no-op. Enforces r <= min(out,in)/2.
  static LowRankAdapter create(int layer_index, int out_dim, int in_dim,
                               int rank, uint64_t seed,
                               double init_std = 0.02);
};

/// Adapters of one unlearning task.
struct AdapterTask {
  int task_id = 0;
  std::vector<LowRankAdapter> adapters;
};

/// Ordered list of per-task adapters. At most one task is trainable at a
/// time; all earlier tasks stay frozen and their matrices must be
/// bit-identical before and after any later training run.
class AdapterStack {
 public:
  AdapterStack() = default;

  /// Appends a task and makes it the active (trainable) one.
  void add_task(AdapterTask task);
  void freeze_all() { active_.reset(); }
  void set_active(int task_id);

  bool has_active() const { return active_.has_value(); }
  int active_task_id() const;
  const std::vector<AdapterTask>& tasks() const { return tasks_; }
  std::vector<AdapterTask>& tasks() { return tasks_; }
  const AdapterTask& task(int task_id) const;
  AdapterTask& active_task();
  const AdapterTask& active_task() const;
  bool empty() const { return tasks_.empty(); }

  /// Sum of all task deltas for one layer, or empty matrix if none.
  Matrix combined_delta(int layer_index, int out_dim, int in_dim) const;

 private:
  std::vector<AdapterTask> tasks_;
  std::optional<int> active_;
};

/// Everything the backward pass needs about one forward evaluation.
struct ForwardContext {
  Vector x;        // input
  Vector a1;       // post-nonlinearity hidden activation
  Vector h2;       // pre-normalization output (penultimate features)
  double h2_norm = 0.0;
  Vector z;        // normalized output
};

/// Batched counterpart; one sample per row.
struct BatchForward {
  Matrix X;
  Matrix A1;
  Matrix H2;
  Vector h2_norms;
  Matrix Z;
};

/// Gradients w.r.t. the active task's adapters, aligned with its adapter
/// list. Frozen tasks have no entries here by construction.
struct AdapterGrads {
  std::vector<Matrix> dA;
  std::vector<Matrix> dB;

  void setZero(const AdapterTask& task);
  void accumulate(const AdapterGrads& other, double weight = 1.0);
  double squared_norm() const;
};

/// Gradients w.r.t. the base projector parameters (pretrain / retrain only).
struct ProjectorGrads {
  Matrix dW1, dW2;
  Vector db1, db2;

  void setZero(const Projector& p);
};

UnitVector forward(const Projector& p, const AdapterStack& stack,
                   const Vector& x);

ForwardContext forward_with_context(const Projector& p,
                                    const AdapterStack& stack, const Vector& x);

/// Contracts an upstream cotangent dL/dz with the jacobian of the forward
/// map, producing dL/d(A,B) for the active task. The final normalize
/// contributes the sphere-projection jacobian (I - z z^T) / ||h2||.
/// Throws NoActiveTaskError when no task is trainable.
AdapterGrads backward_adapters(const Projector& p, const AdapterStack& stack,
                               const ForwardContext& ctx,
                               const Vector& z_cotangent);

BatchForward forward_batch(const Projector& p, const AdapterStack& stack,
                           const Matrix& X);

/// Batched adapter backward; `G` holds dL/dz_i per row. Gradients are summed
/// over the batch (callers fold any 1/N into G).
AdapterGrads backward_adapters_batch(const Projector& p,
                                     const AdapterStack& stack,
                                     const BatchForward& ctx, const Matrix& G);

/// Batched base-parameter backward for from-scratch training.
ProjectorGrads backward_projector_batch(const Projector& p,
                                        const AdapterStack& stack,
                                        const BatchForward& ctx,
                                        const Matrix& G);

/// Element count of the active task's A and B matrices (0 if none active).
long trainable_param_count(const AdapterStack& stack);

/// Materializes W' = W + sum_{t <= task_id} scale * B_t * A_t into a new
/// frozen projector whose outputs match the stacked forward to 1e-10.
Projector merge_task(const Projector& p, const AdapterStack& stack,
                     int task_id);

/// Versioned binary model container ("TFERMDL1"): header with dimensions and
/// the adapter task list, then row-major little-endian float64 matrices.
/// Round-trips are bit-exact.
void save_model(const Projector& p, const AdapterStack& stack,
                const std::string& path);
std::pair<Projector, AdapterStack> load_model(const std::string& path);

std::vector<uint8_t> serialize_model(const Projector& p,
                                     const AdapterStack& stack);
std::pair<Projector, AdapterStack> deserialize_model(
    const std::vector<uint8_t>& bytes);

}  // namespace tfer
