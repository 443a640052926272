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

namespace tfer {

/// Labeled unit-norm feature vectors split into train/test, plus named
/// external-OOD sets. Immutable after generation or load. All stored values
/// are exactly representable as float32 (the on-disk precision), so
/// save/load round-trips are bit-exact.
struct EmbeddingDataset {
  Matrix train_X;  // n_train x d
  std::vector<uint16_t> train_y;
  Matrix test_X;
  std::vector<uint16_t> test_y;

  struct OodSet {
    std::string name;
    Matrix X;
  };
  std::vector<OodSet> external;

  int d = 0;
  int n_classes = 0;
  uint64_t seed = 0;

  /// Indices of train samples held out for per-epoch validation metrics;
  /// 20% of every class, fixed by the dataset seed at generation/load time.
  std::vector<int> val_idx;
  /// Complement of val_idx.
  std::vector<int> fit_idx;
};

struct SynthConfig {
  int classes = 10;
  int per_class = 500;
  int d = 32;
  double kappa = 20.0;
  int ood_sets = 3;
  int ood_per_set = 1000;
  /// Angular offset of each class's confusable twin. Classes come in pairs
  /// (j, j + ceil(classes/2)): the first half are anchor directions, the
  /// second half sit pair_angle radians away from their anchor in a random
  /// tangent direction. Uniform placement in high dimension makes every
  /// class pair nearly orthogonal and trivially separable; pairing
  /// reproduces the regime where each class has a close retained neighbor,
  /// the way fine-grained natural classes do. Pair p of A gets the angle
  /// pair_angle_min + (max - min) * p / (A - 1), mixing coarse and
  /// fine-grained structure; the highest class ids are the most separable
  /// twins. Setting both to 0 disables pairing (all means are anchors).
  double pair_angle_min = 0.5;
  double pair_angle_max = 1.0;
  /// Concentration of a vMF prior on the anchor directions around a random
  /// dataset axis. 0 draws anchors uniformly over the whole sphere; larger
  /// values confine the labeled manifold to a cone, which external OOD sets
  /// (drawn over the full sphere) fall outside of.
  double mean_kappa = 0.0;
  uint64_t seed = 1;
};

/// Synthetic stand-in for a projected feature manifold: anchor means drawn
/// uniformly with pairwise angle >= pi/8 (rejection resampling, at most 1e4
/// attempts -> MeanPlacementFailureError), twin means pair_angle away from
/// their anchors, per-class vMF samples with an 80/20 train/test split, and
/// external OOD sets alternating between uniform-on-sphere and fresh vMF
/// mixtures over the full sphere. Fully determined by seed.
EmbeddingDataset generate_synthetic(const SynthConfig& cfg);

/// Dataset container ("TFERDS01"): little-endian u32 header fields, float32
/// row-major vectors, u16 labels, trailing CRC32 of all preceding bytes.
void save_dataset(const EmbeddingDataset& ds, const std::string& path);
EmbeddingDataset load_dataset(const std::string& path);

std::vector<uint8_t> serialize_dataset(const EmbeddingDataset& ds);
EmbeddingDataset deserialize_dataset(const std::vector<uint8_t>& bytes);

/// CRC32 (IEEE 802.3 polynomial) of a byte range.
uint32_t crc32(const uint8_t* data, size_t len);

/// Ordered list of disjoint class-id sets, one per unlearning task.
struct ForgetPlan {
  std::vector<std::vector<int>> tasks;

  /// Throws OverlappingForgetSetsError / UnknownClassError / EmptyForgetSetError.
  void validate(int n_classes) const;
};

/// Index views partitioning the labeled data by one task's forget set; the
/// four views are disjoint and jointly exhaustive over train/test.
struct SplitView {
  std::vector<int> forget_train, retain_train;
  std::vector<int> forget_test, retain_test;
};

SplitView apply_forget_plan(const EmbeddingDataset& ds, const ForgetPlan& plan,
                            int task_index);

/// Rows of X selected by idx.
Matrix take_rows(const Matrix& X, const std::vector<int>& idx);
std::vector<uint16_t> take_labels(const std::vector<uint16_t>& y,
                                  const std::vector<int>& idx);

}  // namespace tfer
