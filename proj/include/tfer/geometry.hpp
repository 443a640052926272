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

#include "tfer/common.hpp"

namespace tfer {

/// Vectors with norm below this are considered zero and cannot be projected
/// onto the sphere.
inline constexpr double kNormEps = 1e-12;

/// A point on the unit hypersphere. Construction validates norm (1 +- 1e-6)
/// and dimension >= 2; all downstream math may assume both.
class UnitVector {
 public:
  explicit UnitVector(Vector v);

  const Vector& vec() const { return v_; }
  int dim() const { return static_cast<int>(v_.size()); }
  double dot(const UnitVector& o) const { return v_.dot(o.v_); }

 private:
  Vector v_;
};

/// Mean direction plus concentration; kappa = 0 is the uniform distribution
/// on the sphere. The vMF normalization constant is never evaluated anywhere
/// in this library: logits, energies and softmaxes all use unnormalized
/// exponentials in which it cancels or shifts by a constant.
struct VmfParams {
  UnitVector mu;
  double kappa = 0.0;

  VmfParams(UnitVector mean, double concentration);
};

/// Project v onto the sphere. Throws ZeroVectorError if ||v|| <= kNormEps.
UnitVector normalize(const Vector& v);

/// Numerically stable log(sum(exp(x_i))) with max subtraction.
double log_sum_exp(const Vector& x);

/// Mixture-of-vMF class logit: log sum_k w_k * exp(kappa * p_k . z).
/// `prototypes` holds one unit prototype per row (K x D); `weights` is a
/// simplex vector of length K.
double class_logit(const UnitVector& z, const Matrix& prototypes, double kappa,
                   const Vector& weights);

/// Total free energy of a sample relative to the retained system:
/// -log sum_j exp(logit_j). Throws EmptyRetainSetError on empty input.
double total_free_energy(const Vector& retained_logits);

/// Draw n i.i.d. samples from vMF(mu, kappa); one unit row per sample.
/// Uses the dimension-general rejection scheme of Wood (1994): the radial
/// component w along mu is sampled by envelope rejection, the tangential
/// component uniformly on the (D-2)-sphere, then a Householder reflection
/// carries the north pole onto mu. kappa = 0 falls back to uniform sampling.
Matrix sample_vmf(const VmfParams& params, int n, uint64_t seed);

/// n normalized isotropic Gaussian draws in dimension d (uniform on the
/// sphere); one unit row per sample. Requires d >= 2.
Matrix uniform_sphere(int d, int n, uint64_t seed);

}  // namespace tfer
