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

#include "tfer/geometry.hpp"

#include <cmath>

#include "tfer/rng.hpp"

namespace tfer {

UnitVector::UnitVector(Vector v) : v_(std::move(v)) {
  if (v_.size() < 2) {
    throw InvalidArgumentError("UnitVector: dimension must be >= 2, got " +
                               std::to_string(v_.size()));
  }
  const double n = v_.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    throw InvalidArgumentError("UnitVector: norm " + std::to_string(n) +
                               " deviates from 1 by more than 1e-6");
  }
}

VmfParams::VmfParams(UnitVector mean, double concentration)
    : mu(std::move(mean)), kappa(concentration) {
  if (!(kappa >= 0.0)) {
    throw InvalidArgumentError("VmfParams: kappa must be >= 0");
  }
}

UnitVector normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > kNormEps)) {
    throw ZeroVectorError("normalize: vector norm " + std::to_string(n) +
                          " is at or below " + std::to_string(kNormEps));
  }
  return UnitVector(v / n);
}

double log_sum_exp(const Vector& x) {
  if (x.size() == 0) {
    throw EmptyRetainSetError("log_sum_exp: empty input");
  }
  const double m = x.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

double class_logit(const UnitVector& z, const Matrix& prototypes, double kappa,
                   const Vector& weights) {
  const Eigen::Index k = prototypes.rows();
  require(k >= 1, "class_logit: need at least one prototype");
  if (prototypes.cols() != z.dim()) {
    throw DimensionMismatchError(
        "class_logit: prototype dimension " + std::to_string(prototypes.cols()) +
        " != feature dimension " + std::to_string(z.dim()));
  }
  require(weights.size() == k, "class_logit: weight count != prototype count");
  require(weights.minCoeff() >= 0.0, "class_logit: weights must be nonnegative");
  require(std::abs(weights.sum() - 1.0) <= 1e-8,
          "class_logit: weights must sum to 1");
  for (Eigen::Index i = 0; i < k; ++i) {
    require(std::abs(prototypes.row(i).norm() - 1.0) <= 1e-6,
            "class_logit: prototype " + std::to_string(i) + " is not unit-norm");
  }

  const Vector s = kappa * (prototypes * z.vec());
  // weighted LSE; max taken over supported components only
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (weights[i] > 0.0 && s[i] > m) m = s[i];
  }
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (weights[i] > 0.0) acc += weights[i] * std::exp(s[i] - m);
  }
  return m + std::log(acc);
}

double total_free_energy(const Vector& retained_logits) {
  if (retained_logits.size() == 0) {
    throw EmptyRetainSetError("total_free_energy: no retained classes");
  }
  return -log_sum_exp(retained_logits);
}

namespace {

// Fills one uniform draw on S^{d-1} into `out`.
void uniform_unit(Rng& rng, Eigen::RowVectorXd& out) {
  const Eigen::Index d = out.size();
  double norm2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < d; ++i) {
      out[i] = rng.normal();
    }
    norm2 = out.squaredNorm();
  } while (!(norm2 > kNormEps * kNormEps));
  out /= std::sqrt(norm2);
}

}  // namespace

Matrix uniform_sphere(int d, int n, uint64_t seed) {
  require(d >= 2, "uniform_sphere: dimension must be >= 2, got " + std::to_string(d));
  require(n >= 1, "uniform_sphere: sample count must be >= 1");
  Rng rng(seed);
  Matrix out(n, d);
  Eigen::RowVectorXd buf(d);
  for (int i = 0; i < n; ++i) {
    uniform_unit(rng, buf);
    out.row(i) = buf;
  }
  return out;
}

Matrix sample_vmf(const VmfParams& params, int n, uint64_t seed) {
  require(n >= 1, "sample_vmf: sample count must be >= 1");
  const int d = params.mu.dim();
  if (params.kappa == 0.0) {
    return uniform_sphere(d, n, seed);
  }

  const double kappa = params.kappa;
  const double dm1 = static_cast<double>(d - 1);
  const double b =
      (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1)) / dm1;
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);

  // Householder reflection mapping e_d onto mu (identity when mu == e_d).
  Vector u = -params.mu.vec();
  u[d - 1] += 1.0;
  const double un = u.norm();
  const bool reflect = un > kNormEps;
  if (reflect) u /= un;

  Rng rng(seed);
  Matrix out(n, d);
  Eigen::RowVectorXd tangent(d - 1);
  for (int i = 0; i < n; ++i) {
    double w;
    for (;;) {
      const double zb = rng.beta(dm1 / 2.0, dm1 / 2.0);
      w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
      const double t = kappa * w + dm1 * std::log(1.0 - x0 * w) - c;
      if (t >= std::log(rng.uniform_pos())) break;
    }
    if (d == 2) {
      // S^0 tangent: a sign
      tangent[0] = rng.normal() >= 0.0 ? 1.0 : -1.0;
    } else {
      uniform_unit(rng, tangent);
    }
    Eigen::RowVectorXd z(d);
    z.head(d - 1) = std::sqrt(std::max(0.0, 1.0 - w * w)) * tangent;
    z[d - 1] = w;
    if (reflect) {
      z -= 2.0 * (z * u) * u.transpose();
    }
    out.row(i) = z / z.norm();
  }
  return out;
}

}  // namespace tfer
