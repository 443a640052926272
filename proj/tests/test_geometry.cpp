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
#include <set>

#include <doctest.h>

#include "tfer/rng.hpp"

using namespace tfer;

TEST_CASE("normalize: scaling identity") {
  Vector v(2);
  v << 3.0, 4.0;
  const UnitVector u = normalize(v);
  CHECK(u.vec()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(u.vec()[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("normalize: already unit") {
  Vector v(3);
  v << 1.0, 0.0, 0.0;
  const UnitVector u = normalize(v);
  CHECK(u.vec() == v);
}

TEST_CASE("normalize: degenerate input") {
  Vector v(2);
  v << 1e-15, 0.0;
  CHECK_THROWS_AS(normalize(v), ZeroVectorError);
}

TEST_CASE("class_logit: aligned single prototype gives kappa") {
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  Matrix p(1, 3);
  p << 0.0, 0.0, 1.0;
  Vector w(1);
  w << 1.0;
  CHECK(class_logit(UnitVector(z), p, 10.0, w) ==
        doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("class_logit: orthogonal prototype gives zero") {
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  Matrix p(1, 3);
  p << 1.0, 0.0, 0.0;
  Vector w(1);
  w << 1.0;
  CHECK(class_logit(UnitVector(z), p, 10.0, w) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("class_logit: two-prototype mixture matches the closed form") {
  Vector z(4);
  z << 1.0, 0.0, 0.0, 0.0;
  Matrix p(2, 4);
  p.row(0) = z.transpose();
  p.row(1) = -z.transpose();
  Vector w(2);
  w << 0.5, 0.5;
  // oracle: direct evaluation of log(w1 e^{k} + w2 e^{-k}) at double precision
  const double expected = std::log(0.5 * std::exp(5.0) + 0.5 * std::exp(-5.0));
  CHECK(class_logit(UnitVector(z), p, 5.0, w) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(4.3069).epsilon(1e-4));
}

TEST_CASE("class_logit: no overflow for large kappa") {
  Vector z(2);
  z << 1.0, 0.0;
  Matrix p(2, 2);
  p << 1.0, 0.0, -1.0, 0.0;
  Vector w(2);
  w << 0.5, 0.5;
  const double v = class_logit(UnitVector(z), p, 1e4, w);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1e4 + std::log(0.5)).epsilon(1e-10));
}

TEST_CASE("class_logit: dimension mismatch") {
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  Matrix p(1, 4);
  p << 1.0, 0.0, 0.0, 0.0;
  Vector w(1);
  w << 1.0;
  CHECK_THROWS_AS(class_logit(UnitVector(z), p, 1.0, w),
                  DimensionMismatchError);
}

TEST_CASE("class_logit: invariant under (prototype, weight) permutation") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 3;
    const Matrix p = uniform_sphere(5, k, rng.next_u64());
    Vector w(k);
    for (int i = 0; i < k; ++i) w[i] = rng.uniform_pos();
    w /= w.sum();
    const Matrix zs = uniform_sphere(5, 1, rng.next_u64());
    const UnitVector z(zs.row(0).transpose());

    Matrix p2(k, 5);
    Vector w2(k);
    const int perm[3] = {2, 0, 1};
    for (int i = 0; i < k; ++i) {
      p2.row(i) = p.row(perm[i]);
      w2[i] = w[perm[i]];
    }
    CHECK(class_logit(z, p, 3.0, w) ==
          doctest::Approx(class_logit(z, p2, 3.0, w2)).epsilon(1e-12));
  }
}

TEST_CASE("total_free_energy: trivial values") {
  Vector one(1);
  one << 0.0;
  CHECK(total_free_energy(one) == doctest::Approx(0.0));
  Vector two(2);
  two << 0.0, 0.0;
  CHECK(total_free_energy(two) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("total_free_energy: LSE oracle") {
  Vector logits(3);
  logits << 10.0, 2.0, 1.0;
  // oracle: direct double-precision LSE
  const double expected =
      -std::log(std::exp(10.0) + std::exp(2.0) + std::exp(1.0));
  CHECK(total_free_energy(logits) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(total_free_energy(logits) == doctest::Approx(-10.000466).epsilon(1e-6));
}

TEST_CASE("total_free_energy: empty input") {
  CHECK_THROWS_AS(total_free_energy(Vector()), EmptyRetainSetError);
}

TEST_CASE("total_free_energy: shift identity with c = 1000") {
  Vector logits(4);
  logits << -3.0, 0.5, 2.0, 7.0;
  const double c = 1000.0;
  const double base = total_free_energy(logits);
  const double shifted = total_free_energy((logits.array() + c).matrix());
  CHECK(shifted == doctest::Approx(base - c).epsilon(1e-12));
}

TEST_CASE("total_free_energy: appending a logit strictly decreases energy") {
  Vector logits(3);
  logits << 1.0, -2.0, 0.3;
  Vector more(4);
  more << 1.0, -2.0, 0.3, -5.0;
  CHECK(total_free_energy(more) < total_free_energy(logits));
}

TEST_CASE("uniform_sphere: basic contracts") {
  const Matrix z = uniform_sphere(2, 4, 42);
  CHECK(z.rows() == 4);
  std::set<std::pair<double, double>> distinct;
  for (int i = 0; i < 4; ++i) {
    CHECK(z.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    distinct.insert({z(i, 0), z(i, 1)});
  }
  CHECK(distinct.size() == 4);
  CHECK_THROWS_AS(uniform_sphere(1, 4, 42), InvalidArgumentError);
}

TEST_CASE("uniform_sphere: coordinate means vanish (d=32, n=10000)") {
  const Matrix z = uniform_sphere(32, 10000, 9);
  const Vector means = z.colwise().mean().transpose();
  for (int i = 0; i < 32; ++i) {
    CHECK(std::abs(means[i]) < 0.05);
  }
}

TEST_CASE("sample_vmf: kappa = 0 gives tiny resultant (uniform)") {
  Vector mu(3);
  mu << 0.0, 0.0, 1.0;
  const Matrix z = sample_vmf(VmfParams(UnitVector(mu), 0.0), 10000, 3);
  const Vector mean = z.colwise().mean().transpose();
  CHECK(mean.norm() < 0.05);
}

TEST_CASE("sample_vmf: concentrated samples point along mu") {
  Vector mu(3);
  mu << 0.0, 0.0, 1.0;
  const Matrix z = sample_vmf(VmfParams(UnitVector(mu), 100.0), 10000, 4);
  Vector mean = z.colwise().mean().transpose();
  mean /= mean.norm();
  const double angle = std::acos(std::clamp(mean.dot(mu), -1.0, 1.0));
  CHECK(angle < 0.02);
}

TEST_CASE("sample_vmf: outputs are unit vectors for any kappa") {
  Rng rng(11);
  for (double kappa : {0.0, 0.5, 5.0, 50.0, 2000.0}) {
    for (int d : {2, 3, 8, 32}) {
      const Matrix mu_m = uniform_sphere(d, 1, rng.next_u64());
      const Matrix z = sample_vmf(
          VmfParams(UnitVector(mu_m.row(0).transpose()), kappa), 5,
          rng.next_u64());
      for (int i = 0; i < z.rows(); ++i) {
        CHECK(z.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("sample_vmf: deterministic given seed") {
  Vector mu(4);
  mu << 0.5, 0.5, 0.5, 0.5;
  const VmfParams params(UnitVector(mu), 12.0);
  const Matrix a = sample_vmf(params, 50, 77);
  const Matrix b = sample_vmf(params, 50, 77);
  CHECK(a == b);
}

TEST_CASE("sample_vmf: empirical mean cosine matches the radial law") {
  // oracle: E[mu . z] estimated by numerically integrating the marginal
  // density of t = mu . z, f(t) prop exp(kappa t) (1 - t^2)^{(d-3)/2}
  const int d = 8;
  const double kappa = 10.0;
  double num = 0.0, den = 0.0;
  const int grid = 200000;
  for (int i = 0; i < grid; ++i) {
    const double t = -1.0 + 2.0 * (i + 0.5) / grid;
    const double f =
        std::exp(kappa * t) * std::pow(1.0 - t * t, (d - 3) / 2.0);
    num += t * f;
    den += f;
  }
  const double expected = num / den;

  Vector mu = Vector::Zero(d);
  mu[0] = 1.0;
  const Matrix z = sample_vmf(VmfParams(UnitVector(mu), kappa), 20000, 5);
  const double got = (z * mu).mean();
  CHECK(got == doctest::Approx(expected).epsilon(0.01));
}
