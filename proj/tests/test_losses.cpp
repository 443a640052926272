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

#include "tfer/losses.hpp"

#include <cmath>

#include <doctest.h>

#include "tfer/geometry.hpp"
#include "tfer/rng.hpp"
#include "test_util.hpp"

using namespace tfer;

namespace {

PrototypeBank random_bank(int classes, int K, int d, double kappa,
                          uint64_t seed) {
  std::vector<Matrix> protos;
  for (int j = 0; j < classes; ++j) {
    protos.push_back(uniform_sphere(d, K, derive_seed(seed, j)));
  }
  return PrototypeBank(std::move(protos), kappa);
}

}  // namespace

TEST_CASE("push_loss: single aligned class") {
  Vector p(3);
  p << 0.0, 0.0, 1.0;
  const PrototypeBank bank({p.transpose()}, 10.0);
  const PushResult r = push_loss(UnitVector(p), bank);
  CHECK(r.loss == doctest::Approx(10.0).epsilon(1e-12));
  // K=1 gradient is kappa * p regardless of z; alpha has a single entry 1
  CHECK((r.grad_z - 10.0 * p).norm() == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(r.decomposition.alpha.size() == 1);
  CHECK(r.decomposition.alpha[0] == doctest::Approx(1.0));
}

TEST_CASE("push_loss: symmetric classes share alpha equally") {
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  Matrix p1(1, 3), p2(1, 3);
  p1 << 1.0, 0.0, 0.0;
  p2 << -1.0, 0.0, 0.0;
  const PrototypeBank bank({p1, p2}, 5.0);
  const PushResult r = push_loss(UnitVector(z), bank);
  CHECK(r.decomposition.alpha[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.decomposition.alpha[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("push_loss: brute-force value and finite-difference gradient") {
  Rng rng(19);
  const PrototypeBank bank = random_bank(3, 2, 8, 6.0, rng.next_u64());
  const Matrix zs = uniform_sphere(8, 4, rng.next_u64());
  for (int i = 0; i < zs.rows(); ++i) {
    Vector z = zs.row(i).transpose();
    const PushResult r = push_loss(UnitVector(z), bank);

    // oracle: direct evaluation of log sum_j exp(L_j)
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) {
      acc += std::exp(bank.class_logit(UnitVector(z), j));
    }
    CHECK(r.loss == doctest::Approx(std::log(acc)).epsilon(1e-10));

    // oracle: central differences in the ambient space
    auto loss_of_z = [&] {
      const Vector zn = z;  // evaluated off-sphere by design: ambient gradient
      double a = 0.0;
      for (int j = 0; j < 3; ++j) {
        const Vector s = bank.prototypes(j) * zn;
        a += std::exp(log_sum_exp(2.0 * bank.kappa() * s) -
                      log_sum_exp(bank.kappa() * s));
      }
      return std::log(a);
    };
    CHECK(tfer::testing::max_rel_error_vector(loss_of_z, z, r.grad_z) < 1e-4);
  }
}

TEST_CASE("push_loss: empty retain set") {
  PrototypeBank bank = random_bank(2, 1, 4, 3.0, 5);
  bank.mark_forgotten({0, 1});
  Vector z(4);
  z << 1.0, 0.0, 0.0, 0.0;
  CHECK_THROWS_AS(push_loss(UnitVector(z), bank), EmptyRetainSetError);
}

TEST_CASE("push_loss: convex-hull identity and norm bound") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform_int(4));
    const PrototypeBank bank = random_bank(classes, 1 + trial % 3, 6, 4.0,
                                           rng.next_u64());
    const Vector z = uniform_sphere(6, 1, rng.next_u64()).row(0).transpose();
    const PushResult r = push_loss(UnitVector(z), bank);

    CHECK(r.decomposition.alpha.minCoeff() > 0.0);
    CHECK(r.decomposition.alpha.maxCoeff() < 1.0);
    CHECK(r.decomposition.alpha.sum() == doctest::Approx(1.0).epsilon(1e-8));

    Vector recon = Vector::Zero(6);
    double max_norm = 0.0;
    for (int j = 0; j < classes; ++j) {
      recon += r.decomposition.alpha[j] * r.decomposition.per_class_grads[j];
      max_norm = std::max(max_norm, r.decomposition.per_class_grads[j].norm());
    }
    CHECK((recon - r.grad_z).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(r.grad_z.norm() <= max_norm + 1e-12);
  }
}

TEST_CASE("push_loss: equal logits give uniform alpha") {
  // classes placed symmetrically around z so all logits coincide exactly
  const int classes = 4;
  std::vector<Matrix> protos;
  for (int j = 0; j < classes; ++j) {
    Matrix p(1, 3);
    const double phi = 2.0 * M_PI * j / classes;
    p << std::cos(phi), std::sin(phi), 0.0;
    protos.push_back(p);
  }
  const PrototypeBank bank(std::move(protos), 5.0);
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  const PushResult r = push_loss(UnitVector(z), bank);
  for (int j = 0; j < classes; ++j) {
    CHECK(std::abs(r.decomposition.alpha[j] - 1.0 / classes) < 1e-6);
  }
}

TEST_CASE("push/energy duality: push_loss equals negative total free energy") {
  Rng rng(29);
  const PrototypeBank bank = random_bank(4, 2, 5, 7.0, rng.next_u64());
  const Matrix zs = uniform_sphere(5, 5, rng.next_u64());
  for (int i = 0; i < zs.rows(); ++i) {
    const UnitVector z(zs.row(i).transpose());
    Vector logits(4);
    for (int j = 0; j < 4; ++j) logits[j] = bank.class_logit(z, j);
    CHECK(push_loss(z, bank).loss ==
          doctest::Approx(-total_free_energy(logits)).epsilon(1e-12));
  }
}

TEST_CASE("protect_loss: aligned prototype vs orthogonal competitor") {
  Matrix p0(1, 3), p1(1, 3);
  p0 << 0.0, 0.0, 1.0;
  p1 << 1.0, 0.0, 0.0;
  const PrototypeBank bank({p0, p1}, 10.0);
  Vector z(3);
  z << 0.0, 0.0, 1.0;
  const ProtectResult r = protect_loss(UnitVector(z), 0, bank, 1.0);
  // oracle: -log(e / (e + 1))
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-10));
  CHECK(r.loss == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("protect_loss: identical prototypes give log C") {
  Matrix p(1, 3);
  p << 0.0, 1.0, 0.0;
  const int C = 5;
  std::vector<Matrix> protos(C, p);
  const PrototypeBank bank(std::move(protos), 10.0);
  Vector z(3);
  z << 1.0, 0.0, 0.0;
  const ProtectResult r = protect_loss(UnitVector(z), 2, bank, 0.5);
  CHECK(r.loss == doctest::Approx(std::log(double(C))).epsilon(1e-12));
}

TEST_CASE("protect_loss: finite-difference gradient (hard and soft modes)") {
  Rng rng(31);
  for (ProtectMode mode : {ProtectMode::kHardMax, ProtectMode::kSoftMixture}) {
    const PrototypeBank bank = random_bank(3, 2, 6, 5.0, rng.next_u64());
    const Matrix zs = uniform_sphere(6, 3, rng.next_u64());
    for (int i = 0; i < zs.rows(); ++i) {
      Vector z = zs.row(i).transpose();
      const ProtectResult r = protect_loss(UnitVector(z), 1, bank, 0.3, mode);
      auto loss_of_z = [&] {
        Matrix Z = z.transpose();
        Matrix g;
        return cross_entropy_batch(Z, {1}, bank.retained_ids(), bank, 0.3,
                                   mode, g)[0];
      };
      CHECK(tfer::testing::max_rel_error_vector(loss_of_z, z, r.grad_z) < 1e-4);
    }
  }
}

TEST_CASE("protect_loss: forgotten label is rejected") {
  PrototypeBank bank = random_bank(3, 1, 4, 5.0, 37);
  bank.mark_forgotten({2});
  Vector z(4);
  z << 1.0, 0.0, 0.0, 0.0;
  CHECK_THROWS_AS(protect_loss(UnitVector(z), 2, bank, 0.5),
                  ForgetLabelInProtectError);
}

TEST_CASE("protect_loss: nonnegative, and decays with sharper temperature") {
  Matrix p0(1, 3), p1(1, 3);
  p0 << 0.0, 0.0, 1.0;
  p1 << 1.0, 0.0, 0.0;
  const PrototypeBank bank({p0, p1}, 10.0);
  Vector z(3);
  z << 0.0, 0.0, 1.0;  // exactly at p0, strictly higher similarity
  double prev = std::numeric_limits<double>::infinity();
  for (double tau : {1.0, 0.5, 0.2, 0.1, 0.05}) {
    const double loss = protect_loss(UnitVector(z), 0, bank, tau).loss;
    CHECK(loss >= 0.0);
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-8);  // approaches zero as tau shrinks
}

TEST_CASE("orthogonality_loss: zero at the reference and on orthogonal subspaces") {
  Matrix a(2, 3), ref(2, 3);
  ref << 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  a = ref;
  CHECK(orthogonality_loss(a, ref).loss == doctest::Approx(0.0));

  // reference occupies the e1 direction of the rank space, the update the e2
  // direction: every cross inner product vanishes
  Matrix ref2(2, 2), a2(2, 2);
  ref2 << 1.0, 2.0,  //
      0.0, 0.0;
  a2 << 1.0, 2.0,  //
      3.0, 1.0;    // delta = [[0,0],[3,1]]
  CHECK(orthogonality_loss(a2, ref2).loss == doctest::Approx(0.0));
}

TEST_CASE("orthogonality_loss: hand-evaluated example") {
  Matrix ref(1, 2), a(1, 2);
  ref << 1.0, 0.0;
  a << 2.0, 0.0;
  // oracle: delta = (1,0); delta^T ref = [[1,0],[0,0]]; frobenius^2 = 1
  const OrthResult r = orthogonality_loss(a, ref);
  CHECK(r.loss == doctest::Approx(1.0).epsilon(1e-12));
  const Matrix brute = (a - ref).transpose() * ref;
  CHECK(brute.squaredNorm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonality_loss: shape mismatch") {
  CHECK_THROWS_AS(orthogonality_loss(Matrix::Zero(2, 3), Matrix::Zero(3, 2)),
                  ShapeMismatchError);
}

TEST_CASE("orthogonality_loss: finite-difference gradient") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a(3, 5), ref(3, 5);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.normal();
      ref.data()[i] = rng.normal();
    }
    const OrthResult r = orthogonality_loss(a, ref);
    auto loss = [&] { return orthogonality_loss(a, ref).loss; };
    CHECK(tfer::testing::max_rel_error_matrix(loss, a, r.grad) < 1e-4);
  }
}

TEST_CASE("orthogonality_loss: invariant under a common orthogonal rotation") {
  Rng rng(43);
  Matrix a(2, 4), ref(2, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = rng.normal();
    ref.data()[i] = rng.normal();
  }
  // random orthogonal matrix acting on the shared column index
  Matrix g(4, 4);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  const Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  CHECK(orthogonality_loss(a * q, ref * q).loss ==
        doctest::Approx(orthogonality_loss(a, ref).loss).epsilon(1e-10));
}

TEST_CASE("total_objective: lambda_f = 0 with empty forget batch") {
  Rng rng(47);
  const PrototypeBank bank = random_bank(3, 1, 6, 8.0, rng.next_u64());
  const Projector p = Projector::random_init(4, 6, 6, rng.next_u64());
  AdapterStack stack;
  AdapterTask task;
  task.task_id = 0;
  task.adapters.push_back(LowRankAdapter::create(1, 6, 6, 2, rng.next_u64()));
  stack.add_task(std::move(task));

  const Matrix retain_X = uniform_sphere(4, 10, rng.next_u64());
  std::vector<uint16_t> y(10);
  for (int i = 0; i < 10; ++i) y[static_cast<size_t>(i)] = i % 3;

  LossWeights w;
  w.lambda_f = 0.0;
  const ObjectiveResult r = total_objective(Matrix(0, 4), retain_X, y, p,
                                            stack, bank, w);
  CHECK(r.push_term == 0.0);
  CHECK(r.value == doctest::Approx(r.protect_term).epsilon(1e-12));

  // duplicating every sample leaves the mean objective unchanged
  Matrix retain2(20, 4);
  retain2 << retain_X, retain_X;
  std::vector<uint16_t> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const ObjectiveResult r2 = total_objective(Matrix(0, 4), retain2, y2, p,
                                             stack, bank, w);
  CHECK(r2.value == doctest::Approx(r.value).epsilon(1e-12));
}

TEST_CASE("total_objective: adapter gradients match finite differences") {
  Rng rng(53);
  const int d_in = 5, d_h = 8, d_out = 6;
  const PrototypeBank bank = random_bank(3, 1, d_out, 6.0, rng.next_u64());
  const Projector p = Projector::random_init(d_in, d_h, d_out, rng.next_u64());
  AdapterStack stack;
  AdapterTask task;
  task.task_id = 0;
  task.adapters.push_back(
      LowRankAdapter::create(0, d_h, d_in, 2, rng.next_u64()));
  task.adapters.push_back(
      LowRankAdapter::create(1, d_out, d_h, 2, rng.next_u64()));
  // non-zero B so gradients flow everywhere
  Rng brng(rng.next_u64());
  for (auto& a : task.adapters) {
    for (Eigen::Index i = 0; i < a.B.size(); ++i) a.B.data()[i] = 0.1 * brng.normal();
  }
  stack.add_task(std::move(task));

  const Matrix forget_X = uniform_sphere(d_in, 4, rng.next_u64());
  const Matrix retain_X = uniform_sphere(d_in, 6, rng.next_u64());
  std::vector<uint16_t> y{0, 1, 2, 0, 1, 2};

  LossWeights w;
  w.lambda_f = 1.7;
  w.tau = 0.4;
  w.lambda_orth = 0.9;
  std::vector<Matrix> refs;
  for (const auto& a : stack.tasks()[0].adapters) {
    Matrix r(a.A.rows(), a.A.cols());
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = 0.05 * brng.normal();
    refs.push_back(std::move(r));
  }

  const ObjectiveResult res = total_objective(forget_X, retain_X, y, p, stack,
                                              bank, w, &refs);
  auto objective = [&] {
    return total_objective(forget_X, retain_X, y, p, stack, bank, w, &refs)
        .value;
  };
  AdapterTask& t = stack.tasks()[0];
  for (size_t a = 0; a < t.adapters.size(); ++a) {
    CHECK(tfer::testing::max_rel_error_matrix(objective, t.adapters[a].A,
                                              res.grads.dA[a]) < 1e-4);
    CHECK(tfer::testing::max_rel_error_matrix(objective, t.adapters[a].B,
                                              res.grads.dB[a]) < 1e-4);
  }
}
