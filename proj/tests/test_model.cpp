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

#include "tfer/model.hpp"

#include <cstdio>
#include <filesystem>

#include <doctest.h>

#include "tfer/geometry.hpp"
#include "tfer/rng.hpp"
#include "test_util.hpp"

using namespace tfer;

namespace {

AdapterStack one_task_stack(const Projector& p, int rank, uint64_t seed,
                            bool randomize_b) {
  AdapterTask task;
  task.task_id = 0;
  task.adapters.push_back(
      LowRankAdapter::create(0, p.d_h(), p.d_in(), rank, derive_seed(seed, 0)));
  task.adapters.push_back(
      LowRankAdapter::create(1, p.d_out(), p.d_h(), rank, derive_seed(seed, 1)));
  if (randomize_b) {
    Rng rng(derive_seed(seed, 2));
    for (auto& a : task.adapters) {
      for (Eigen::Index i = 0; i < a.B.size(); ++i) {
        a.B.data()[i] = 0.1 * rng.normal();
      }
    }
  }
  AdapterStack stack;
  stack.add_task(std::move(task));
  return stack;
}

}  // namespace

TEST_CASE("forward: identity projector with empty stack is the identity") {
  const Projector p = Projector::identity(4);
  const AdapterStack empty;
  const Matrix xs = uniform_sphere(4, 5, 3);
  for (int i = 0; i < xs.rows(); ++i) {
    const Vector x = xs.row(i).transpose();
    const UnitVector z = forward(p, empty, x);
    CHECK((z.vec() - x).norm() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("forward: zero-B adapters leave outputs bit-identical") {
  const Projector p = Projector::random_init(6, 10, 8, 21);
  const AdapterStack empty;
  const AdapterStack stack = one_task_stack(p, 2, 5, /*randomize_b=*/false);
  const Matrix xs = uniform_sphere(6, 8, 9);
  for (int i = 0; i < xs.rows(); ++i) {
    const Vector x = xs.row(i).transpose();
    const Vector a = forward(p, empty, x).vec();
    const Vector b = forward(p, stack, x).vec();
    CHECK(a == b);
  }
}

TEST_CASE("forward: matches a dense materialization of W + scale*B*A") {
  const Projector p = Projector::random_init(8, 8, 8, 13);
  const AdapterStack stack = one_task_stack(p, 2, 17, /*randomize_b=*/true);

  // oracle: dense forward with explicitly materialized weights
  Matrix w1 = p.layer(0).W;
  Matrix w2 = p.layer(1).W;
  for (const auto& a : stack.tasks()[0].adapters) {
    (a.layer_index == 0 ? w1 : w2) += a.scale * a.B * a.A;
  }
  const Matrix xs = uniform_sphere(8, 6, 31);
  for (int i = 0; i < xs.rows(); ++i) {
    const Vector x = xs.row(i).transpose();
    Vector h = w2 * (w1 * x + p.layer(0).b).array().tanh().matrix() +
               p.layer(1).b;
    h /= h.norm();
    const Vector z = forward(p, stack, x).vec();
    CHECK((z - h).norm() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("forward: dimension mismatch") {
  const Projector p = Projector::identity(4);
  CHECK_THROWS_AS(forward(p, AdapterStack{}, Vector::Ones(5)),
                  DimensionMismatchError);
}

TEST_CASE("backward_adapters: zero cotangent gives zero gradients") {
  const Projector p = Projector::random_init(5, 7, 6, 2);
  const AdapterStack stack = one_task_stack(p, 2, 3, true);
  const Vector x = uniform_sphere(5, 1, 4).row(0).transpose();
  const ForwardContext ctx = forward_with_context(p, stack, x);
  const AdapterGrads g =
      backward_adapters(p, stack, ctx, Vector::Zero(p.d_out()));
  CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("backward_adapters: requires an active task") {
  const Projector p = Projector::identity(4);
  AdapterStack stack;
  const Vector x = uniform_sphere(4, 1, 4).row(0).transpose();
  const ForwardContext ctx = forward_with_context(p, stack, x);
  CHECK_THROWS_AS(backward_adapters(p, stack, ctx, Vector::Ones(4)),
                  NoActiveTaskError);
}

TEST_CASE("backward_adapters: matches central finite differences") {
  // scalar head: L(z) = c . z for a fixed random cotangent c
  Rng rng(101);
  for (int trial = 0; trial < 6; ++trial) {
    const int d_in = 4 + 2 * (trial % 3);
    const int d_h = 8;
    const int d_out = 6;
    const int rank = 1 + trial % 2;
    const Projector p =
        Projector::random_init(d_in, d_h, d_out, rng.next_u64());
    AdapterStack stack = one_task_stack(p, rank, rng.next_u64(), true);
    const Vector x = uniform_sphere(d_in, 1, rng.next_u64()).row(0).transpose();
    Vector c(d_out);
    for (int i = 0; i < d_out; ++i) c[i] = rng.normal();

    const ForwardContext ctx = forward_with_context(p, stack, x);
    const AdapterGrads analytic = backward_adapters(p, stack, ctx, c);

    auto loss = [&] { return c.dot(forward(p, stack, x).vec()); };
    AdapterTask& task = stack.tasks()[0];
    for (size_t a = 0; a < task.adapters.size(); ++a) {
      CHECK(tfer::testing::max_rel_error_matrix(loss, task.adapters[a].A,
                                                analytic.dA[a]) < 1e-4);
      CHECK(tfer::testing::max_rel_error_matrix(loss, task.adapters[a].B,
                                                analytic.dB[a]) < 1e-4);
    }
  }
}

TEST_CASE("backward_adapters: frozen tasks receive no gradient entries") {
  const Projector p = Projector::random_init(5, 6, 5, 8);
  AdapterStack stack = one_task_stack(p, 2, 9, true);
  AdapterTask second;
  second.task_id = 1;
  second.adapters.push_back(LowRankAdapter::create(1, p.d_out(), p.d_h(), 2, 10));
  stack.add_task(std::move(second));  // task 1 active, task 0 frozen

  const Vector x = uniform_sphere(5, 1, 11).row(0).transpose();
  const ForwardContext ctx = forward_with_context(p, stack, x);
  const AdapterGrads g = backward_adapters(p, stack, ctx, Vector::Ones(5));
  CHECK(g.dA.size() == 1);  // only the active task's single adapter
  CHECK(g.dB.size() == 1);
}

TEST_CASE("trainable_param_count: arithmetic") {
  AdapterStack stack;
  AdapterTask task;
  task.task_id = 0;
  LowRankAdapter a;
  a.layer_index = 0;
  a.A = Matrix::Zero(4, 64);
  a.B = Matrix::Zero(64, 4);
  a.scale = 0.25;
  task.adapters.push_back(a);
  stack.add_task(std::move(task));
  CHECK(trainable_param_count(stack) == 512);
  CHECK(trainable_param_count(AdapterStack{}) == 0);
}

TEST_CASE("trainable_param_count: adapters stay under a quarter of the base") {
  // 2 adapted layers at rank 4 on a 64-64-64 projector
  const Projector p = Projector::random_init(64, 64, 64, 1);
  AdapterStack stack = one_task_stack(p, 4, 2, false);
  const long adapter_params = trainable_param_count(stack);
  CHECK(adapter_params == 2 * (4 * 64 + 64 * 4));
  const long full = 2 * (64 * 64 + 64);
  CHECK(static_cast<double>(adapter_params) / static_cast<double>(full) < 0.25);
}

TEST_CASE("merge_task: empty stack returns the base projector") {
  const Projector p = Projector::random_init(4, 5, 4, 3);
  const Projector m = merge_task(p, AdapterStack{}, 0);
  CHECK(m.layer(0).W == p.layer(0).W);
  CHECK(m.layer(1).W == p.layer(1).W);
}

TEST_CASE("merge_task: unknown task") {
  const Projector p = Projector::identity(4);
  AdapterStack stack = one_task_stack(p, 1, 5, true);
  CHECK_THROWS_AS(merge_task(p, stack, 7), UnknownTaskError);
}

TEST_CASE("merge_task: merged forward equals stacked forward") {
  const Projector p = Projector::random_init(8, 10, 8, 23);
  const AdapterStack stack = one_task_stack(p, 2, 29, true);
  const Projector merged = merge_task(p, stack, 0);
  const AdapterStack empty;
  const Matrix xs = uniform_sphere(8, 100, 31);
  double worst = 0.0;
  for (int i = 0; i < xs.rows(); ++i) {
    const Vector x = xs.row(i).transpose();
    const Vector a = forward(p, stack, x).vec();
    const Vector b = forward(merged, empty, x).vec();
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("checkpoint: round-trip is bit-exact") {
  const Projector p = Projector::random_init(6, 9, 7, 41);
  AdapterStack stack = one_task_stack(p, 2, 43, true);
  AdapterTask second;
  second.task_id = 1;
  second.adapters.push_back(LowRankAdapter::create(0, p.d_h(), p.d_in(), 3, 47));
  stack.add_task(std::move(second));

  const std::vector<uint8_t> bytes = serialize_model(p, stack);
  auto [p2, stack2] = deserialize_model(bytes);
  const std::vector<uint8_t> bytes2 = serialize_model(p2, stack2);
  CHECK(bytes == bytes2);
  CHECK(p2.layer(0).W == p.layer(0).W);
  CHECK(p2.layer(1).b == p.layer(1).b);
  REQUIRE(stack2.tasks().size() == 2);
  CHECK(stack2.tasks()[1].adapters[0].A == stack.tasks()[1].adapters[0].A);
  CHECK(stack2.active_task_id() == stack.active_task_id());
}

TEST_CASE("checkpoint: truncation is a typed error") {
  const Projector p = Projector::identity(4);
  std::vector<uint8_t> bytes = serialize_model(p, AdapterStack{});
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_model(bytes), FormatError);
}

TEST_CASE("checkpoint: save/load through a file") {
  namespace fs = std::filesystem;
  const Projector p = Projector::random_init(4, 6, 4, 51);
  const AdapterStack stack = one_task_stack(p, 1, 53, true);
  const std::string path =
      (fs::temp_directory_path() / "tfer_model_test.tfermdl").string();
  save_model(p, stack, path);
  auto [p2, stack2] = load_model(path);
  CHECK(serialize_model(p2, stack2) == serialize_model(p, stack));
  fs::remove(path);
}

TEST_CASE("LowRankAdapter: rank cap enforced") {
  CHECK_THROWS_AS(LowRankAdapter::create(0, 8, 8, 5, 1), InvalidArgumentError);
  CHECK_NOTHROW(LowRankAdapter::create(0, 8, 8, 4, 1));
}
