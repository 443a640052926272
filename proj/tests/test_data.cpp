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

#include "tfer/data.hpp"

#include <filesystem>
#include <set>

#include <doctest.h>

#include "tfer/geometry.hpp"

using namespace tfer;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.per_class = 40;
  cfg.d = 8;
  cfg.kappa = 30.0;
  cfg.ood_sets = 2;
  cfg.ood_per_set = 50;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("crc32: known vector") {
  // "123456789" -> 0xCBF43926 (the standard check value for this polynomial)
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(s), 9) == 0xcbf43926u);
}

TEST_CASE("generate_synthetic: shapes, labels and unit rows") {
  const EmbeddingDataset ds = generate_synthetic(small_config());
  CHECK(ds.n_classes == 4);
  CHECK(ds.d == 8);
  CHECK(ds.train_X.rows() == 4 * 32);
  CHECK(ds.test_X.rows() == 4 * 8);
  CHECK(ds.external.size() == 2);
  for (int i = 0; i < ds.train_X.rows(); ++i) {
    CHECK(ds.train_X.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(ds.train_y[static_cast<size_t>(i)] < 4);
  }
  // validation split: 20% of each class's train rows
  CHECK(ds.val_idx.size() == static_cast<size_t>(4 * 6));  // floor(0.2*32)=6
  CHECK(ds.val_idx.size() + ds.fit_idx.size() == static_cast<size_t>(ds.train_X.rows()));
}

TEST_CASE("generate_synthetic: deterministic bytes and distinct seeds differ") {
  const SynthConfig cfg = small_config();
  const auto a = serialize_dataset(generate_synthetic(cfg));
  const auto b = serialize_dataset(generate_synthetic(cfg));
  CHECK(a == b);
  SynthConfig other = cfg;
  other.seed = 8;
  CHECK(serialize_dataset(generate_synthetic(other)) != a);
}

TEST_CASE("generate_synthetic: class means respect the angle floor") {
  const SynthConfig cfg = small_config();
  const EmbeddingDataset ds = generate_synthetic(cfg);
  // recover empirical class means; pairwise cosine must stay below the
  // pi/8 bound with concentrated clusters (kappa=30 keeps them near the
  // true means, so allow slack)
  Matrix means = Matrix::Zero(4, ds.d);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < ds.train_X.rows(); ++i) {
    means.row(ds.train_y[static_cast<size_t>(i)]) += ds.train_X.row(i);
    counts[ds.train_y[static_cast<size_t>(i)]]++;
  }
  for (int j = 0; j < 4; ++j) {
    means.row(j) /= means.row(j).norm();
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      CHECK(means.row(a).dot(means.row(b)) < std::cos(M_PI / 8.0) + 0.25);
    }
  }
}

TEST_CASE("generate_synthetic: impossible mean placement fails loudly") {
  SynthConfig cfg = small_config();
  cfg.d = 2;
  cfg.classes = 40;  // 40 directions with pairwise angle >= pi/8 cannot fit S^1
  CHECK_THROWS_AS(generate_synthetic(cfg), MeanPlacementFailureError);
}

TEST_CASE("dataset file: round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const EmbeddingDataset ds = generate_synthetic(small_config());
  const std::string path =
      (fs::temp_directory_path() / "tfer_ds_test.tferds").string();
  save_dataset(ds, path);
  const EmbeddingDataset loaded = load_dataset(path);
  CHECK(serialize_dataset(loaded) == serialize_dataset(ds));
  CHECK(loaded.train_X == ds.train_X);
  CHECK(loaded.test_y == ds.test_y);
  CHECK(loaded.external[1].name == ds.external[1].name);
  CHECK(loaded.external[1].X == ds.external[1].X);
  CHECK(loaded.val_idx == ds.val_idx);
  fs::remove(path);
}

TEST_CASE("dataset file: truncation, corruption, bad labels are typed errors") {
  const EmbeddingDataset ds = generate_synthetic(small_config());
  std::vector<uint8_t> bytes = serialize_dataset(ds);

  SUBCASE("truncated") {
    std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 3);
    CHECK_THROWS_AS(deserialize_dataset(cut), FormatError);
  }
  SUBCASE("flipped byte breaks the checksum") {
    bytes[100] ^= 0xff;
    CHECK_THROWS_AS(deserialize_dataset(bytes), FormatError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(deserialize_dataset(bytes), FormatError);
  }
  SUBCASE("version mismatch") {
    // bump the version field and repair the checksum
    bytes[8] = 9;
    const uint32_t crc = crc32(bytes.data(), bytes.size() - 4);
    for (int i = 0; i < 4; ++i) {
      bytes[bytes.size() - 4 + static_cast<size_t>(i)] =
          static_cast<uint8_t>((crc >> (8 * i)) & 0xff);
    }
    CHECK_THROWS_AS(deserialize_dataset(bytes), VersionMismatchError);
  }
  SUBCASE("label out of range names the record") {
    // first train label sits right after header + ood headers + train floats
    const EmbeddingDataset d2 = generate_synthetic(small_config());
    std::vector<uint8_t> b2 = serialize_dataset(d2);
    size_t off = 8 + 4 * 6 + 8;  // magic + six u32 + seed
    for (const auto& set : d2.external) {
      off += 4 + set.name.size() + 4;
    }
    off += static_cast<size_t>(d2.train_X.size()) * 4;
    b2[off] = 0xff;  // label 0x__ff -> huge
    b2[off + 1] = 0xff;
    const uint32_t crc = crc32(b2.data(), b2.size() - 4);
    for (int i = 0; i < 4; ++i) {
      b2[b2.size() - 4 + static_cast<size_t>(i)] =
          static_cast<uint8_t>((crc >> (8 * i)) & 0xff);
    }
    try {
      deserialize_dataset(b2);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("train record 0") != std::string::npos);
    }
  }
}

TEST_CASE("ForgetPlan: validation") {
  ForgetPlan ok{{{0, 1}, {2}}};
  CHECK_NOTHROW(ok.validate(4));
  ForgetPlan overlap{{{0, 1}, {1}}};
  CHECK_THROWS_AS(overlap.validate(4), OverlappingForgetSetsError);
  ForgetPlan bad_id{{{7}}};
  CHECK_THROWS_AS(bad_id.validate(4), UnknownClassError);
  ForgetPlan empty_task{{{}}};
  CHECK_THROWS_AS(empty_task.validate(4), EmptyForgetSetError);
}

TEST_CASE("apply_forget_plan: partition is disjoint and exhaustive") {
  const EmbeddingDataset ds = generate_synthetic(small_config());
  const ForgetPlan plan{{{1, 3}}};
  const SplitView view = apply_forget_plan(ds, plan, 0);

  CHECK(view.forget_train.size() == static_cast<size_t>(2 * 32));
  CHECK(view.retain_train.size() == static_cast<size_t>(2 * 32));
  CHECK(view.forget_test.size() == static_cast<size_t>(2 * 8));

  std::set<int> all;
  for (int i : view.forget_train) all.insert(i);
  for (int i : view.retain_train) all.insert(i);
  CHECK(all.size() == static_cast<size_t>(ds.train_X.rows()));
  for (int i : view.forget_train) {
    const int cls = ds.train_y[static_cast<size_t>(i)];
    CHECK((cls == 1 || cls == 3));
  }
  CHECK_THROWS_AS(apply_forget_plan(ds, plan, 1), InvalidTaskError);
}

TEST_CASE("apply_forget_plan: empty forget set leaves everything retained") {
  const EmbeddingDataset ds = generate_synthetic(small_config());
  ForgetPlan plan;
  plan.tasks.push_back({});
  // an empty task is invalid by the plan contract
  CHECK_THROWS_AS(apply_forget_plan(ds, plan, 0), EmptyForgetSetError);

  // covering every class leaves the retain views empty
  ForgetPlan all{{{0, 1, 2, 3}}};
  const SplitView view = apply_forget_plan(ds, all, 0);
  CHECK(view.retain_train.empty());
  CHECK(view.retain_test.empty());
  CHECK(view.forget_train.size() == static_cast<size_t>(ds.train_X.rows()));
}
