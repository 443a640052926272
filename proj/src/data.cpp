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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "tfer/geometry.hpp"
#include "tfer/rng.hpp"

namespace tfer {

uint32_t crc32(const uint8_t* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
      }
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xffffffffu;
  for (size_t i = 0; i < len; ++i) {
    c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  }
  return c ^ 0xffffffffu;
}

namespace {

// Rounds every entry through float32 so the in-memory dataset matches the
// on-disk precision exactly.
void round_to_f32(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

std::vector<int> make_validation_split(const std::vector<uint16_t>& y,
                                       int n_classes, uint64_t seed,
                                       double fraction) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(n_classes));
  for (size_t i = 0; i < y.size(); ++i) {
    by_class[y[i]].push_back(static_cast<int>(i));
  }
  std::vector<int> val;
  Rng rng(derive_seed(seed, 0x76616cull));  // "val"
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    const size_t n_val = static_cast<size_t>(
        std::floor(fraction * static_cast<double>(idx.size())));
    for (size_t i = 0; i < n_val; ++i) val.push_back(idx[i]);
  }
  std::sort(val.begin(), val.end());
  return val;
}

void attach_validation_split(EmbeddingDataset& ds) {
  ds.val_idx = make_validation_split(ds.train_y, ds.n_classes, ds.seed, 0.2);
  std::set<int> val(ds.val_idx.begin(), ds.val_idx.end());
  ds.fit_idx.clear();
  for (int i = 0; i < static_cast<int>(ds.train_y.size()); ++i) {
    if (!val.count(i)) ds.fit_idx.push_back(i);
  }
}

}  // namespace

EmbeddingDataset generate_synthetic(const SynthConfig& cfg) {
  require(cfg.classes >= 2, "generate_synthetic: classes must be >= 2");
  require(cfg.per_class >= 20, "generate_synthetic: per_class must be >= 20");
  require(cfg.d >= 2, "generate_synthetic: d must be >= 2");
  require(cfg.kappa >= 0.0, "generate_synthetic: kappa must be >= 0");
  require(cfg.ood_sets >= 0, "generate_synthetic: ood_sets must be >= 0");

  const double min_cos_gap = std::cos(M_PI / 8.0);
  const bool paired = cfg.pair_angle_max > 0.0;
  require(cfg.pair_angle_min <= cfg.pair_angle_max,
          "generate_synthetic: pair_angle_min above pair_angle_max");
  require(!paired || cfg.pair_angle_min >= M_PI / 8.0,
          "generate_synthetic: pair_angle_min below the pi/8 separation floor");

  // class means: anchors drawn uniformly (or from a cone prior), each twin
  // rotated its pair angle away from its anchor along a random tangent;
  // every placement is rejected until the whole set keeps pairwise angle
  // >= pi/8
  Matrix means(cfg.classes, cfg.d);
  {
    Rng rng(derive_seed(cfg.seed, 0x6d65616e73ull));  // "means"
    const int anchors = paired ? (cfg.classes + 1) / 2 : cfg.classes;
    const Matrix axis = uniform_sphere(cfg.d, 1, rng.next_u64());
    const VmfParams anchor_prior(UnitVector(axis.row(0).transpose()),
                                 cfg.mean_kappa);
    int placed = 0;
    int attempts = 0;
    auto far_from_placed = [&](const Eigen::RowVectorXd& cand) {
      for (int j = 0; j < placed; ++j) {
        if (means.row(j).dot(cand) > min_cos_gap) return false;
      }
      return true;
    };
    auto bump_attempts = [&] {
      if (++attempts > 10000) {
        throw MeanPlacementFailureError(
            "generate_synthetic: could not place " +
            std::to_string(cfg.classes) + " means with pairwise angle >= pi/8 "
            "in 10000 attempts");
      }
    };
    while (placed < anchors) {
      bump_attempts();
      const Matrix cand = sample_vmf(anchor_prior, 1, rng.next_u64());
      if (far_from_placed(cand.row(0))) {
        means.row(placed++) = cand.row(0);
      }
    }
    while (placed < cfg.classes) {
      bump_attempts();
      const int pair_index = placed - anchors;
      const Vector anchor = means.row(pair_index).transpose();
      const double angle =
          anchors > 1 ? cfg.pair_angle_min +
                            (cfg.pair_angle_max - cfg.pair_angle_min) *
                                static_cast<double>(pair_index) /
                                static_cast<double>(anchors - 1)
                      : cfg.pair_angle_max;
      // random unit tangent at the anchor
      Vector g = uniform_sphere(cfg.d, 1, rng.next_u64()).row(0).transpose();
      g -= g.dot(anchor) * anchor;
      const double gn = g.norm();
      if (!(gn > kNormEps)) continue;
      const Eigen::RowVectorXd cand =
          (std::cos(angle) * anchor + std::sin(angle) * (g / gn)).transpose();
      if (far_from_placed(cand)) {
        means.row(placed++) = cand;
      }
    }
  }

  EmbeddingDataset ds;
  ds.d = cfg.d;
  ds.n_classes = cfg.classes;
  ds.seed = cfg.seed;

  const int n_test_per_class = cfg.per_class / 5;  // 80/20 split
  const int n_train_per_class = cfg.per_class - n_test_per_class;
  ds.train_X.resize(static_cast<Eigen::Index>(cfg.classes) * n_train_per_class,
                    cfg.d);
  ds.test_X.resize(static_cast<Eigen::Index>(cfg.classes) * n_test_per_class,
                   cfg.d);
  ds.train_y.reserve(ds.train_X.rows());
  ds.test_y.reserve(ds.test_X.rows());

  Eigen::Index tr = 0, te = 0;
  for (int j = 0; j < cfg.classes; ++j) {
    const VmfParams params(UnitVector(means.row(j).transpose()), cfg.kappa);
    const Matrix samples = sample_vmf(
        params, cfg.per_class,
        derive_seed(cfg.seed, 0x636c73ull, static_cast<uint64_t>(j)));
    for (int i = 0; i < n_train_per_class; ++i) {
      ds.train_X.row(tr++) = samples.row(i);
      ds.train_y.push_back(static_cast<uint16_t>(j));
    }
    for (int i = 0; i < n_test_per_class; ++i) {
      ds.test_X.row(te++) = samples.row(n_train_per_class + i);
      ds.test_y.push_back(static_cast<uint16_t>(j));
    }
  }

  // external OOD sets: alternate uniform-on-sphere and fresh vMF mixtures
  for (int s = 0; s < cfg.ood_sets; ++s) {
    EmbeddingDataset::OodSet set;
    const uint64_t set_seed =
        derive_seed(cfg.seed, 0x6f6f64ull, static_cast<uint64_t>(s));
    if (s % 2 == 0) {
      set.name = "uniform_" + std::to_string(s);
      set.X = uniform_sphere(cfg.d, cfg.ood_per_set, set_seed);
    } else {
      set.name = "vmf_mix_" + std::to_string(s);
      const int n_centers = 5;
      const Matrix centers = uniform_sphere(cfg.d, n_centers, set_seed);
      set.X.resize(cfg.ood_per_set, cfg.d);
      Eigen::Index row = 0;
      for (int c = 0; c < n_centers; ++c) {
        const int count = cfg.ood_per_set / n_centers +
                          (c < cfg.ood_per_set % n_centers ? 1 : 0);
        if (count == 0) continue;
        const VmfParams params(UnitVector(centers.row(c).transpose()),
                               cfg.kappa);
        const Matrix chunk = sample_vmf(
            params, count, derive_seed(set_seed, static_cast<uint64_t>(c)));
        set.X.middleRows(row, count) = chunk;
        row += count;
      }
    }
    ds.external.push_back(std::move(set));
  }

  round_to_f32(ds.train_X);
  round_to_f32(ds.test_X);
  for (auto& set : ds.external) round_to_f32(set.X);
  attach_validation_split(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kDataMagic[8] = {'T', 'F', 'E', 'R', 'D', 'S', '0', '1'};
constexpr uint32_t kDataVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32_matrix(std::vector<uint8_t>& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      put_u32(out, bits);
    }
  }
}

}  // namespace

std::vector<uint8_t> serialize_dataset(const EmbeddingDataset& ds) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kDataMagic, kDataMagic + 8);
  put_u32(out, kDataVersion);
  put_u32(out, static_cast<uint32_t>(ds.d));
  put_u32(out, static_cast<uint32_t>(ds.n_classes));
  put_u32(out, static_cast<uint32_t>(ds.train_X.rows()));
  put_u32(out, static_cast<uint32_t>(ds.test_X.rows()));
  put_u32(out, static_cast<uint32_t>(ds.external.size()));
  put_u64(out, ds.seed);
  for (const auto& set : ds.external) {
    put_u32(out, static_cast<uint32_t>(set.name.size()));
    out.insert(out.end(), set.name.begin(), set.name.end());
    put_u32(out, static_cast<uint32_t>(set.X.rows()));
  }
  put_f32_matrix(out, ds.train_X);
  for (uint16_t y : ds.train_y) put_u16(out, y);
  put_f32_matrix(out, ds.test_X);
  for (uint16_t y : ds.test_y) put_u16(out, y);
  for (const auto& set : ds.external) put_f32_matrix(out, set.X);
  const uint32_t crc = crc32(out.data(), out.size());
  put_u32(out, crc);
  return out;
}

EmbeddingDataset deserialize_dataset(const std::vector<uint8_t>& bytes) {
  size_t off = 0;
  auto need = [&](size_t n, const char* what) {
    if (off + n > bytes.size()) {
      throw FormatError(std::string("dataset: truncated at byte ") +
                        std::to_string(off) + " while reading " + what);
    }
  };
  auto get_u32 = [&](const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  };
  auto get_u16 = [&](const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes[off] |
                                       (static_cast<uint16_t>(bytes[off + 1]) << 8));
    off += 2;
    return v;
  };
  auto get_u64 = [&](const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  };
  auto get_f32_matrix = [&](Eigen::Index rows, Eigen::Index cols,
                            const char* what) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        const uint32_t bits = get_u32(what);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        m(r, c) = static_cast<double>(f);
      }
    }
    return m;
  };

  // integrity first: CRC of everything but the trailing 4 bytes
  if (bytes.size() < 12) {
    throw FormatError("dataset: file too small (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  {
    const uint32_t stored = static_cast<uint32_t>(bytes[bytes.size() - 4]) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16) |
                            (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
    const uint32_t actual = crc32(bytes.data(), bytes.size() - 4);
    if (stored != actual) {
      throw FormatError("dataset: CRC32 mismatch (file corrupt), at byte " +
                        std::to_string(bytes.size() - 4));
    }
  }

  need(8, "magic");
  if (std::memcmp(bytes.data(), kDataMagic, 8) != 0) {
    throw FormatError("dataset: bad magic at byte 0");
  }
  off = 8;
  const uint32_t version = get_u32("version");
  if (version != kDataVersion) {
    throw VersionMismatchError("dataset: version " + std::to_string(version) +
                               " unsupported (expected " +
                               std::to_string(kDataVersion) + ")");
  }
  EmbeddingDataset ds;
  ds.d = static_cast<int>(get_u32("d"));
  ds.n_classes = static_cast<int>(get_u32("class_count"));
  const uint32_t n_train = get_u32("n_train");
  const uint32_t n_test = get_u32("n_test");
  const uint32_t n_ood = get_u32("n_ood_sets");
  ds.seed = get_u64("seed");
  if (ds.d < 2 || ds.n_classes < 1) {
    throw FormatError("dataset: invalid header (d=" + std::to_string(ds.d) +
                      ", classes=" + std::to_string(ds.n_classes) + ")");
  }
  struct OodHeader {
    std::string name;
    uint32_t count;
  };
  std::vector<OodHeader> ood_headers(n_ood);
  for (auto& h : ood_headers) {
    const uint32_t len = get_u32("ood name length");
    need(len, "ood name");
    h.name.assign(reinterpret_cast<const char*>(bytes.data() + off), len);
    off += len;
    h.count = get_u32("ood count");
  }
  ds.train_X = get_f32_matrix(n_train, ds.d, "train vectors");
  ds.train_y.resize(n_train);
  for (uint32_t i = 0; i < n_train; ++i) {
    ds.train_y[i] = get_u16("train label");
    if (ds.train_y[i] >= ds.n_classes) {
      throw FormatError("dataset: train record " + std::to_string(i) +
                        " has class id " + std::to_string(ds.train_y[i]) +
                        " >= class count " + std::to_string(ds.n_classes));
    }
  }
  ds.test_X = get_f32_matrix(n_test, ds.d, "test vectors");
  ds.test_y.resize(n_test);
  for (uint32_t i = 0; i < n_test; ++i) {
    ds.test_y[i] = get_u16("test label");
    if (ds.test_y[i] >= ds.n_classes) {
      throw FormatError("dataset: test record " + std::to_string(i) +
                        " has class id " + std::to_string(ds.test_y[i]) +
                        " >= class count " + std::to_string(ds.n_classes));
    }
  }
  for (const auto& h : ood_headers) {
    EmbeddingDataset::OodSet set;
    set.name = h.name;
    set.X = get_f32_matrix(h.count, ds.d, "ood vectors");
    ds.external.push_back(std::move(set));
  }
  if (off != bytes.size() - 4) {
    throw FormatError("dataset: trailing bytes at byte " +
                      std::to_string(off));
  }
  attach_validation_split(ds);
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const std::string& path) {
  const std::vector<uint8_t> bytes = serialize_dataset(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_dataset: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("save_dataset: write failed for " + path);
}

EmbeddingDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_dataset: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize_dataset(bytes);
}

// ---------------------------------------------------------------------------
// forget plans and views
// ---------------------------------------------------------------------------

void ForgetPlan::validate(int n_classes) const {
  std::set<int> seen;
  for (const auto& task : tasks) {
    if (task.empty()) {
      throw EmptyForgetSetError("ForgetPlan: a task has an empty forget set");
    }
    for (int id : task) {
      if (id < 0 || id >= n_classes) {
        throw UnknownClassError("ForgetPlan: class " + std::to_string(id) +
                                " out of range");
      }
      if (!seen.insert(id).second) {
        throw OverlappingForgetSetsError("ForgetPlan: class " +
                                         std::to_string(id) +
                                         " appears in more than one task");
      }
    }
  }
}

SplitView apply_forget_plan(const EmbeddingDataset& ds, const ForgetPlan& plan,
                            int task_index) {
  if (task_index < 0 || task_index >= static_cast<int>(plan.tasks.size())) {
    throw InvalidTaskError("apply_forget_plan: task index " +
                           std::to_string(task_index) + " out of range");
  }
  plan.validate(ds.n_classes);
  const auto& f = plan.tasks[static_cast<size_t>(task_index)];
  const std::set<int> forget(f.begin(), f.end());
  SplitView view;
  for (size_t i = 0; i < ds.train_y.size(); ++i) {
    (forget.count(ds.train_y[i]) ? view.forget_train : view.retain_train)
        .push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < ds.test_y.size(); ++i) {
    (forget.count(ds.test_y[i]) ? view.forget_test : view.retain_test)
        .push_back(static_cast<int>(i));
  }
  return view;
}

Matrix take_rows(const Matrix& X, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  }
  return out;
}

std::vector<uint16_t> take_labels(const std::vector<uint16_t>& y,
                                  const std::vector<int>& idx) {
  std::vector<uint16_t> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(y[static_cast<size_t>(i)]);
  return out;
}

}  // namespace tfer
