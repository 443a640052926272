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

#include "tfer/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tfer/rng.hpp"

namespace tfer {

PrototypeBank::PrototypeBank(std::vector<Matrix> per_class_prototypes,
                             double kappa)
    : protos_(std::move(per_class_prototypes)), kappa_(kappa) {
  require(!protos_.empty(), "PrototypeBank: need at least one class");
  require(kappa_ >= 0.0, "PrototypeBank: kappa must be >= 0");
  k_ = static_cast<int>(protos_[0].rows());
  dim_ = static_cast<int>(protos_[0].cols());
  require(k_ >= 1 && dim_ >= 2, "PrototypeBank: bad prototype shape");
  for (size_t j = 0; j < protos_.size(); ++j) {
    const Matrix& m = protos_[j];
    require(m.rows() == k_ && m.cols() == dim_,
            "PrototypeBank: inconsistent prototype shapes");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      require(std::abs(m.row(r).norm() - 1.0) <= 1e-6,
              "PrototypeBank: prototype of class " + std::to_string(j) +
                  " is not unit-norm");
    }
    retained_.insert(static_cast<int>(j));
  }
}

const Matrix& PrototypeBank::prototypes(int class_id) const {
  if (class_id < 0 || class_id >= num_classes()) {
    throw UnknownClassError("PrototypeBank: class " +
                            std::to_string(class_id) + " out of range");
  }
  return protos_[static_cast<size_t>(class_id)];
}

std::vector<int> PrototypeBank::retained_ids() const {
  return {retained_.begin(), retained_.end()};
}

void PrototypeBank::mark_forgotten(const std::vector<int>& class_ids) {
  if (class_ids.empty()) {
    throw EmptyForgetSetError("mark_forgotten: empty forget set");
  }
  for (int id : class_ids) {
    if (id < 0 || id >= num_classes()) {
      throw UnknownClassError("mark_forgotten: class " + std::to_string(id) +
                              " out of range");
    }
    if (forgotten_.count(id)) {
      throw OverlappingForgetSetsError("mark_forgotten: class " +
                                       std::to_string(id) +
                                       " already forgotten");
    }
  }
  for (int id : class_ids) {
    retained_.erase(id);
    forgotten_.insert(id);
  }
}

double PrototypeBank::class_logit_raw(const Vector& z, int class_id) const {
  const Matrix& P = prototypes(class_id);
  if (z.size() != dim_) {
    throw DimensionMismatchError("class_logit: feature dimension mismatch");
  }
  const Vector s = P * z;
  return log_sum_exp(2.0 * kappa_ * s) - log_sum_exp(kappa_ * s);
}

std::pair<double, Vector> PrototypeBank::class_logit_grad_raw(
    const Vector& z, int class_id) const {
  const Matrix& P = prototypes(class_id);
  if (z.size() != dim_) {
    throw DimensionMismatchError("class_logit_grad: feature dimension mismatch");
  }
  const Vector s = P * z;
  auto softmax = [](const Vector& v) {
    const double m = v.maxCoeff();
    Vector e = (v.array() - m).exp();
    return Vector(e / e.sum());
  };
  const Vector q2 = softmax(2.0 * kappa_ * s);
  const Vector q1 = softmax(kappa_ * s);
  const double logit =
      log_sum_exp(2.0 * kappa_ * s) - log_sum_exp(kappa_ * s);
  Vector grad = P.transpose() * (2.0 * kappa_ * q2 - kappa_ * q1);
  return {logit, std::move(grad)};
}

Matrix PrototypeBank::logits(const Matrix& Z,
                             const std::vector<int>& class_ids) const {
  if (Z.cols() != dim_) {
    throw DimensionMismatchError("logits: feature dimension mismatch");
  }
  const Eigen::Index n = Z.rows();
  Matrix out(n, static_cast<Eigen::Index>(class_ids.size()));
  for (size_t c = 0; c < class_ids.size(); ++c) {
    const Matrix& P = prototypes(class_ids[c]);
    const Matrix S = Z * P.transpose();  // n x K
    if (k_ == 1) {
      out.col(static_cast<Eigen::Index>(c)) = kappa_ * S.col(0);
      continue;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector s = S.row(i).transpose();
      out(i, static_cast<Eigen::Index>(c)) =
          log_sum_exp(2.0 * kappa_ * s) - log_sum_exp(kappa_ * s);
    }
  }
  return out;
}

Matrix PrototypeBank::logit_grad_batch(const Matrix& Z, int class_id) const {
  const Matrix& P = prototypes(class_id);
  if (Z.cols() != dim_) {
    throw DimensionMismatchError("logit_grad_batch: feature dimension mismatch");
  }
  const Eigen::Index n = Z.rows();
  if (k_ == 1) {
    Matrix g(n, dim_);
    g.rowwise() = kappa_ * P.row(0);
    return g;
  }
  const Matrix S = Z * P.transpose();  // n x K
  Matrix coeff(n, k_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector s = S.row(i).transpose();
    auto softmax = [](const Vector& v) {
      const double m = v.maxCoeff();
      Vector e = (v.array() - m).exp();
      return Vector(e / e.sum());
    };
    const Vector q2 = softmax(2.0 * kappa_ * s);
    const Vector q1 = softmax(kappa_ * s);
    coeff.row(i) = (2.0 * kappa_ * q2 - kappa_ * q1).transpose();
  }
  return coeff * P;
}

void PrototypeBank::max_similarity(const Matrix& Z, int class_id, Vector& sims,
                                   std::vector<int>& argmax) const {
  const Matrix& P = prototypes(class_id);
  const Matrix S = Z * P.transpose();
  const Eigen::Index n = Z.rows();
  sims.resize(n);
  argmax.assign(static_cast<size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best;
    sims[i] = S.row(i).maxCoeff(&best);
    argmax[static_cast<size_t>(i)] = static_cast<int>(best);
  }
}

namespace {

// Spherical k-means on unit rows. Empty clusters are reseeded to the point
// with the lowest best-similarity.
Matrix spherical_kmeans(const Matrix& X, int K, uint64_t seed) {
  const Eigen::Index n = X.rows();
  Rng rng(seed);
  std::vector<int> order(static_cast<size_t>(n));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  Matrix centers(K, X.cols());
  for (int k = 0; k < K; ++k) centers.row(k) = X.row(order[k]);

  std::vector<int> assign(static_cast<size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    const Matrix S = X * centers.transpose();
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      S.row(i).maxCoeff(&best);
      if (assign[static_cast<size_t>(i)] != static_cast<int>(best)) {
        assign[static_cast<size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    for (int k = 0; k < K; ++k) {
      Vector mean = Vector::Zero(X.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assign[static_cast<size_t>(i)] == k) {
          mean += X.row(i).transpose();
          ++count;
        }
      }
      if (count == 0) {
        // reseed to the worst-covered point
        Eigen::Index worst = 0;
        double worst_sim = std::numeric_limits<double>::infinity();
        const Matrix S2 = X * centers.transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double best_sim = S2.row(i).maxCoeff();
          if (best_sim < worst_sim) {
            worst_sim = best_sim;
            worst = i;
          }
        }
        centers.row(k) = X.row(worst);
        continue;
      }
      centers.row(k) = normalize(mean / count).vec().transpose();
    }
  }
  return centers;
}

}  // namespace

Matrix fit_class_prototypes(const Matrix& X, int K, uint64_t seed) {
  require(K >= 1, "fit_class_prototypes: K must be >= 1");
  if (X.rows() < K) {
    throw InsufficientSamplesError("fit_class_prototypes: " +
                                   std::to_string(X.rows()) +
                                   " samples for K = " + std::to_string(K));
  }
  if (K == 1) {
    const Vector mean = X.colwise().mean().transpose();
    return normalize(mean).vec().transpose();
  }
  return spherical_kmeans(X, K, seed);
}

PrototypeBank fit_prototypes(const Matrix& Z, const std::vector<uint16_t>& y,
                             int n_classes, int K, double kappa,
                             uint64_t seed) {
  require(n_classes >= 1, "fit_prototypes: need at least one class");
  require(K >= 1, "fit_prototypes: K must be >= 1");
  require(Z.rows() == static_cast<Eigen::Index>(y.size()),
          "fit_prototypes: label count != sample count");

  std::vector<std::vector<Eigen::Index>> by_class(
      static_cast<size_t>(n_classes));
  for (size_t i = 0; i < y.size(); ++i) {
    require(y[i] < n_classes, "fit_prototypes: label out of range");
    by_class[y[i]].push_back(static_cast<Eigen::Index>(i));
  }

  std::vector<Matrix> protos;
  protos.reserve(static_cast<size_t>(n_classes));
  for (int j = 0; j < n_classes; ++j) {
    const auto& idx = by_class[static_cast<size_t>(j)];
    if (static_cast<int>(idx.size()) < K) {
      throw InsufficientSamplesError(
          "fit_prototypes: class " + std::to_string(j) + " has " +
          std::to_string(idx.size()) + " samples, needs >= " +
          std::to_string(K));
    }
    Matrix Xj(static_cast<Eigen::Index>(idx.size()), Z.cols());
    for (size_t r = 0; r < idx.size(); ++r) Xj.row(static_cast<Eigen::Index>(r)) = Z.row(idx[r]);
    protos.push_back(fit_class_prototypes(
        Xj, K, derive_seed(seed, static_cast<uint64_t>(j))));
  }
  return PrototypeBank(std::move(protos), kappa);
}

// ---------------------------------------------------------------------------
// bank checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr char kBankMagic[8] = {'T', 'F', 'E', 'R', 'B', 'N', 'K', '1'};

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

}  // namespace

void save_bank(const PrototypeBank& bank, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kBankMagic, kBankMagic + 8);
  append_u32(out, static_cast<uint32_t>(bank.num_classes()));
  append_u32(out, static_cast<uint32_t>(bank.k()));
  append_u32(out, static_cast<uint32_t>(bank.dim()));
  append_f64(out, bank.kappa());
  append_u32(out, static_cast<uint32_t>(bank.forgotten().size()));
  for (int id : bank.forgotten()) append_u32(out, static_cast<uint32_t>(id));
  for (int j = 0; j < bank.num_classes(); ++j) {
    const Matrix& P = bank.prototypes(j);
    for (Eigen::Index r = 0; r < P.rows(); ++r)
      for (Eigen::Index c = 0; c < P.cols(); ++c) append_f64(out, P(r, c));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_bank: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_bank: write failed for " + path);
}

PrototypeBank load_bank(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_bank: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  size_t off = 0;
  auto need = [&](size_t n) {
    if (off + n > bytes.size()) {
      throw FormatError("bank checkpoint: truncated at byte " +
                        std::to_string(off));
    }
  };
  need(8);
  if (std::memcmp(bytes.data(), kBankMagic, 8) != 0) {
    throw FormatError("bank checkpoint: bad magic at byte 0");
  }
  off = 8;
  auto get_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  };
  auto get_f64 = [&]() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(bytes[off + i]) << (8 * i);
    off += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  };
  const uint32_t n_classes = get_u32();
  const uint32_t K = get_u32();
  const uint32_t dim = get_u32();
  const double kappa = get_f64();
  const uint32_t n_forgotten = get_u32();
  std::vector<int> forgotten(n_forgotten);
  for (auto& id : forgotten) id = static_cast<int>(get_u32());
  std::vector<Matrix> protos;
  protos.reserve(n_classes);
  for (uint32_t j = 0; j < n_classes; ++j) {
    Matrix P(K, dim);
    for (uint32_t r = 0; r < K; ++r)
      for (uint32_t c = 0; c < dim; ++c) P(r, c) = get_f64();
    protos.push_back(std::move(P));
  }
  if (off != bytes.size()) {
    throw FormatError("bank checkpoint: trailing bytes at byte " +
                      std::to_string(off));
  }
  PrototypeBank bank(std::move(protos), kappa);
  if (!forgotten.empty()) bank.mark_forgotten(forgotten);
  return bank;
}

}  // namespace tfer
