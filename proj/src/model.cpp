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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tfer/rng.hpp"

namespace tfer {

Projector::Projector(AffineLayer l1, AffineLayer l2, bool linear_bypass)
    : l1_(std::move(l1)), l2_(std::move(l2)), linear_bypass_(linear_bypass) {
  require(l1_.W.rows() == l1_.b.size(), "Projector: layer 1 bias shape");
  require(l2_.W.rows() == l2_.b.size(), "Projector: layer 2 bias shape");
  require(l1_.out_dim() == l2_.in_dim(), "Projector: layer dimensions must chain");
}

Projector Projector::identity(int d) {
  AffineLayer l1{Matrix::Identity(d, d), Vector::Zero(d)};
  AffineLayer l2{Matrix::Identity(d, d), Vector::Zero(d)};
  return Projector(std::move(l1), std::move(l2), /*linear_bypass=*/true);
}

Projector Projector::random_init(int d_in, int d_h, int d_out, uint64_t seed) {
  Rng rng(seed);
  auto gauss_layer = [&rng](int out, int in) {
    AffineLayer l{Matrix(out, in), Vector::Zero(out)};
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) l.W(i, j) = s * rng.normal();
    return l;
  };
  AffineLayer l1 = gauss_layer(d_h, d_in);
  AffineLayer l2 = gauss_layer(d_out, d_h);
  return Projector(std::move(l1), std::move(l2), /*linear_bypass=*/false);
}

const AffineLayer& Projector::layer(int i) const {
  require(i == 0 || i == 1, "Projector: layer index out of range");
  return i == 0 ? l1_ : l2_;
}

long Projector::param_count() const {
  return static_cast<long>(l1_.W.size() + l1_.b.size() + l2_.W.size() +
                           l2_.b.size());
}

LowRankAdapter LowRankAdapter::create(int layer_index, int out_dim, int in_dim,
                                      int rank, uint64_t seed,
                                      double init_std) {
  require(layer_index == 0 || layer_index == 1,
          "LowRankAdapter: layer index out of range");
  require(rank >= 1, "LowRankAdapter: rank must be >= 1");
  const int cap = std::min(out_dim, in_dim) / 2;
  require(rank <= cap, "LowRankAdapter: rank " + std::to_string(rank) +
                           " exceeds min(d,k)/2 = " + std::to_string(cap));
  LowRankAdapter a;
  a.layer_index = layer_index;
  a.scale = 1.0 / static_cast<double>(rank);
  a.A = Matrix(rank, in_dim);
  Rng rng(seed);
  require(init_std > 0.0, "LowRankAdapter: init_std must be > 0");
  for (int i = 0; i < rank; ++i)
    for (int j = 0; j < in_dim; ++j) a.A(i, j) = init_std * rng.normal();
  a.B = Matrix::Zero(out_dim, rank);
  return a;
}

void AdapterStack::add_task(AdapterTask task) {
  for (const auto& t : tasks_) {
    require(t.task_id != task.task_id, "AdapterStack: duplicate task id");
  }
  tasks_.push_back(std::move(task));
  active_ = tasks_.back().task_id;
}

void AdapterStack::set_active(int task_id) {
  for (const auto& t : tasks_) {
    if (t.task_id == task_id) {
      active_ = task_id;
      return;
    }
  }
  throw UnknownTaskError("AdapterStack: no task with id " +
                         std::to_string(task_id));
}

int AdapterStack::active_task_id() const {
  if (!active_) throw NoActiveTaskError("AdapterStack: no active task");
  return *active_;
}

const AdapterTask& AdapterStack::task(int task_id) const {
  for (const auto& t : tasks_) {
    if (t.task_id == task_id) return t;
  }
  throw UnknownTaskError("AdapterStack: no task with id " +
                         std::to_string(task_id));
}

AdapterTask& AdapterStack::active_task() {
  const int id = active_task_id();
  for (auto& t : tasks_) {
    if (t.task_id == id) return t;
  }
  throw NoActiveTaskError("AdapterStack: active task vanished");
}

const AdapterTask& AdapterStack::active_task() const {
  return task(active_task_id());
}

Matrix AdapterStack::combined_delta(int layer_index, int out_dim,
                                    int in_dim) const {
  Matrix delta = Matrix::Zero(out_dim, in_dim);
  for (const auto& t : tasks_) {
    for (const auto& a : t.adapters) {
      if (a.layer_index != layer_index) continue;
      require(a.B.rows() == out_dim && a.A.cols() == in_dim,
              "AdapterStack: adapter shape does not match host layer");
      delta.noalias() += a.scale * a.B * a.A;
    }
  }
  return delta;
}

void AdapterGrads::setZero(const AdapterTask& task) {
  dA.clear();
  dB.clear();
  for (const auto& a : task.adapters) {
    dA.push_back(Matrix::Zero(a.A.rows(), a.A.cols()));
    dB.push_back(Matrix::Zero(a.B.rows(), a.B.cols()));
  }
}

void AdapterGrads::accumulate(const AdapterGrads& other, double weight) {
  require(other.dA.size() == dA.size(), "AdapterGrads: size mismatch");
  for (size_t i = 0; i < dA.size(); ++i) {
    dA[i] += weight * other.dA[i];
    dB[i] += weight * other.dB[i];
  }
}

double AdapterGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& m : dA) s += m.squaredNorm();
  for (const auto& m : dB) s += m.squaredNorm();
  return s;
}

void ProjectorGrads::setZero(const Projector& p) {
  dW1 = Matrix::Zero(p.layer(0).W.rows(), p.layer(0).W.cols());
  dW2 = Matrix::Zero(p.layer(1).W.rows(), p.layer(1).W.cols());
  db1 = Vector::Zero(p.layer(0).b.size());
  db2 = Vector::Zero(p.layer(1).b.size());
}

namespace {

struct EffectiveWeights {
  Matrix W1, W2;
};

EffectiveWeights effective_weights(const Projector& p,
                                   const AdapterStack& stack) {
  EffectiveWeights e;
  e.W1 = p.layer(0).W;
  e.W2 = p.layer(1).W;
  if (!stack.empty()) {
    e.W1 += stack.combined_delta(0, p.d_h(), p.d_in());
    e.W2 += stack.combined_delta(1, p.d_out(), p.d_h());
  }
  return e;
}

}  // namespace

UnitVector forward(const Projector& p, const AdapterStack& stack,
                   const Vector& x) {
  return UnitVector(forward_with_context(p, stack, x).z);
}

ForwardContext forward_with_context(const Projector& p,
                                    const AdapterStack& stack,
                                    const Vector& x) {
  if (x.size() != p.d_in()) {
    throw DimensionMismatchError("forward: input dimension " +
                                 std::to_string(x.size()) + " != " +
                                 std::to_string(p.d_in()));
  }
  const EffectiveWeights e = effective_weights(p, stack);
  ForwardContext ctx;
  ctx.x = x;
  Vector h1 = e.W1 * x + p.layer(0).b;
  ctx.a1 = p.linear_bypass() ? h1 : h1.array().tanh().matrix();
  ctx.h2 = e.W2 * ctx.a1 + p.layer(1).b;
  ctx.h2_norm = ctx.h2.norm();
  if (!std::isfinite(ctx.h2_norm)) {
    throw NonFiniteLossError("forward: non-finite activations (diverged "
                             "parameters?)");
  }
  if (!(ctx.h2_norm > kNormEps)) {
    throw ZeroVectorError("forward: pre-normalization output has zero norm");
  }
  ctx.z = ctx.h2 / ctx.h2_norm;
  return ctx;
}

BatchForward forward_batch(const Projector& p, const AdapterStack& stack,
                           const Matrix& X) {
  if (X.cols() != p.d_in()) {
    throw DimensionMismatchError("forward_batch: input dimension " +
                                 std::to_string(X.cols()) + " != " +
                                 std::to_string(p.d_in()));
  }
  const EffectiveWeights e = effective_weights(p, stack);
  BatchForward ctx;
  ctx.X = X;
  Matrix H1 = X * e.W1.transpose();
  H1.rowwise() += p.layer(0).b.transpose();
  ctx.A1 = p.linear_bypass() ? H1 : H1.array().tanh().matrix();
  ctx.H2 = ctx.A1 * e.W2.transpose();
  ctx.H2.rowwise() += p.layer(1).b.transpose();
  ctx.h2_norms = ctx.H2.rowwise().norm();
  for (Eigen::Index i = 0; i < ctx.h2_norms.size(); ++i) {
    if (!std::isfinite(ctx.h2_norms[i])) {
      throw NonFiniteLossError("forward_batch: non-finite activations at row " +
                               std::to_string(i) + " (diverged parameters?)");
    }
    if (!(ctx.h2_norms[i] > kNormEps)) {
      throw ZeroVectorError("forward_batch: zero-norm output at row " +
                            std::to_string(i));
    }
  }
  ctx.Z = ctx.H2.array().colwise() / ctx.h2_norms.array();
  return ctx;
}

namespace {

// Shared backward through normalize -> affine2 -> tanh -> affine1. Returns
// the cotangents needed for both adapter and base-parameter gradients.
struct BackwardCore {
  Matrix G2;   // dL/dH2, N x d_out
  Matrix GH1;  // dL/dH1, N x d_h
};

BackwardCore backward_core(const Projector& p, const AdapterStack& stack,
                           const BatchForward& ctx, const Matrix& G) {
  require(G.rows() == ctx.Z.rows() && G.cols() == ctx.Z.cols(),
          "backward: cotangent shape mismatch");
  const EffectiveWeights e = effective_weights(p, stack);
  BackwardCore out;
  // sphere projection: g2_i = (g_i - (g_i . z_i) z_i) / ||h2_i||
  const Vector gz = (G.array() * ctx.Z.array()).rowwise().sum();
  out.G2 = G - (ctx.Z.array().colwise() * gz.array()).matrix();
  out.G2 = out.G2.array().colwise() / ctx.h2_norms.array();
  Matrix GA1 = out.G2 * e.W2;
  if (p.linear_bypass()) {
    out.GH1 = std::move(GA1);
  } else {
    out.GH1 = GA1.array() * (1.0 - ctx.A1.array().square());
  }
  return out;
}

}  // namespace

AdapterGrads backward_adapters_batch(const Projector& p,
                                     const AdapterStack& stack,
                                     const BatchForward& ctx, const Matrix& G) {
  const AdapterTask& task = stack.active_task();
  const BackwardCore core = backward_core(p, stack, ctx, G);

  // dL/dW_eff per layer, computed lazily
  Matrix dW1, dW2;
  AdapterGrads grads;
  grads.dA.reserve(task.adapters.size());
  grads.dB.reserve(task.adapters.size());
  for (const auto& a : task.adapters) {
    const Matrix* dW = nullptr;
    if (a.layer_index == 0) {
      if (dW1.size() == 0) dW1.noalias() = core.GH1.transpose() * ctx.X;
      dW = &dW1;
    } else {
      if (dW2.size() == 0) dW2.noalias() = core.G2.transpose() * ctx.A1;
      dW = &dW2;
    }
    grads.dA.push_back(a.scale * (a.B.transpose() * (*dW)));
    grads.dB.push_back(a.scale * ((*dW) * a.A.transpose()));
  }
  return grads;
}

AdapterGrads backward_adapters(const Projector& p, const AdapterStack& stack,
                               const ForwardContext& ctx,
                               const Vector& z_cotangent) {
  BatchForward b;
  b.X = ctx.x.transpose();
  b.A1 = ctx.a1.transpose();
  b.H2 = ctx.h2.transpose();
  b.h2_norms = Vector::Constant(1, ctx.h2_norm);
  b.Z = ctx.z.transpose();
  return backward_adapters_batch(p, stack, b, z_cotangent.transpose());
}

ProjectorGrads backward_projector_batch(const Projector& p,
                                        const AdapterStack& stack,
                                        const BatchForward& ctx,
                                        const Matrix& G) {
  const BackwardCore core = backward_core(p, stack, ctx, G);
  ProjectorGrads grads;
  grads.dW2.noalias() = core.G2.transpose() * ctx.A1;
  grads.db2 = core.G2.colwise().sum().transpose();
  grads.dW1.noalias() = core.GH1.transpose() * ctx.X;
  grads.db1 = core.GH1.colwise().sum().transpose();
  return grads;
}

long trainable_param_count(const AdapterStack& stack) {
  if (!stack.has_active()) return 0;
  long n = 0;
  for (const auto& a : stack.active_task().adapters) {
    n += static_cast<long>(a.A.size() + a.B.size());
  }
  return n;
}

Projector merge_task(const Projector& p, const AdapterStack& stack,
                     int task_id) {
  if (!stack.empty()) {
    stack.task(task_id);  // throws UnknownTaskError if absent
  } else if (task_id != 0) {
    throw UnknownTaskError("merge_task: empty stack has no task " +
                           std::to_string(task_id));
  }
  AffineLayer l1{p.layer(0).W, p.layer(0).b};
  AffineLayer l2{p.layer(1).W, p.layer(1).b};
  for (const auto& t : stack.tasks()) {
    if (t.task_id > task_id) continue;
    for (const auto& a : t.adapters) {
      if (a.layer_index == 0) {
        l1.W.noalias() += a.scale * a.B * a.A;
      } else {
        l2.W.noalias() += a.scale * a.B * a.A;
      }
    }
  }
  return Projector(std::move(l1), std::move(l2), p.linear_bypass());
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[8] = {'T', 'F', 'E', 'R', 'M', 'D', 'L', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_i32(std::vector<uint8_t>& out, int32_t v) {
  put_u32(out, static_cast<uint32_t>(v));
}

void put_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
  }
}

void put_matrix(std::vector<uint8_t>& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

void put_vector(std::vector<uint8_t>& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

class ByteReader {
 public:
  ByteReader(const std::vector<uint8_t>& bytes, const std::string& what)
      : bytes_(bytes), what_(what) {}

  size_t offset() const { return off_; }

  void expect_magic(const char* magic, size_t len) {
    need(len);
    if (std::memcmp(bytes_.data() + off_, magic, len) != 0) {
      throw FormatError(what_ + ": bad magic at byte 0");
    }
    off_ += len;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(bytes_[off_ + i]) << (8 * i);
    }
    off_ += 4;
    return v;
  }

  int32_t i32() { return static_cast<int32_t>(u32()); }

  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<uint64_t>(bytes_[off_ + i]) << (8 * i);
    }
    off_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64();
    return m;
  }

  Vector vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
    return v;
  }

  std::string str(size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + off_), len);
    off_ += len;
    return s;
  }

  void expect_end() {
    if (off_ != bytes_.size()) {
      throw FormatError(what_ + ": " + std::to_string(bytes_.size() - off_) +
                        " trailing bytes at byte " + std::to_string(off_));
    }
  }

  void need(size_t n) {
    if (off_ + n > bytes_.size()) {
      throw FormatError(what_ + ": truncated at byte " + std::to_string(off_) +
                        " (need " + std::to_string(n) + " more)");
    }
  }

 private:
  const std::vector<uint8_t>& bytes_;
  std::string what_;
  size_t off_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_model(const Projector& p,
                                     const AdapterStack& stack) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kModelMagic, kModelMagic + 8);
  put_u32(out, static_cast<uint32_t>(p.d_in()));
  put_u32(out, static_cast<uint32_t>(p.d_h()));
  put_u32(out, static_cast<uint32_t>(p.d_out()));
  put_u32(out, static_cast<uint32_t>(p.num_layers()));
  put_u32(out, p.linear_bypass() ? 1u : 0u);
  put_i32(out, stack.has_active() ? stack.active_task_id() : -1);
  put_u32(out, static_cast<uint32_t>(stack.tasks().size()));
  for (const auto& t : stack.tasks()) {
    put_i32(out, t.task_id);
    put_u32(out, static_cast<uint32_t>(t.adapters.size()));
    for (const auto& a : t.adapters) {
      put_u32(out, static_cast<uint32_t>(a.layer_index));
      put_u32(out, static_cast<uint32_t>(a.rank()));
      put_f64(out, a.scale);
    }
  }
  put_matrix(out, p.layer(0).W);
  put_vector(out, p.layer(0).b);
  put_matrix(out, p.layer(1).W);
  put_vector(out, p.layer(1).b);
  for (const auto& t : stack.tasks()) {
    for (const auto& a : t.adapters) {
      put_matrix(out, a.A);
      put_matrix(out, a.B);
    }
  }
  return out;
}

std::pair<Projector, AdapterStack> deserialize_model(
    const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes, "model checkpoint");
  r.expect_magic(kModelMagic, 8);
  const uint32_t d_in = r.u32();
  const uint32_t d_h = r.u32();
  const uint32_t d_out = r.u32();
  const uint32_t layers = r.u32();
  if (layers != 2) {
    throw FormatError("model checkpoint: unsupported layer count " +
                      std::to_string(layers));
  }
  const bool bypass = r.u32() != 0;
  const int32_t active = r.i32();
  const uint32_t n_tasks = r.u32();

  struct AdapterHeader {
    uint32_t layer_index, rank;
    double scale;
  };
  struct TaskHeader {
    int32_t task_id;
    std::vector<AdapterHeader> adapters;
  };
  std::vector<TaskHeader> headers(n_tasks);
  for (auto& t : headers) {
    t.task_id = r.i32();
    const uint32_t n_ad = r.u32();
    t.adapters.resize(n_ad);
    for (auto& a : t.adapters) {
      a.layer_index = r.u32();
      if (a.layer_index > 1) {
        throw FormatError("model checkpoint: adapter layer index " +
                          std::to_string(a.layer_index) + " out of range");
      }
      a.rank = r.u32();
      a.scale = r.f64();
    }
  }

  AffineLayer l1{r.matrix(d_h, d_in), r.vector(d_h)};
  AffineLayer l2{r.matrix(d_out, d_h), r.vector(d_out)};
  Projector p(std::move(l1), std::move(l2), bypass);

  AdapterStack stack;
  for (const auto& t : headers) {
    AdapterTask task;
    task.task_id = t.task_id;
    for (const auto& h : t.adapters) {
      LowRankAdapter a;
      a.layer_index = static_cast<int>(h.layer_index);
      a.scale = h.scale;
      const uint32_t in_dim = h.layer_index == 0 ? d_in : d_h;
      const uint32_t out_dim = h.layer_index == 0 ? d_h : d_out;
      a.A = r.matrix(h.rank, in_dim);
      a.B = r.matrix(out_dim, h.rank);
      task.adapters.push_back(std::move(a));
    }
    stack.add_task(std::move(task));
  }
  stack.freeze_all();
  if (active >= 0) stack.set_active(active);
  r.expect_end();
  return {std::move(p), std::move(stack)};
}

void save_model(const Projector& p, const AdapterStack& stack,
                const std::string& path) {
  const std::vector<uint8_t> bytes = serialize_model(p, stack);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_model: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("save_model: write failed for " + path);
}

std::pair<Projector, AdapterStack> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_model: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace tfer
