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

#include <algorithm>
#include <cmath>

namespace tfer {

namespace {

Vector softmax(const Vector& v) {
  const double m = v.maxCoeff();
  Vector e = (v.array() - m).exp();
  return e / e.sum();
}

}  // namespace

PushResult push_loss(const UnitVector& z, const PrototypeBank& bank) {
  const std::vector<int> retained = bank.retained_ids();
  if (retained.empty()) {
    throw EmptyRetainSetError("push_loss: no retained classes");
  }
  const size_t n = retained.size();
  Vector logits(static_cast<Eigen::Index>(n));
  std::vector<Vector> grads(n);
  for (size_t j = 0; j < n; ++j) {
    auto [lj, gj] = bank.class_logit_grad(z, retained[j]);
    logits[static_cast<Eigen::Index>(j)] = lj;
    grads[j] = std::move(gj);
  }
  PushResult out;
  out.loss = log_sum_exp(logits);
  out.decomposition.alpha = softmax(logits);
  out.decomposition.per_class_grads = std::move(grads);
  Vector total = Vector::Zero(z.dim());
  for (size_t j = 0; j < n; ++j) {
    total += out.decomposition.alpha[static_cast<Eigen::Index>(j)] *
             out.decomposition.per_class_grads[j];
  }
  out.decomposition.total = total;
  out.grad_z = std::move(total);
  return out;
}

ProtectResult protect_loss(const UnitVector& z, int label,
                           const PrototypeBank& bank, double tau,
                           ProtectMode mode) {
  require(tau > 0.0, "protect_loss: tau must be > 0");
  if (label < 0 || label >= bank.num_classes()) {
    throw UnknownClassError("protect_loss: label " + std::to_string(label) +
                            " out of range");
  }
  if (!bank.retained().count(label)) {
    throw ForgetLabelInProtectError("protect_loss: label " +
                                    std::to_string(label) +
                                    " is a forgotten class");
  }
  Matrix Z = z.vec().transpose();
  std::vector<uint16_t> y{static_cast<uint16_t>(label)};
  Matrix grads;
  const Vector losses =
      cross_entropy_batch(Z, y, bank.retained_ids(), bank, tau, mode, grads);
  ProtectResult out;
  out.loss = losses[0];
  out.grad_z = grads.row(0).transpose();
  return out;
}

OrthResult orthogonality_loss(const Matrix& A_t, const Matrix& A_ref) {
  if (A_t.rows() != A_ref.rows() || A_t.cols() != A_ref.cols()) {
    throw ShapeMismatchError("orthogonality_loss: shapes differ");
  }
  const Matrix delta = A_t - A_ref;
  const Matrix cross = delta.transpose() * A_ref;
  OrthResult out;
  out.loss = cross.squaredNorm();
  out.grad = 2.0 * A_ref * (A_ref.transpose() * delta);
  return out;
}

Vector push_loss_batch(const Matrix& Z, const PrototypeBank& bank,
                       Matrix& grads) {
  const std::vector<int> retained = bank.retained_ids();
  if (retained.empty()) {
    throw EmptyRetainSetError("push_loss_batch: no retained classes");
  }
  const Eigen::Index n = Z.rows();
  const Matrix L = bank.logits(Z, retained);  // n x C
  Vector losses(n);
  Matrix alpha(n, L.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector row = L.row(i).transpose();
    losses[i] = log_sum_exp(row);
    alpha.row(i) = softmax(row).transpose();
  }
  grads = Matrix::Zero(n, Z.cols());
  for (size_t c = 0; c < retained.size(); ++c) {
    const Matrix Gc = bank.logit_grad_batch(Z, retained[c]);
    grads += (Gc.array().colwise() *
              alpha.col(static_cast<Eigen::Index>(c)).array())
                 .matrix();
  }
  return losses;
}

Vector cross_entropy_batch(const Matrix& Z, const std::vector<uint16_t>& y,
                           const std::vector<int>& class_ids,
                           const PrototypeBank& bank, double tau,
                           ProtectMode mode, Matrix& grads) {
  require(tau > 0.0, "cross_entropy_batch: tau must be > 0");
  require(!class_ids.empty(), "cross_entropy_batch: empty class set");
  const Eigen::Index n = Z.rows();
  require(static_cast<Eigen::Index>(y.size()) == n,
          "cross_entropy_batch: label count mismatch");
  const Eigen::Index C = static_cast<Eigen::Index>(class_ids.size());

  // column index of each label within class_ids
  std::vector<Eigen::Index> label_col(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto it = std::find(class_ids.begin(), class_ids.end(),
                        static_cast<int>(y[static_cast<size_t>(i)]));
    require(it != class_ids.end(),
            "cross_entropy_batch: label not in class set");
    label_col[static_cast<size_t>(i)] = it - class_ids.begin();
  }

  Matrix S(n, C);                          // scores
  std::vector<std::vector<int>> hard_idx;  // argmax prototype per (i, c)
  if (mode == ProtectMode::kHardMax) {
    hard_idx.resize(static_cast<size_t>(C));
    Vector sims;
    for (Eigen::Index c = 0; c < C; ++c) {
      bank.max_similarity(Z, class_ids[static_cast<size_t>(c)], sims,
                          hard_idx[static_cast<size_t>(c)]);
      S.col(c) = sims / tau;
    }
  } else {
    // mixture logits rescaled to similarity units
    require(bank.kappa() > 0.0,
            "cross_entropy_batch: soft mode needs kappa > 0");
    S = bank.logits(Z, class_ids) / (bank.kappa() * tau);
  }

  Vector losses(n);
  grads = Matrix::Zero(n, Z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector q = softmax(S.row(i).transpose());
    const Eigen::Index yc = label_col[static_cast<size_t>(i)];
    losses[i] = -S(i, yc) + log_sum_exp(S.row(i).transpose());
    // dL/ds_c = q_c - 1[c == yc]; chain into z per mode
    for (Eigen::Index c = 0; c < C; ++c) {
      const double w = q[c] - (c == yc ? 1.0 : 0.0);
      if (w == 0.0) continue;
      if (mode == ProtectMode::kHardMax) {
        const Matrix& P = bank.prototypes(class_ids[static_cast<size_t>(c)]);
        grads.row(i) +=
            (w / tau) * P.row(hard_idx[static_cast<size_t>(c)]
                                      [static_cast<size_t>(i)]);
      } else {
        const auto [lc, gc] = bank.class_logit_grad_raw(
            Z.row(i).transpose(), class_ids[static_cast<size_t>(c)]);
        grads.row(i) += (w / (bank.kappa() * tau)) * gc.transpose();
      }
    }
  }
  return losses;
}

ObjectiveResult total_objective(const Matrix& forget_X, const Matrix& retain_X,
                                const std::vector<uint16_t>& retain_y,
                                const Projector& projector,
                                const AdapterStack& stack,
                                const PrototypeBank& bank,
                                const LossWeights& weights,
                                const std::vector<Matrix>* ref_A,
                                ProtectMode mode) {
  weights.validate();
  require(retain_X.rows() > 0, "total_objective: retain batch must be non-empty");

  const AdapterTask& task = stack.active_task();
  ObjectiveResult out;
  out.grads.setZero(task);

  const Eigen::Index n_f = forget_X.rows();
  if (n_f > 0 && weights.lambda_f > 0.0) {
    const BatchForward ctx = forward_batch(projector, stack, forget_X);
    Matrix gz;
    const Vector losses = push_loss_batch(ctx.Z, bank, gz);
    out.push_term = losses.mean();
    gz *= weights.lambda_f / static_cast<double>(n_f);
    out.grads.accumulate(backward_adapters_batch(projector, stack, ctx, gz));
  } else if (n_f > 0) {
    const BatchForward ctx = forward_batch(projector, stack, forget_X);
    Matrix gz;
    out.push_term = push_loss_batch(ctx.Z, bank, gz).mean();
  }

  {
    const BatchForward ctx = forward_batch(projector, stack, retain_X);
    Matrix gz;
    const Vector losses = cross_entropy_batch(
        ctx.Z, retain_y, bank.retained_ids(), bank, weights.tau, mode, gz);
    out.protect_term = losses.mean();
    gz /= static_cast<double>(retain_X.rows());
    out.grads.accumulate(backward_adapters_batch(projector, stack, ctx, gz));
  }

  if (ref_A != nullptr && weights.lambda_orth > 0.0) {
    require(ref_A->size() == task.adapters.size(),
            "total_objective: reference adapter count mismatch");
    for (size_t i = 0; i < task.adapters.size(); ++i) {
      const OrthResult o =
          orthogonality_loss(task.adapters[i].A, (*ref_A)[i]);
      out.orth_term += o.loss;
      out.grads.dA[i] += weights.lambda_orth * o.grad;
    }
  }

  out.value = weights.lambda_f * out.push_term + out.protect_term +
              weights.lambda_orth * out.orth_term;
  return out;
}

}  // namespace tfer
