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

#include "tfer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "tfer/rng.hpp"

namespace tfer {

std::string to_string(Placement p) {
  switch (p) {
    case Placement::kLayer1:
      return "layer1";
    case Placement::kLayer2:
      return "layer2";
    case Placement::kBoth:
      return "both";
  }
  return "unknown";
}

Placement placement_from_string(const std::string& s) {
  if (s == "layer1") return Placement::kLayer1;
  if (s == "layer2") return Placement::kLayer2;
  if (s == "both") return Placement::kBoth;
  throw ConfigError("unknown placement '" + s + "'");
}

std::string to_string(ContinualStrategy s) {
  return s == ContinualStrategy::kNaive ? "naive" : "orthogonal";
}

ContinualStrategy strategy_from_string(const std::string& s) {
  if (s == "naive") return ContinualStrategy::kNaive;
  if (s == "orthogonal") return ContinualStrategy::kOrthogonal;
  throw ConfigError("unknown continual strategy '" + s + "'");
}

std::vector<LowRankAdapter> make_adapters(const Projector& p,
                                          Placement placement, int rank,
                                          uint64_t seed, double init_std) {
  std::vector<LowRankAdapter> out;
  if (placement == Placement::kLayer1 || placement == Placement::kBoth) {
    out.push_back(LowRankAdapter::create(0, p.d_h(), p.d_in(), rank,
                                         derive_seed(seed, 0), init_std));
  }
  if (placement == Placement::kLayer2 || placement == Placement::kBoth) {
    out.push_back(LowRankAdapter::create(1, p.d_out(), p.d_h(), rank,
                                         derive_seed(seed, 1), init_std));
  }
  return out;
}

void UnlearnConfig::validate() const {
  weights.validate();
  require(epochs >= 0, "UnlearnConfig: epochs must be >= 0");
  require(batch_size >= 1, "UnlearnConfig: batch_size must be >= 1");
  require(lr >= 0.0, "UnlearnConfig: lr must be >= 0");
  require(rank >= 1, "UnlearnConfig: rank must be >= 1");
}

void PretrainConfig::validate() const {
  require(epochs >= 0, "PretrainConfig: epochs must be >= 0");
  require(batch_size >= 1, "PretrainConfig: batch_size must be >= 1");
  require(lr >= 0.0, "PretrainConfig: lr must be >= 0");
  require(tau > 0.0, "PretrainConfig: tau must be > 0");
  require(hidden_dim >= 2 && out_dim >= 2, "PretrainConfig: bad dimensions");
  require(proto_k >= 1, "PretrainConfig: proto_k must be >= 1");
  require(bank_kappa >= 0.0, "PretrainConfig: bank_kappa must be >= 0");
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,loss_push,loss_protect,loss_orth,retain_acc,forget_fpr95\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  e.epoch, e.loss_push, e.loss_protect, e.loss_orth,
                  e.retain_acc, e.forget_fpr95);
    out << buf;
  }
  return out.str();
}

PrototypeBank fit_prototypes_model(const EmbeddingDataset& ds,
                                   const Projector& projector,
                                   const AdapterStack& stack, int K,
                                   double kappa, uint64_t seed) {
  const Matrix X = take_rows(ds.train_X, ds.fit_idx);
  const std::vector<uint16_t> y = take_labels(ds.train_y, ds.fit_idx);
  const BatchForward fw = forward_batch(projector, stack, X);
  return fit_prototypes(fw.Z, y, ds.n_classes, K, kappa, seed);
}

namespace {

struct IndexPools {
  std::vector<int> forget_fit, retain_fit;
  std::vector<int> forget_val, retain_val;
};

IndexPools build_pools(const EmbeddingDataset& ds, const PrototypeBank& bank,
                       const std::set<int>& forget) {
  IndexPools pools;
  for (int i : ds.fit_idx) {
    const int cls = ds.train_y[static_cast<size_t>(i)];
    if (forget.count(cls)) {
      pools.forget_fit.push_back(i);
    } else if (bank.retained().count(cls)) {
      pools.retain_fit.push_back(i);
    }
  }
  for (int i : ds.val_idx) {
    const int cls = ds.train_y[static_cast<size_t>(i)];
    if (forget.count(cls)) {
      pools.forget_val.push_back(i);
    } else if (bank.retained().count(cls)) {
      pools.retain_val.push_back(i);
    }
  }
  return pools;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NonFiniteLossError(std::string(what) + " became non-finite");
  }
}

// Validation metrics logged each epoch. FPR95 uses the negative free energy
// score (no fitting step, cheap enough to run every epoch); it is logged as
// 0 when the split is too small for a meaningful 95% quantile.
void epoch_metrics(const Projector& projector, const AdapterStack& stack,
                   const PrototypeBank& bank, const EmbeddingDataset& ds,
                   const IndexPools& pools, TrainLogEpoch& e) {
  if (!pools.retain_val.empty()) {
    const BatchForward fw =
        forward_batch(projector, stack, take_rows(ds.train_X, pools.retain_val));
    e.retain_acc = retain_accuracy(fw.Z, take_labels(ds.train_y, pools.retain_val),
                                   bank, bank.retained_ids());
    if (pools.retain_val.size() >= 20 && !pools.forget_val.empty()) {
      const ScoreFunction sf = ScoreFunction::neg_free_energy();
      const Vector id_s = sf.score_embeddings(fw.Z, bank);
      const BatchForward ff = forward_batch(
          projector, stack, take_rows(ds.train_X, pools.forget_val));
      const Vector ood_s = sf.score_embeddings(ff.Z, bank);
      std::vector<BinaryScoreSample> samples;
      for (Eigen::Index i = 0; i < id_s.size(); ++i)
        samples.push_back({id_s[i], true});
      for (Eigen::Index i = 0; i < ood_s.size(); ++i)
        samples.push_back({ood_s[i], false});
      e.forget_fpr95 = fpr_at_95_tpr(samples);
    }
  }
}

enum class Method { kTfer, kGradAsc, kRandomLabel };

// Reference A matrices for the orthogonality term: for each adapter of the
// active task, the A of the same layer from the given earlier task.
std::vector<Matrix> reference_A(const AdapterStack& stack, int ref_task_id) {
  const AdapterTask& active = stack.active_task();
  const AdapterTask& ref = stack.task(ref_task_id);
  std::vector<Matrix> out;
  for (const auto& a : active.adapters) {
    const LowRankAdapter* match = nullptr;
    for (const auto& r : ref.adapters) {
      if (r.layer_index == a.layer_index) match = &r;
    }
    require(match != nullptr,
            "continual: reference task lacks an adapter on layer " +
                std::to_string(a.layer_index));
    require(match->A.rows() == a.A.rows() && match->A.cols() == a.A.cols(),
            "continual: reference adapter rank mismatch");
    out.push_back(match->A);
  }
  return out;
}

TrainLog run_adapter_training(const Projector& projector, AdapterStack& stack,
                              PrototypeBank& bank, const EmbeddingDataset& ds,
                              const UnlearnConfig& cfg, Method method,
                              bool reuse_last_task) {
  cfg.validate();
  if (cfg.forget_classes.empty()) {
    throw EmptyForgetSetError("unlearn: empty forget class set");
  }
  bank.mark_forgotten(cfg.forget_classes);

  // reference tasks for the orthogonality term, captured before the new
  // task is added
  std::vector<int> ref_task_ids;
  const bool use_orth = method == Method::kTfer && !reuse_last_task &&
                        cfg.weights.lambda_orth > 0.0 && !stack.empty();
  if (use_orth) {
    if (cfg.orth_all_history) {
      for (const auto& t : stack.tasks()) ref_task_ids.push_back(t.task_id);
    } else {
      ref_task_ids.push_back(stack.tasks().back().task_id);
    }
  }

  if (reuse_last_task) {
    require(!stack.empty(), "unlearn: no task to reuse");
    stack.set_active(stack.tasks().back().task_id);
  } else {
    AdapterTask task;
    task.task_id = static_cast<int>(stack.tasks().size());
    task.adapters = make_adapters(
        projector, cfg.placement, cfg.rank,
        derive_seed(cfg.seed, 0xad4f, static_cast<uint64_t>(task.task_id)),
        cfg.adapter_init_std);
    stack.add_task(std::move(task));
  }

  std::vector<std::vector<Matrix>> refs;  // one entry per reference task
  for (int id : ref_task_ids) refs.push_back(reference_A(stack, id));

  const std::set<int> forget(cfg.forget_classes.begin(),
                             cfg.forget_classes.end());
  const IndexPools pools = build_pools(ds, bank, forget);
  require(!pools.retain_fit.empty(), "unlearn: no retained training samples");
  require(!pools.forget_fit.empty(), "unlearn: no forget training samples");

  const std::vector<int> retained_ids = bank.retained_ids();
  std::vector<int> all_ids(static_cast<size_t>(bank.num_classes()));
  for (int i = 0; i < bank.num_classes(); ++i) all_ids[static_cast<size_t>(i)] = i;

  const int n_retain = static_cast<int>(pools.retain_fit.size());
  const int n_forget = static_cast<int>(pools.forget_fit.size());
  const int steps = (n_retain + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<int> retain_order = pools.retain_fit;
  std::vector<int> forget_order = pools.forget_fit;

  TrainLog log;
  AdapterTask& task = stack.active_task();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5348, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(retain_order);
    shuffle_rng.shuffle(forget_order);

    // random-label baseline: one label per forget sample, redrawn each epoch
    std::vector<uint16_t> rl_labels;
    if (method == Method::kRandomLabel) {
      Rng label_rng(derive_seed(cfg.seed, 0x524c, static_cast<uint64_t>(epoch)));
      rl_labels.resize(static_cast<size_t>(n_forget));
      for (auto& l : rl_labels) {
        l = static_cast<uint16_t>(
            retained_ids[label_rng.uniform_int(retained_ids.size())]);
      }
    }

    TrainLogEpoch e;
    e.epoch = epoch;
    int forget_ptr = 0;
    for (int s = 0; s < steps; ++s) {
      const int r0 = s * cfg.batch_size;
      const int rn = std::min(cfg.batch_size, n_retain - r0);
      std::vector<int> rb(retain_order.begin() + r0,
                          retain_order.begin() + r0 + rn);
      const int fn = std::min(cfg.batch_size, n_forget);
      std::vector<int> fb;
      std::vector<uint16_t> fb_rl;
      fb.reserve(static_cast<size_t>(fn));
      for (int i = 0; i < fn; ++i) {
        const int pos = (forget_ptr + i) % n_forget;
        fb.push_back(forget_order[static_cast<size_t>(pos)]);
        if (method == Method::kRandomLabel) {
          fb_rl.push_back(rl_labels[static_cast<size_t>(pos)]);
        }
      }
      forget_ptr = (forget_ptr + fn) % n_forget;

      const Matrix retain_X = take_rows(ds.train_X, rb);
      const std::vector<uint16_t> retain_y = take_labels(ds.train_y, rb);
      const Matrix forget_X = take_rows(ds.train_X, fb);

      AdapterGrads grads;
      double push_term = 0.0, protect_term = 0.0, orth_term = 0.0;
      if (method == Method::kTfer) {
        ObjectiveResult obj;
        if (refs.empty()) {
          obj = total_objective(forget_X, retain_X, retain_y, projector, stack,
                                bank, cfg.weights, nullptr, cfg.protect_mode);
        } else {
          obj = total_objective(forget_X, retain_X, retain_y, projector, stack,
                                bank, cfg.weights, &refs[0], cfg.protect_mode);
          for (size_t rI = 1; rI < refs.size(); ++rI) {
            for (size_t a = 0; a < task.adapters.size(); ++a) {
              const OrthResult o =
                  orthogonality_loss(task.adapters[a].A, refs[rI][a]);
              obj.orth_term += o.loss;
              obj.grads.dA[a] += cfg.weights.lambda_orth * o.grad;
            }
          }
        }
        grads = std::move(obj.grads);
        push_term = obj.push_term;
        protect_term = obj.protect_term;
        orth_term = obj.orth_term;
        check_finite(obj.value, "objective");
      } else if (method == Method::kGradAsc) {
        grads.setZero(task);
        {
          // maximize forget CE: softmax over all classes, true labels
          const BatchForward ctx = forward_batch(projector, stack, forget_X);
          Matrix gz;
          const Vector losses =
              cross_entropy_batch(ctx.Z, take_labels(ds.train_y, fb), all_ids,
                                  bank, cfg.weights.tau, cfg.protect_mode, gz);
          push_term = -losses.mean();
          gz *= -1.0 / static_cast<double>(forget_X.rows());
          grads.accumulate(
              backward_adapters_batch(projector, stack, ctx, gz));
        }
        {
          const BatchForward ctx = forward_batch(projector, stack, retain_X);
          Matrix gz;
          const Vector losses =
              cross_entropy_batch(ctx.Z, retain_y, retained_ids, bank,
                                  cfg.weights.tau, cfg.protect_mode, gz);
          protect_term = losses.mean();
          gz /= static_cast<double>(retain_X.rows());
          grads.accumulate(
              backward_adapters_batch(projector, stack, ctx, gz));
        }
        check_finite(push_term + protect_term, "objective");
        if (cfg.clip_max_norm > 0.0) {
          const double norm = std::sqrt(grads.squared_norm());
          if (norm > cfg.clip_max_norm) {
            const double scale = cfg.clip_max_norm / norm;
            for (auto& m : grads.dA) m *= scale;
            for (auto& m : grads.dB) m *= scale;
          }
        }
      } else {  // kRandomLabel
        Matrix union_X(retain_X.rows() + forget_X.rows(), retain_X.cols());
        union_X << retain_X, forget_X;
        std::vector<uint16_t> union_y = retain_y;
        union_y.insert(union_y.end(), fb_rl.begin(), fb_rl.end());
        const BatchForward ctx = forward_batch(projector, stack, union_X);
        Matrix gz;
        const Vector losses =
            cross_entropy_batch(ctx.Z, union_y, retained_ids, bank,
                                cfg.weights.tau, cfg.protect_mode, gz);
        protect_term = losses.mean();
        check_finite(protect_term, "objective");
        gz /= static_cast<double>(union_X.rows());
        grads.setZero(task);
        grads.accumulate(backward_adapters_batch(projector, stack, ctx, gz));
      }

      for (size_t a = 0; a < task.adapters.size(); ++a) {
        task.adapters[a].A -= cfg.lr * grads.dA[a];
        task.adapters[a].B -= cfg.lr * grads.dB[a];
      }
      e.loss_push += push_term;
      e.loss_protect += protect_term;
      e.loss_orth += orth_term;
    }
    e.loss_push /= steps;
    e.loss_protect /= steps;
    e.loss_orth /= steps;
    epoch_metrics(projector, stack, bank, ds, pools, e);
    check_finite(e.loss_push, "push loss");
    check_finite(e.loss_protect, "protect loss");
    check_finite(e.loss_orth, "orth loss");
    check_finite(e.retain_acc, "retain accuracy");
    check_finite(e.forget_fpr95, "forget fpr95");
    log.epochs.push_back(e);
  }
  stack.freeze_all();
  return log;
}

}  // namespace

TrainLog unlearn_tfer(const Projector& projector, AdapterStack& stack,
                      PrototypeBank& bank, const EmbeddingDataset& ds,
                      const UnlearnConfig& cfg) {
  return run_adapter_training(projector, stack, bank, ds, cfg, Method::kTfer,
                              /*reuse_last_task=*/false);
}

TrainLog baseline_grad_ascent(const Projector& projector, AdapterStack& stack,
                              PrototypeBank& bank, const EmbeddingDataset& ds,
                              const UnlearnConfig& cfg) {
  return run_adapter_training(projector, stack, bank, ds, cfg,
                              Method::kGradAsc, /*reuse_last_task=*/false);
}

TrainLog baseline_random_label(const Projector& projector, AdapterStack& stack,
                               PrototypeBank& bank, const EmbeddingDataset& ds,
                               const UnlearnConfig& cfg) {
  return run_adapter_training(projector, stack, bank, ds, cfg,
                              Method::kRandomLabel,
                              /*reuse_last_task=*/false);
}

ContinualResult unlearn_continual(const Projector& projector,
                                  AdapterStack& stack, PrototypeBank& bank,
                                  const EmbeddingDataset& ds,
                                  const std::vector<std::vector<int>>& tasks,
                                  const UnlearnConfig& cfg,
                                  ContinualStrategy strategy) {
  require(!tasks.empty(), "unlearn_continual: no tasks");
  {
    ForgetPlan plan{tasks};
    plan.validate(ds.n_classes);
  }
  ContinualResult result;
  for (size_t t = 0; t < tasks.size(); ++t) {
    UnlearnConfig task_cfg = cfg;
    task_cfg.forget_classes = tasks[t];
    task_cfg.seed = derive_seed(cfg.seed, 0x7461736b, static_cast<uint64_t>(t));
    if (strategy == ContinualStrategy::kNaive) {
      // one shared adapter inherited across tasks; no orthogonality term
      task_cfg.weights.lambda_orth = 0.0;
      ContinualTaskResult task_result;
      task_result.task_index = static_cast<int>(t);
      task_result.log =
          run_adapter_training(projector, stack, bank, ds, task_cfg,
                               Method::kTfer, /*reuse_last_task=*/t > 0);
      result.tasks.push_back(std::move(task_result));
    } else {
      ContinualTaskResult task_result;
      task_result.task_index = static_cast<int>(t);
      task_result.log = unlearn_tfer(projector, stack, bank, ds, task_cfg);
      result.tasks.push_back(std::move(task_result));
    }
    // evaluation: current task's forget set as the report's forget metrics,
    // plus FPR95 of every historical forget set
    ContinualTaskResult& tr = result.tasks.back();
    tr.report = evaluate(projector, stack, bank, ds, tasks[t], cfg.scorer);
    tr.report.label = "task" + std::to_string(t) + "_" + to_string(strategy);
    for (size_t s = 0; s <= t; ++s) {
      const EvalReport hist =
          evaluate(projector, stack, bank, ds, tasks[s], cfg.scorer);
      tr.historical_fpr95.emplace_back(static_cast<int>(s),
                                       hist.forget_fpr95.value());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// full-projector training (pretrain / cost-constrained retrain)
// ---------------------------------------------------------------------------

namespace {

PrototypeBank random_bank(int n_classes, int K, int dim, double kappa,
                          uint64_t seed) {
  std::vector<Matrix> protos;
  protos.reserve(static_cast<size_t>(n_classes));
  for (int j = 0; j < n_classes; ++j) {
    protos.push_back(
        uniform_sphere(dim, K, derive_seed(seed, 0x726e64, static_cast<uint64_t>(j))));
  }
  return PrototypeBank(std::move(protos), kappa);
}

struct ProtectTrainSpec {
  std::vector<int> classes;  // softmax support and training data filter
  int epochs;
  int batch_size;
  double lr;
  double tau;
  int proto_k;
  double bank_kappa;
  uint64_t seed;
  ProtectMode mode;
  int hidden_dim;
  int out_dim;
  std::set<int> forget_for_metrics;  // only used for log fpr95
};

PretrainResult train_projector_protect(const EmbeddingDataset& ds,
                                       const ProtectTrainSpec& spec) {
  Projector projector = Projector::random_init(
      ds.d, spec.hidden_dim, spec.out_dim, derive_seed(spec.seed, 0x696e6974));
  AdapterStack no_adapters;
  ProjectorBuilder builder(projector);

  PrototypeBank bank = random_bank(ds.n_classes, spec.proto_k, spec.out_dim,
                                   spec.bank_kappa, spec.seed);
  std::vector<int> not_trained;
  for (int c = 0; c < ds.n_classes; ++c) {
    if (std::find(spec.classes.begin(), spec.classes.end(), c) ==
        spec.classes.end()) {
      not_trained.push_back(c);
    }
  }
  if (!not_trained.empty()) bank.mark_forgotten(not_trained);

  const std::set<int> class_set(spec.classes.begin(), spec.classes.end());
  std::vector<int> fit_pool, val_pool;
  for (int i : ds.fit_idx) {
    if (class_set.count(ds.train_y[static_cast<size_t>(i)])) fit_pool.push_back(i);
  }
  for (int i : ds.val_idx) {
    if (class_set.count(ds.train_y[static_cast<size_t>(i)])) val_pool.push_back(i);
  }
  require(!fit_pool.empty(), "train_projector_protect: no training samples");

  // fixed fit seed: k-means initialization stays stable across refits.
  // classes outside the training subset keep their current (random)
  // prototypes; they are marked forgotten and never scored against.
  auto refit_bank = [&]() {
    const Matrix X = take_rows(ds.train_X, fit_pool);
    const std::vector<uint16_t> y = take_labels(ds.train_y, fit_pool);
    const BatchForward fw = forward_batch(projector, no_adapters, X);
    std::vector<Matrix> protos;
    protos.reserve(static_cast<size_t>(ds.n_classes));
    for (int j = 0; j < ds.n_classes; ++j) {
      if (!class_set.count(j)) {
        protos.push_back(bank.prototypes(j));
        continue;
      }
      std::vector<Eigen::Index> idx;
      for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] == j) idx.push_back(static_cast<Eigen::Index>(i));
      }
      Matrix Xj(static_cast<Eigen::Index>(idx.size()), fw.Z.cols());
      for (size_t r = 0; r < idx.size(); ++r) {
        Xj.row(static_cast<Eigen::Index>(r)) = fw.Z.row(idx[r]);
      }
      protos.push_back(fit_class_prototypes(
          Xj, spec.proto_k,
          derive_seed(spec.seed, 0x6669, static_cast<uint64_t>(j))));
    }
    PrototypeBank fresh(std::move(protos), spec.bank_kappa);
    if (!not_trained.empty()) fresh.mark_forgotten(not_trained);
    bank = std::move(fresh);
  };

  const int n = static_cast<int>(fit_pool.size());
  const int steps = (n + spec.batch_size - 1) / spec.batch_size;
  std::vector<int> order = fit_pool;
  TrainLog log;

  IndexPools metric_pools;
  metric_pools.retain_val = val_pool;
  for (int i : ds.val_idx) {
    if (spec.forget_for_metrics.count(ds.train_y[static_cast<size_t>(i)])) {
      metric_pools.forget_val.push_back(i);
    }
  }

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    refit_bank();
    Rng shuffle_rng(derive_seed(spec.seed, 0x5052, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    TrainLogEpoch e;
    e.epoch = epoch;
    for (int s = 0; s < steps; ++s) {
      const int b0 = s * spec.batch_size;
      const int bn = std::min(spec.batch_size, n - b0);
      std::vector<int> idx(order.begin() + b0, order.begin() + b0 + bn);
      const Matrix X = take_rows(ds.train_X, idx);
      const std::vector<uint16_t> y = take_labels(ds.train_y, idx);
      const BatchForward ctx = forward_batch(projector, no_adapters, X);
      Matrix gz;
      const Vector losses = cross_entropy_batch(
          ctx.Z, y, bank.retained_ids(), bank, spec.tau, spec.mode, gz);
      const double loss = losses.mean();
      check_finite(loss, "protect loss");
      gz /= static_cast<double>(bn);
      const ProjectorGrads g =
          backward_projector_batch(projector, no_adapters, ctx, gz);
      builder.layer(0).W -= spec.lr * g.dW1;
      builder.layer(0).b -= spec.lr * g.db1;
      builder.layer(1).W -= spec.lr * g.dW2;
      builder.layer(1).b -= spec.lr * g.db2;
      e.loss_protect += loss;
    }
    e.loss_protect /= steps;
    epoch_metrics(projector, no_adapters, bank, ds, metric_pools, e);
    check_finite(e.loss_protect, "protect loss");
    log.epochs.push_back(e);
  }
  if (spec.epochs > 0) refit_bank();

  return PretrainResult{std::move(projector), std::move(bank), std::move(log)};
}

}  // namespace

PretrainResult pretrain(const EmbeddingDataset& ds, const PretrainConfig& cfg) {
  cfg.validate();
  ProtectTrainSpec spec;
  for (int c = 0; c < ds.n_classes; ++c) spec.classes.push_back(c);
  spec.epochs = cfg.epochs;
  spec.batch_size = cfg.batch_size;
  spec.lr = cfg.lr;
  spec.tau = cfg.tau;
  spec.proto_k = cfg.proto_k;
  spec.bank_kappa = cfg.bank_kappa;
  spec.seed = cfg.seed;
  spec.mode = cfg.protect_mode;
  spec.hidden_dim = cfg.hidden_dim;
  spec.out_dim = cfg.out_dim;
  return train_projector_protect(ds, spec);
}

RetrainResult baseline_retrain(const EmbeddingDataset& ds,
                               const UnlearnConfig& cfg) {
  cfg.validate();
  if (cfg.forget_classes.empty()) {
    throw EmptyForgetSetError("baseline_retrain: empty forget class set");
  }
  const std::set<int> forget(cfg.forget_classes.begin(),
                             cfg.forget_classes.end());
  ProtectTrainSpec spec;
  for (int c = 0; c < ds.n_classes; ++c) {
    if (!forget.count(c)) spec.classes.push_back(c);
  }
  require(!spec.classes.empty(), "baseline_retrain: nothing retained");
  // budget parity with the unlearning methods: same epochs, batches, lr
  spec.epochs = cfg.epochs;
  spec.batch_size = cfg.batch_size;
  spec.lr = cfg.lr;
  spec.tau = cfg.weights.tau;
  spec.proto_k = cfg.proto_k;
  spec.bank_kappa = cfg.bank_kappa;
  spec.seed = cfg.seed;
  spec.mode = cfg.protect_mode;
  spec.hidden_dim = cfg.hidden_dim;
  spec.out_dim = cfg.out_dim;
  spec.forget_for_metrics = forget;
  PretrainResult res = train_projector_protect(ds, spec);
  return RetrainResult{std::move(res.projector), std::move(res.bank),
                       std::move(res.log)};
}

}  // namespace tfer
