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

#include "tfer/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "tfer/geometry.hpp"

namespace tfer {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kNegFreeEnergy:
      return "neg_free_energy";
    case ScoreKind::kMaxSimilarity:
      return "max_similarity";
    case ScoreKind::kMahalanobis:
      return "mahalanobis";
  }
  return "unknown";
}

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "neg_free_energy") return ScoreKind::kNegFreeEnergy;
  if (s == "max_similarity") return ScoreKind::kMaxSimilarity;
  if (s == "mahalanobis") return ScoreKind::kMahalanobis;
  throw ConfigError("unknown scorer '" + s + "'");
}

ScoreFunction ScoreFunction::neg_free_energy() {
  return ScoreFunction(ScoreKind::kNegFreeEnergy);
}

ScoreFunction ScoreFunction::max_similarity() {
  return ScoreFunction(ScoreKind::kMaxSimilarity);
}

ScoreFunction ScoreFunction::fit_mahalanobis(
    const Matrix& features, const std::vector<uint16_t>& labels,
    double shrinkage) {
  if (!(shrinkage > 0.0)) {
    throw SingularCovarianceError(
        "fit_mahalanobis: shrinkage must be > 0 to guarantee an invertible "
        "covariance");
  }
  require(features.rows() == static_cast<Eigen::Index>(labels.size()),
          "fit_mahalanobis: label count mismatch");
  std::set<uint16_t> classes(labels.begin(), labels.end());
  require(!classes.empty(), "fit_mahalanobis: no samples");
  const Eigen::Index d = features.cols();

  ScoreFunction sf(ScoreKind::kMahalanobis);
  sf.means_.resize(static_cast<Eigen::Index>(classes.size()), d);
  Matrix cov = Matrix::Zero(d, d);
  Eigen::Index c = 0;
  for (uint16_t cls : classes) {
    std::vector<Eigen::Index> idx;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(static_cast<Eigen::Index>(i));
    }
    if (idx.size() < 2) {
      throw InsufficientSamplesError("fit_mahalanobis: class " +
                                     std::to_string(cls) +
                                     " has fewer than 2 samples");
    }
    Vector mean = Vector::Zero(d);
    for (Eigen::Index i : idx) mean += features.row(i).transpose();
    mean /= static_cast<double>(idx.size());
    sf.means_.row(c++) = mean.transpose();
    for (Eigen::Index i : idx) {
      const Vector r = features.row(i).transpose() - mean;
      cov.noalias() += r * r.transpose();
    }
  }
  cov /= static_cast<double>(features.rows());
  cov += shrinkage * Matrix::Identity(d, d);
  sf.precision_ = cov.ldlt().solve(Matrix::Identity(d, d));
  return sf;
}

Vector ScoreFunction::score_features(const Matrix& H) const {
  require(kind_ == ScoreKind::kMahalanobis,
          "score_features: only the mahalanobis scorer consumes raw features");
  const Eigen::Index n = H.rows();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < means_.rows(); ++c) {
      const Vector r = H.row(i).transpose() - means_.row(c).transpose();
      const double d2 = r.dot(precision_ * r);
      best = std::min(best, d2);
    }
    out[i] = -best;
  }
  return out;
}

Vector ScoreFunction::score_embeddings(const Matrix& Z,
                                       const PrototypeBank& bank) const {
  const std::vector<int> retained = bank.retained_ids();
  if (retained.empty()) {
    throw EmptyRetainSetError("score_embeddings: no retained classes");
  }
  const Eigen::Index n = Z.rows();
  Vector out(n);
  if (kind_ == ScoreKind::kNegFreeEnergy) {
    const Matrix L = bank.logits(Z, retained);
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] = -total_free_energy(L.row(i).transpose());
    }
    return out;
  }
  if (kind_ == ScoreKind::kMaxSimilarity) {
    out.setConstant(-std::numeric_limits<double>::infinity());
    Vector sims;
    std::vector<int> arg;
    for (int cls : retained) {
      bank.max_similarity(Z, cls, sims, arg);
      out = out.cwiseMax(sims);
    }
    return out;
  }
  throw InvalidArgumentError(
      "score_embeddings: mahalanobis scorer needs raw features");
}

double auroc(const std::vector<BinaryScoreSample>& samples) {
  size_t n_pos = 0, n_neg = 0;
  for (const auto& s : samples) {
    require(std::isfinite(s.score), "auroc: non-finite score");
    (s.is_id ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw DegenerateLabelsError("auroc: need at least one ID and one OOD sample");
  }
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return samples[a].score < samples[b].score;
  });
  // sum of average ranks of positives, tie groups share the mean rank
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() &&
           samples[order[j]].score == samples[order[i]].score) {
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (size_t k = i; k < j; ++k) {
      if (samples[order[k]].is_id) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double fpr_at_95_tpr(const std::vector<BinaryScoreSample>& samples) {
  std::vector<double> id_scores, ood_scores;
  for (const auto& s : samples) {
    require(std::isfinite(s.score), "fpr_at_95_tpr: non-finite score");
    (s.is_id ? id_scores : ood_scores).push_back(s.score);
  }
  if (id_scores.size() < 20) {
    throw TooFewPositivesError("fpr_at_95_tpr: need >= 20 ID samples, got " +
                               std::to_string(id_scores.size()));
  }
  if (ood_scores.empty()) {
    throw DegenerateLabelsError("fpr_at_95_tpr: no OOD samples");
  }
  const double needed = 0.95 * static_cast<double>(id_scores.size());
  // candidate thresholds are the observed scores; pick the largest t with
  // #(ID >= t) >= 95%
  std::vector<double> candidates = id_scores;
  candidates.insert(candidates.end(), ood_scores.begin(), ood_scores.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  std::sort(id_scores.begin(), id_scores.end());
  double threshold = candidates.front();
  for (double t : candidates) {
    const auto lo = std::lower_bound(id_scores.begin(), id_scores.end(), t);
    const double id_at_or_above =
        static_cast<double>(id_scores.end() - lo);
    if (id_at_or_above >= needed) {
      threshold = t;
    }
  }
  size_t fp = 0;
  for (double s : ood_scores) {
    if (s >= threshold) ++fp;
  }
  return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

double retain_accuracy(const Matrix& Z, const std::vector<uint16_t>& y,
                       const PrototypeBank& bank,
                       const std::vector<int>& retained) {
  if (retained.empty()) {
    throw EmptyRetainSetError("retain_accuracy: no retained classes");
  }
  require(Z.rows() == static_cast<Eigen::Index>(y.size()),
          "retain_accuracy: label count mismatch");
  const Matrix L = bank.logits(Z, retained);
  size_t correct = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    int best = retained[0];
    double best_val = L(i, 0);
    for (size_t c = 1; c < retained.size(); ++c) {
      const double v = L(i, static_cast<Eigen::Index>(c));
      if (v > best_val) {  // strict: ties keep the smaller class id
        best_val = v;
        best = retained[c];
      }
    }
    if (best == static_cast<int>(y[static_cast<size_t>(i)])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(Z.rows());
}

namespace {

std::vector<BinaryScoreSample> pair_scores(const Vector& id_scores,
                                           const Vector& ood_scores) {
  std::vector<BinaryScoreSample> out;
  out.reserve(static_cast<size_t>(id_scores.size() + ood_scores.size()));
  for (Eigen::Index i = 0; i < id_scores.size(); ++i) {
    out.push_back({id_scores[i], true});
  }
  for (Eigen::Index i = 0; i < ood_scores.size(); ++i) {
    out.push_back({ood_scores[i], false});
  }
  return out;
}

}  // namespace

EvalReport evaluate(const Projector& projector, const AdapterStack& stack,
                    const PrototypeBank& bank_in, const EmbeddingDataset& ds,
                    const std::vector<int>& forget_classes, ScoreKind kind,
                    double shrinkage_scale) {
  if (ds.external.empty()) {
    throw MissingPartitionError("evaluate: no external OOD sets");
  }
  // the detector under test never scores against the forget classes, even
  // for a model that has not been unlearned yet (the "Original" row)
  PrototypeBank bank = bank_in;
  {
    std::vector<int> to_mark;
    for (int id : forget_classes) {
      if (!bank.forgotten().count(id)) to_mark.push_back(id);
    }
    if (!to_mark.empty()) bank.mark_forgotten(to_mark);
  }
  const std::set<int> forget(forget_classes.begin(), forget_classes.end());
  std::set<int> excluded = forget;
  for (int id : bank.forgotten()) excluded.insert(id);

  std::vector<int> retain_test, forget_test;
  for (size_t i = 0; i < ds.test_y.size(); ++i) {
    const int cls = ds.test_y[i];
    if (forget.count(cls)) {
      forget_test.push_back(static_cast<int>(i));
    } else if (!excluded.count(cls)) {
      retain_test.push_back(static_cast<int>(i));
    }
  }
  if (!forget_classes.empty() && forget_test.empty()) {
    throw MissingPartitionError("evaluate: forget-test partition is empty");
  }
  if (retain_test.empty()) {
    throw MissingPartitionError("evaluate: retain-test partition is empty");
  }

  EvalReport report;
  report.scorer = to_string(kind);

  // fitted state comes from retained-class training features
  std::vector<int> retain_train;
  for (size_t i = 0; i < ds.train_y.size(); ++i) {
    if (!excluded.count(ds.train_y[i])) {
      retain_train.push_back(static_cast<int>(i));
    }
  }
  const BatchForward tr = forward_batch(projector, stack, take_rows(ds.train_X, retain_train));
  const BatchForward te = forward_batch(projector, stack, take_rows(ds.test_X, retain_test));

  ScoreFunction scorer = ScoreFunction::neg_free_energy();
  if (kind == ScoreKind::kMahalanobis) {
    // penultimate features, shrinkage eps = scale * trace / D
    const Matrix& H = tr.H2;
    Matrix centered = H.rowwise() - H.colwise().mean();
    const double trace = centered.array().square().sum() /
                         static_cast<double>(H.rows());
    const double eps = std::max(shrinkage_scale * trace /
                                    static_cast<double>(H.cols()),
                                1e-12);
    scorer = ScoreFunction::fit_mahalanobis(
        tr.H2, take_labels(ds.train_y, retain_train), eps);
  } else if (kind == ScoreKind::kMaxSimilarity) {
    scorer = ScoreFunction::max_similarity();
  }

  auto score_matrix = [&](const Matrix& X_raw) {
    const BatchForward fw = forward_batch(projector, stack, X_raw);
    if (kind == ScoreKind::kMahalanobis) return scorer.score_features(fw.H2);
    return scorer.score_embeddings(fw.Z, bank);
  };

  const Vector id_scores = kind == ScoreKind::kMahalanobis
                               ? scorer.score_features(te.H2)
                               : scorer.score_embeddings(te.Z, bank);

  if (!forget_classes.empty()) {
    const Vector f_scores = score_matrix(take_rows(ds.test_X, forget_test));
    const auto samples = pair_scores(id_scores, f_scores);
    report.forget_auroc = auroc(samples);
    report.forget_fpr95 = fpr_at_95_tpr(samples);
  }

  report.retain_acc = retain_accuracy(te.Z, take_labels(ds.test_y, retain_test),
                                      bank, bank.retained_ids());

  double sum_auc = 0.0, sum_fpr = 0.0;
  for (const auto& set : ds.external) {
    const Vector o_scores = score_matrix(set.X);
    const auto samples = pair_scores(id_scores, o_scores);
    OodSetMetrics m;
    m.name = set.name;
    m.auroc = auroc(samples);
    m.fpr95 = fpr_at_95_tpr(samples);
    sum_auc += m.auroc;
    sum_fpr += m.fpr95;
    report.external.push_back(std::move(m));
  }
  report.avg_ood_auroc = sum_auc / static_cast<double>(ds.external.size());
  report.avg_ood_fpr95 = sum_fpr / static_cast<double>(ds.external.size());
  return report;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

std::string opt_pct(const std::optional<double>& v) {
  return v ? pct(*v) : std::string("-");
}

}  // namespace

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  require(!reports.empty(), "reports_to_csv: no reports");
  std::ostringstream out;
  out << "label,scorer,forget_auroc,forget_fpr95,retain_acc";
  for (const auto& m : reports.front().external) {
    out << ',' << m.name << "_auroc," << m.name << "_fpr95";
  }
  out << ",avg_ood_auroc,avg_ood_fpr95\n";
  for (const auto& r : reports) {
    require(r.external.size() == reports.front().external.size(),
            "reports_to_csv: inconsistent external set layout");
    out << r.label << ',' << r.scorer << ',' << opt_pct(r.forget_auroc) << ','
        << opt_pct(r.forget_fpr95) << ',' << pct(r.retain_acc);
    for (const auto& m : r.external) {
      out << ',' << pct(m.auroc) << ',' << pct(m.fpr95);
    }
    out << ',' << pct(r.avg_ood_auroc) << ',' << pct(r.avg_ood_fpr95) << '\n';
  }
  return out.str();
}

std::vector<EvalReport> reports_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("reports_from_csv: empty input");
  }
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  const std::vector<std::string> header = split(line);
  if (header.size() < 7 || header[0] != "label") {
    throw FormatError("reports_from_csv: unexpected header");
  }
  // external set names come from columns between retain_acc and avg_ood_auroc
  std::vector<std::string> set_names;
  for (size_t c = 5; c + 2 < header.size(); c += 2) {
    std::string name = header[c];
    const std::string suffix = "_auroc";
    if (name.size() > suffix.size() &&
        name.substr(name.size() - suffix.size()) == suffix) {
      set_names.push_back(name.substr(0, name.size() - suffix.size()));
    } else {
      throw FormatError("reports_from_csv: unexpected column '" + name + "'");
    }
  }
  std::vector<EvalReport> reports;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line);
    if (f.size() != header.size()) {
      throw FormatError("reports_from_csv: row has " +
                        std::to_string(f.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    EvalReport r;
    r.label = f[0];
    r.scorer = f[1];
    auto parse = [](const std::string& s) { return std::stod(s) / 100.0; };
    if (f[2] != "-") r.forget_auroc = parse(f[2]);
    if (f[3] != "-") r.forget_fpr95 = parse(f[3]);
    r.retain_acc = parse(f[4]);
    size_t c = 5;
    for (const auto& name : set_names) {
      OodSetMetrics m;
      m.name = name;
      m.auroc = parse(f[c++]);
      m.fpr95 = parse(f[c++]);
      r.external.push_back(std::move(m));
    }
    r.avg_ood_auroc = parse(f[c++]);
    r.avg_ood_fpr95 = parse(f[c++]);
    reports.push_back(std::move(r));
  }
  return reports;
}

std::string reports_to_markdown(const std::vector<EvalReport>& reports) {
  require(!reports.empty(), "reports_to_markdown: no reports");
  std::vector<std::string> headers{"Method", "Scorer", "Forget AUC",
                                   "Forget FPR", "Retain-Acc"};
  for (const auto& m : reports.front().external) {
    headers.push_back(m.name + " AUC/FPR");
  }
  headers.push_back("AVG AUC");
  headers.push_back("AVG FPR");

  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    std::vector<std::string> row{r.label, r.scorer, opt_pct(r.forget_auroc),
                                 opt_pct(r.forget_fpr95), pct(r.retain_acc)};
    for (const auto& m : r.external) {
      row.push_back(pct(m.auroc) + " / " + pct(m.fpr95));
    }
    row.push_back(pct(r.avg_ood_auroc));
    row.push_back(pct(r.avg_ood_fpr95));
    rows.push_back(std::move(row));
  }

  std::vector<size_t> width(headers.size());
  for (size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto emit_row = [&](const std::vector<std::string>& row) {
    std::string line = "|";
    for (size_t c = 0; c < row.size(); ++c) {
      line += ' ' + row[c] + std::string(width[c] - row[c].size(), ' ') + " |";
    }
    return line + '\n';
  };
  std::string out = emit_row(headers);
  out += '|';
  for (size_t c = 0; c < headers.size(); ++c) {
    out += ' ' + std::string(width[c], '-') + " |";
  }
  out += '\n';
  for (const auto& row : rows) out += emit_row(row);
  return out;
}

}  // namespace tfer
