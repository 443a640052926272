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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tfer/experiment.hpp"

namespace py = pybind11;
using namespace tfer;

namespace {

PrototypeBank make_bank(const std::vector<Matrix>& prototypes, double kappa) {
  return PrototypeBank(prototypes, kappa);
}

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["label"] = r.label;
  d["scorer"] = r.scorer;
  if (r.forget_auroc) d["forget_auroc"] = *r.forget_auroc;
  if (r.forget_fpr95) d["forget_fpr95"] = *r.forget_fpr95;
  d["retain_acc"] = r.retain_acc;
  py::dict ext;
  for (const auto& m : r.external) {
    ext[py::str(m.name)] = py::make_tuple(m.auroc, m.fpr95);
  }
  d["external"] = ext;
  d["avg_ood_auroc"] = r.avg_ood_auroc;
  d["avg_ood_fpr95"] = r.avg_ood_fpr95;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "boundary-preserving class unlearning on hyperspherical "
            "prototype OOD detectors";

  py::register_exception<Error>(m, "TferError");

  // geometry
  m.def(
      "normalize",
      [](const Vector& v) { return normalize(v).vec(); },
      py::arg("v"), "Project a vector onto the unit sphere.");
  m.def(
      "class_logit",
      [](const Vector& z, const Matrix& prototypes, double kappa,
         const Vector& weights) {
        return class_logit(UnitVector(z), prototypes, kappa, weights);
      },
      py::arg("z"), py::arg("prototypes"), py::arg("kappa"), py::arg("weights"),
      "Mixture-of-vMF class logit with explicit mixture weights.");
  m.def("total_free_energy", &total_free_energy, py::arg("retained_logits"),
        "Negative log-sum-exp of retained class logits.");
  m.def(
      "sample_vmf",
      [](const Vector& mu, double kappa, int n, uint64_t seed) {
        return sample_vmf(VmfParams(UnitVector(mu), kappa), n, seed);
      },
      py::arg("mu"), py::arg("kappa"), py::arg("n"), py::arg("seed"),
      "Draw n vMF samples; one unit row per sample.");
  m.def("uniform_sphere", &uniform_sphere, py::arg("d"), py::arg("n"),
        py::arg("seed"));

  // prototypes
  py::class_<PrototypeBank>(m, "PrototypeBank")
      .def(py::init(&make_bank), py::arg("prototypes"), py::arg("kappa"))
      .def_property_readonly("num_classes", &PrototypeBank::num_classes)
      .def_property_readonly("k", &PrototypeBank::k)
      .def_property_readonly("kappa", &PrototypeBank::kappa)
      .def("prototypes", &PrototypeBank::prototypes, py::arg("class_id"))
      .def("retained_ids", &PrototypeBank::retained_ids)
      .def("mark_forgotten", &PrototypeBank::mark_forgotten,
           py::arg("class_ids"))
      .def(
          "class_logit",
          [](const PrototypeBank& b, const Vector& z, int class_id) {
            return b.class_logit(UnitVector(z), class_id);
          },
          py::arg("z"), py::arg("class_id"));
  m.def(
      "fit_prototypes",
      [](const Matrix& Z, const std::vector<uint16_t>& y, int n_classes, int K,
         double kappa, uint64_t seed) {
        return fit_prototypes(Z, y, n_classes, K, kappa, seed);
      },
      py::arg("Z"), py::arg("y"), py::arg("n_classes"), py::arg("K"),
      py::arg("kappa"), py::arg("seed"));

  // losses
  m.def(
      "push_loss",
      [](const Vector& z, const PrototypeBank& bank) {
        const PushResult r = push_loss(UnitVector(z), bank);
        return py::make_tuple(r.loss, r.grad_z, r.decomposition.alpha);
      },
      py::arg("z"), py::arg("bank"),
      "Returns (loss, grad wrt z, alpha over retained classes).");
  m.def(
      "protect_loss",
      [](const Vector& z, int label, const PrototypeBank& bank, double tau) {
        const ProtectResult r = protect_loss(UnitVector(z), label, bank, tau);
        return py::make_tuple(r.loss, r.grad_z);
      },
      py::arg("z"), py::arg("label"), py::arg("bank"), py::arg("tau"));
  m.def(
      "orthogonality_loss",
      [](const Matrix& a_t, const Matrix& a_ref) {
        const OrthResult r = orthogonality_loss(a_t, a_ref);
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("a_t"), py::arg("a_ref"));

  // detection metrics on plain score arrays
  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<bool>& is_id) {
        require(scores.size() == is_id.size(), "auroc: length mismatch");
        std::vector<BinaryScoreSample> samples(scores.size());
        for (size_t i = 0; i < scores.size(); ++i) {
          samples[i] = {scores[i], static_cast<bool>(is_id[i])};
        }
        return auroc(samples);
      },
      py::arg("scores"), py::arg("is_id"));
  m.def(
      "fpr_at_95_tpr",
      [](const std::vector<double>& scores, const std::vector<bool>& is_id) {
        require(scores.size() == is_id.size(),
                "fpr_at_95_tpr: length mismatch");
        std::vector<BinaryScoreSample> samples(scores.size());
        for (size_t i = 0; i < scores.size(); ++i) {
          samples[i] = {scores[i], static_cast<bool>(is_id[i])};
        }
        return fpr_at_95_tpr(samples);
      },
      py::arg("scores"), py::arg("is_id"));

  // datasets
  py::class_<EmbeddingDataset>(m, "EmbeddingDataset")
      .def_readonly("train_X", &EmbeddingDataset::train_X)
      .def_readonly("train_y", &EmbeddingDataset::train_y)
      .def_readonly("test_X", &EmbeddingDataset::test_X)
      .def_readonly("test_y", &EmbeddingDataset::test_y)
      .def_readonly("d", &EmbeddingDataset::d)
      .def_readonly("n_classes", &EmbeddingDataset::n_classes)
      .def_property_readonly("external", [](const EmbeddingDataset& ds) {
        py::dict out;
        for (const auto& set : ds.external) {
          out[py::str(set.name)] = set.X;
        }
        return out;
      });
  m.def(
      "generate_synthetic",
      [](int classes, int per_class, int d, double kappa, int ood_sets,
         int ood_per_set, double pair_angle_min, double pair_angle_max,
         double mean_kappa, uint64_t seed) {
        SynthConfig cfg{classes,        per_class,      d,
                        kappa,          ood_sets,       ood_per_set,
                        pair_angle_min, pair_angle_max, mean_kappa,
                        seed};
        return generate_synthetic(cfg);
      },
      py::arg("classes") = 10, py::arg("per_class") = 500, py::arg("d") = 32,
      py::arg("kappa") = 20.0, py::arg("ood_sets") = 3,
      py::arg("ood_per_set") = 1000, py::arg("pair_angle_min") = 0.5,
      py::arg("pair_angle_max") = 1.0, py::arg("mean_kappa") = 0.0,
      py::arg("seed") = 1);
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  // model + experiment pipelines, driven by the same JSON configs as the CLI
  py::class_<Projector>(m, "Projector")
      .def_static("identity", &Projector::identity, py::arg("d"))
      .def_static("random_init", &Projector::random_init, py::arg("d_in"),
                  py::arg("d_h"), py::arg("d_out"), py::arg("seed"))
      .def_property_readonly("d_in", &Projector::d_in)
      .def_property_readonly("d_out", &Projector::d_out)
      .def("param_count", &Projector::param_count);
  py::class_<AdapterStack>(m, "AdapterStack")
      .def(py::init<>())
      .def_property_readonly("num_tasks", [](const AdapterStack& s) {
        return s.tasks().size();
      });
  m.def(
      "forward",
      [](const Projector& p, const AdapterStack& stack, const Matrix& X) {
        return forward_batch(p, stack, X).Z;
      },
      py::arg("projector"), py::arg("stack"), py::arg("X"),
      "Batched projection onto the hypersphere; one unit row per input row.");
  m.def(
      "forward_penultimate",
      [](const Projector& p, const AdapterStack& stack, const Matrix& X) {
        return forward_batch(p, stack, X).H2;
      },
      py::arg("projector"), py::arg("stack"), py::arg("X"),
      "Pre-normalization features (the mahalanobis scorer's input space).");
  m.def("trainable_param_count", &trainable_param_count, py::arg("stack"));

  py::class_<TrainLog>(m, "TrainLog").def("to_csv", &TrainLog::to_csv);
  py::class_<PretrainResult>(m, "PretrainResult")
      .def_readonly("projector", &PretrainResult::projector)
      .def_readonly("bank", &PretrainResult::bank)
      .def_readonly("log", &PretrainResult::log);
  m.def(
      "pretrain",
      [](const EmbeddingDataset& ds, int epochs, double lr, double tau,
         int hidden_dim, int out_dim, int proto_k, double bank_kappa,
         uint64_t seed) {
        PretrainConfig cfg;
        cfg.epochs = epochs;
        cfg.lr = lr;
        cfg.tau = tau;
        cfg.hidden_dim = hidden_dim;
        cfg.out_dim = out_dim;
        cfg.proto_k = proto_k;
        cfg.bank_kappa = bank_kappa;
        cfg.seed = seed;
        return pretrain(ds, cfg);
      },
      py::arg("dataset"), py::arg("epochs") = 30, py::arg("lr") = 0.05,
      py::arg("tau") = 0.1, py::arg("hidden_dim") = 128,
      py::arg("out_dim") = 128, py::arg("proto_k") = 1,
      py::arg("bank_kappa") = 20.0, py::arg("seed") = 1);
  m.def(
      "unlearn_tfer",
      [](const Projector& projector, const PrototypeBank& bank,
         const EmbeddingDataset& ds, const std::vector<int>& forget_classes,
         double lambda_f, double tau, int epochs, int batch_size, double lr,
         int rank, const std::string& placement, double init_std,
         uint64_t seed) {
        UnlearnConfig cfg;
        cfg.forget_classes = forget_classes;
        cfg.weights.lambda_f = lambda_f;
        cfg.weights.tau = tau;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr = lr;
        cfg.rank = rank;
        cfg.placement = placement_from_string(placement);
        cfg.adapter_init_std = init_std;
        cfg.seed = seed;
        AdapterStack stack;
        PrototypeBank bank_copy = bank;
        TrainLog log = unlearn_tfer(projector, stack, bank_copy, ds, cfg);
        return py::make_tuple(std::move(stack), std::move(bank_copy),
                              std::move(log));
      },
      py::arg("projector"), py::arg("bank"), py::arg("dataset"),
      py::arg("forget_classes"), py::arg("lambda_f") = 1.0,
      py::arg("tau") = 0.1, py::arg("epochs") = 200, py::arg("batch_size") = 64,
      py::arg("lr") = 3e-4, py::arg("rank") = 4, py::arg("placement") = "both",
      py::arg("init_std") = 0.02, py::arg("seed") = 1,
      "Runs push-pull unlearning; returns (stack, bank, log).");
  m.def(
      "evaluate",
      [](const Projector& projector, const AdapterStack& stack,
         const PrototypeBank& bank, const EmbeddingDataset& ds,
         const std::vector<int>& forget_classes, const std::string& scorer) {
        return report_to_dict(evaluate(projector, stack, bank, ds,
                                       forget_classes,
                                       score_kind_from_string(scorer)));
      },
      py::arg("projector"), py::arg("stack"), py::arg("bank"),
      py::arg("dataset"), py::arg("forget_classes"),
      py::arg("scorer") = "mahalanobis");
  m.def("save_model", &save_model, py::arg("projector"), py::arg("stack"),
        py::arg("path"));
  m.def(
      "load_model",
      [](const std::string& path) {
        auto [p, s] = load_model(path);
        return py::make_tuple(std::move(p), std::move(s));
      },
      py::arg("path"));
}
