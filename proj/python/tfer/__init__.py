# Copyright 2026 The tfer Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Boundary-preserving class unlearning for hyperspherical prototype OOD
detectors: push forgotten classes into high-energy OOD regions, anchor the
retained manifold, train only low-rank adapters, and evaluate under the
Forget-as-OOD protocol."""

from tfer._core import (
    AdapterStack,
    EmbeddingDataset,
    PretrainResult,
    Projector,
    PrototypeBank,
    TferError,
    TrainLog,
    auroc,
    class_logit,
    evaluate,
    fit_prototypes,
    forward,
    forward_penultimate,
    fpr_at_95_tpr,
    generate_synthetic,
    load_dataset,
    load_model,
    normalize,
    orthogonality_loss,
    pretrain,
    protect_loss,
    push_loss,
    sample_vmf,
    save_dataset,
    save_model,
    total_free_energy,
    trainable_param_count,
    uniform_sphere,
    unlearn_tfer,
)

__all__ = [
    "AdapterStack",
    "EmbeddingDataset",
    "PretrainResult",
    "Projector",
    "PrototypeBank",
    "TferError",
    "TrainLog",
    "auroc",
    "class_logit",
    "evaluate",
    "fit_prototypes",
    "forward",
    "forward_penultimate",
    "fpr_at_95_tpr",
    "generate_synthetic",
    "load_dataset",
    "load_model",
    "normalize",
    "orthogonality_loss",
    "pretrain",
    "protect_loss",
    "push_loss",
    "sample_vmf",
    "save_dataset",
    "save_model",
    "total_free_energy",
    "trainable_param_count",
    "uniform_sphere",
    "unlearn_tfer",
]
