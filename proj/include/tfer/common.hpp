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

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace tfer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;  // data matrices are row-major in meaning: one sample per row

/// Base class for all typed errors thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TFER_DEFINE_ERROR(NAME)            \
  class NAME final : public Error {        \
   public:                                 \
    using Error::Error;                    \
  };

TFER_DEFINE_ERROR(ZeroVectorError)
TFER_DEFINE_ERROR(DimensionMismatchError)
TFER_DEFINE_ERROR(EmptyRetainSetError)
TFER_DEFINE_ERROR(NoActiveTaskError)
TFER_DEFINE_ERROR(UnknownTaskError)
TFER_DEFINE_ERROR(ShapeMismatchError)
TFER_DEFINE_ERROR(ForgetLabelInProtectError)
TFER_DEFINE_ERROR(InsufficientSamplesError)
TFER_DEFINE_ERROR(EmptyForgetSetError)
TFER_DEFINE_ERROR(UnknownClassError)
TFER_DEFINE_ERROR(OverlappingForgetSetsError)
TFER_DEFINE_ERROR(NonFiniteLossError)
TFER_DEFINE_ERROR(DegenerateLabelsError)
TFER_DEFINE_ERROR(TooFewPositivesError)
TFER_DEFINE_ERROR(MissingPartitionError)
TFER_DEFINE_ERROR(SingularCovarianceError)
TFER_DEFINE_ERROR(FormatError)
TFER_DEFINE_ERROR(VersionMismatchError)
TFER_DEFINE_ERROR(MeanPlacementFailureError)
TFER_DEFINE_ERROR(InvalidTaskError)
TFER_DEFINE_ERROR(ConfigError)
TFER_DEFINE_ERROR(InvalidArgumentError)
TFER_DEFINE_ERROR(IoError)

#undef TFER_DEFINE_ERROR

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgumentError(msg);
}

}  // namespace tfer
