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

#include <functional>

#include "tfer/common.hpp"

namespace tfer::testing {

/// Central finite differences of a scalar function w.r.t. one matrix entry.
inline double central_diff(const std::function<double()>& f, double& param,
                           double h = 1e-4) {
  const double saved = param;
  param = saved + h;
  const double fp = f();
  param = saved - h;
  const double fm = f();
  param = saved;
  return (fp - fm) / (2.0 * h);
}

/// Max relative error between an analytic gradient matrix and central
/// differences, entry by entry. `scale` guards the denominator for
/// near-zero entries.
inline double max_rel_error_matrix(const std::function<double()>& f,
                                   Matrix& param, const Matrix& analytic,
                                   double h = 1e-4, double scale = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < param.rows(); ++i) {
    for (Eigen::Index j = 0; j < param.cols(); ++j) {
      const double fd = central_diff(f, param(i, j), h);
      const double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), scale});
      worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
    }
  }
  return worst;
}

inline double max_rel_error_vector(const std::function<double()>& f,
                                   Vector& param, const Vector& analytic,
                                   double h = 1e-4, double scale = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double fd = central_diff(f, param[i], h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), scale});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace tfer::testing
