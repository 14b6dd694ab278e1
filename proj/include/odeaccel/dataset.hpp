/**
 * @file dataset.hpp
 * @brief Observation times with a d x n matrix of noisy state measurements.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <utility>
#include <vector>

#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"

namespace odeaccel {

struct Dataset {
  std::vector<double> times;  // nondecreasing, length n
  Matrix observations;        // d x n, column j observed at times[j]

  Dataset() = default;
  Dataset(std::vector<double> t, Matrix y) : times(std::move(t)), observations(std::move(y)) { validate(); }

  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(observations.rows()); }
  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
  [[nodiscard]] double t_max() const { return times.empty() ? 0.0 : times.back(); }

  void validate() const {
    if (static_cast<std::size_t>(observations.cols()) != times.size()) {
      throw Error(ErrorKind::DimensionMismatch, "observation matrix must have one column per time");
    }
    if (times.empty()) {
      throw Error(ErrorKind::InvalidArgument, "dataset is empty");
    }
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (!std::isfinite(times[j]) || times[j] < 0.0) {
        std::ostringstream msg;
        msg << "time " << times[j] << " at index " << j << " is not a finite nonnegative number";
        throw Error(ErrorKind::InvalidArgument, msg.str());
      }
      if (j > 0 && times[j] < times[j - 1]) {
        std::ostringstream msg;
        msg << "times decrease at index " << j;
        throw Error(ErrorKind::InvalidArgument, msg.str());
      }
    }
    if (!observations.allFinite()) {
      throw Error(ErrorKind::InvalidArgument, "observations contain non-finite values");
    }
  }
};

/// Residuals Y - x(eta, t_j), d x n.
[[nodiscard]] inline Matrix residuals(const Trajectory& traj, const Dataset& data) {
  return data.observations - traj.at(data.times);
}

/// Least-squares criterion sum_ij (Y_ij - x_i(eta, t_j))^2.
[[nodiscard]] inline double rss(const OdeModel& model, const ParameterVector& eta, const Dataset& data,
                                const ToleranceSpec& tol = {}) {
  if (data.dim() != model.dim_state) {
    throw Error(ErrorKind::DimensionMismatch, "dataset dimension differs from the model state dimension");
  }
  const Trajectory traj = integrate(model, eta, data.t_max(), tol);
  return residuals(traj, data).squaredNorm();
}

}  // namespace odeaccel
