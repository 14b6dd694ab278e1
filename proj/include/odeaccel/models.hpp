/**
 * @file models.hpp
 * @brief Built-in ODE systems that are linear in their rate parameters.
 *
 * Every catalog model has the form F(x; theta) = g(x) theta. The builder
 * derives all first and second derivatives of F from g and its analytic
 * x-derivatives, so each model only spells out g, dg/dx and d2g/dx2.
 */
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "odeaccel/errors.hpp"
#include "odeaccel/linalg.hpp"
#include "odeaccel/ode_core.hpp"

namespace odeaccel {

struct ThetaLinearParts {
  std::size_t dim_state = 0;
  std::size_t dim_param = 0;
  std::function<Matrix(const Vector&)> g;                     // d x p
  std::function<std::vector<Matrix>(const Vector&)> dg;       // [l] = dg/dx_l, each d x p
  std::function<std::vector<Matrix>(const Vector&)> d2g;      // [l*d+m] = d2g/dx_l dx_m
};

[[nodiscard]] inline OdeModel make_theta_linear_model(std::string name, ThetaLinearParts parts) {
  const auto d = static_cast<Eigen::Index>(parts.dim_state);
  const auto p = static_cast<Eigen::Index>(parts.dim_param);
  OdeModel m;
  m.name = std::move(name);
  m.dim_state = parts.dim_state;
  m.dim_param = parts.dim_param;
  m.theta_linear = parts.g;
  m.rhs = [g = parts.g, p](const Vector& x, const Vector& e, double) -> Vector {
    return g(x) * e.tail(p);
  };
  m.jac_state = [dg = parts.dg, d, p](const Vector& x, const Vector& e, double) {
    const auto parts_dx = dg(x);
    const Vector theta = e.tail(p);
    Matrix j(d, d);
    for (Eigen::Index l = 0; l < d; ++l) {
      j.col(l) = parts_dx[static_cast<std::size_t>(l)] * theta;
    }
    return j;
  };
  m.jac_eta = [g = parts.g, d, p](const Vector& x, const Vector&, double) {
    Matrix j = Matrix::Zero(d, d + p);
    j.rightCols(p) = g(x);
    return j;
  };
  m.hess = [dg = parts.dg, d2g = parts.d2g, d, p](const Vector& x, const Vector& e, double) {
    const auto first = dg(x);
    const auto second = d2g(x);
    const Vector theta = e.tail(p);
    SecondDerivatives h;
    for (Eigen::Index i = 0; i < d; ++i) {
      Matrix xx(d, d);
      Matrix xe = Matrix::Zero(d, d + p);
      for (Eigen::Index l = 0; l < d; ++l) {
        xe.row(l).tail(p) = first[static_cast<std::size_t>(l)].row(i);
        for (Eigen::Index k = 0; k < d; ++k) {
          xx(l, k) = second[static_cast<std::size_t>(l * d + k)].row(i).dot(theta);
        }
      }
      h.xx.push_back(std::move(xx));
      h.ex.push_back(xe.transpose());
      h.xe.push_back(std::move(xe));
      h.ee.push_back(Matrix::Zero(d + p, d + p));
    }
    return h;
  };
  return m;
}

namespace models {

/// x' = theta x.
[[nodiscard]] inline OdeModel linear() {
  ThetaLinearParts parts;
  parts.dim_state = 1;
  parts.dim_param = 1;
  parts.g = [](const Vector& x) { return Matrix::Constant(1, 1, x(0)); };
  parts.dg = [](const Vector&) { return std::vector<Matrix>{Matrix::Ones(1, 1)}; };
  parts.d2g = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(1, 1)}; };
  return make_theta_linear_model("linear", std::move(parts));
}

/// Predator-prey system: x1 prey, x2 predator.
[[nodiscard]] inline OdeModel lotka_volterra() {
  ThetaLinearParts parts;
  parts.dim_state = 2;
  parts.dim_param = 4;
  parts.g = [](const Vector& x) {
    Matrix g(2, 4);
    g << x(0), -x(0) * x(1), 0.0, 0.0,
         0.0, 0.0, -x(1), x(0) * x(1);
    return g;
  };
  parts.dg = [](const Vector& x) {
    Matrix d0(2, 4), d1(2, 4);
    d0 << 1.0, -x(1), 0.0, 0.0,
          0.0, 0.0, 0.0, x(1);
    d1 << 0.0, -x(0), 0.0, 0.0,
          0.0, 0.0, -1.0, x(0);
    return std::vector<Matrix>{d0, d1};
  };
  parts.d2g = [](const Vector&) {
    Matrix cross(2, 4);
    cross << 0.0, -1.0, 0.0, 0.0,
             0.0, 0.0, 0.0, 1.0;
    return std::vector<Matrix>{Matrix::Zero(2, 4), cross, cross, Matrix::Zero(2, 4)};
  };
  return make_theta_linear_model("lotka_volterra", std::move(parts));
}

/// 2NO + O2 <-> 2NO2; x is the pressure fall in minutes-time.
[[nodiscard]] inline OdeModel nitrogen_oxide() {
  constexpr double a = 126.2;
  constexpr double b = 91.9;
  ThetaLinearParts parts;
  parts.dim_state = 1;
  parts.dim_param = 2;
  parts.g = [](const Vector& x) {
    Matrix g(1, 2);
    g << (a - x(0)) * (b - x(0)) * (b - x(0)), -x(0) * x(0);
    return g;
  };
  parts.dg = [](const Vector& x) {
    const double u = a - x(0);
    const double v = b - x(0);
    Matrix d(1, 2);
    d << -v * v - 2.0 * u * v, -2.0 * x(0);
    return std::vector<Matrix>{d};
  };
  parts.d2g = [](const Vector& x) {
    const double u = a - x(0);
    const double v = b - x(0);
    Matrix d(1, 2);
    d << 4.0 * v + 2.0 * u, -2.0;
    return std::vector<Matrix>{d};
  };
  return make_theta_linear_model("nitrogen_oxide", std::move(parts));
}

/// Barnes' chemical variant of the predator-prey system.
[[nodiscard]] inline OdeModel barnes() {
  ThetaLinearParts parts;
  parts.dim_state = 2;
  parts.dim_param = 3;
  parts.g = [](const Vector& x) {
    Matrix g(2, 3);
    g << x(0), -x(0) * x(1), 0.0,
         0.0, x(0) * x(1), -x(1);
    return g;
  };
  parts.dg = [](const Vector& x) {
    Matrix d0(2, 3), d1(2, 3);
    d0 << 1.0, -x(1), 0.0,
          0.0, x(1), 0.0;
    d1 << 0.0, -x(0), 0.0,
          0.0, x(0), -1.0;
    return std::vector<Matrix>{d0, d1};
  };
  parts.d2g = [](const Vector&) {
    Matrix cross(2, 3);
    cross << 0.0, -1.0, 0.0,
             0.0, 1.0, 0.0;
    return std::vector<Matrix>{Matrix::Zero(2, 3), cross, cross, Matrix::Zero(2, 3)};
  };
  return make_theta_linear_model("barnes", std::move(parts));
}

/// Thermal isomerization of alpha-pinene (five species, five rates).
[[nodiscard]] inline OdeModel alpha_pinene() {
  ThetaLinearParts parts;
  parts.dim_state = 5;
  parts.dim_param = 5;
  parts.g = [](const Vector& x) {
    Matrix g = Matrix::Zero(5, 5);
    g(0, 0) = -x(0);
    g(0, 1) = -x(0);
    g(1, 0) = x(0);
    g(2, 1) = x(0);
    g(2, 2) = -x(2);
    g(2, 3) = -x(2);
    g(2, 4) = x(4);
    g(3, 2) = x(2);
    g(4, 3) = x(2);
    g(4, 4) = -x(4);
    return g;
  };
  parts.dg = [](const Vector&) {
    std::vector<Matrix> d(5, Matrix::Zero(5, 5));
    d[0](0, 0) = -1.0;
    d[0](0, 1) = -1.0;
    d[0](1, 0) = 1.0;
    d[0](2, 1) = 1.0;
    d[2](2, 2) = -1.0;
    d[2](2, 3) = -1.0;
    d[2](3, 2) = 1.0;
    d[2](4, 3) = 1.0;
    d[4](2, 4) = 1.0;
    d[4](4, 4) = -1.0;
    return d;
  };
  parts.d2g = [](const Vector&) { return std::vector<Matrix>(25, Matrix::Zero(5, 5)); };
  return make_theta_linear_model("alpha_pinene", std::move(parts));
}

}  // namespace models

struct ModelCatalogEntry {
  std::string name;
  OdeModel model;
  ParameterVector default_eta;
  double default_horizon = 1.0;
};

[[nodiscard]] inline std::vector<std::string> catalog_names() {
  return {"linear", "lotka_volterra", "nitrogen_oxide", "barnes", "alpha_pinene"};
}

namespace detail {
inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) {
    out(i++) = x;
  }
  return out;
}
}  // namespace detail

/// Catalog entry with reference parameter values.
///
/// For alpha-pinene xi is the first recorded composition, used as the state
/// at t = 0; observations then run from 1230 s to 36420 s.
[[nodiscard]] inline ModelCatalogEntry catalog_get(std::string_view name) {
  using detail::vec;
  if (name == "linear") {
    return {"linear", models::linear(), {vec({0.5}), vec({-1.0})}, 10.0};
  }
  if (name == "lotka_volterra") {
    return {"lotka_volterra", models::lotka_volterra(), {vec({1.0, 0.5}), vec({0.5, 0.5, 0.5, 0.5})}, 10.0};
  }
  if (name == "nitrogen_oxide") {
    return {"nitrogen_oxide", models::nitrogen_oxide(), {vec({0.0}), vec({0.4577e-5, 0.2797e-3})}, 40.0};
  }
  if (name == "barnes") {
    return {"barnes", models::barnes(), {vec({1.0, 0.3}), vec({0.86, 2.079, 1.624})}, 5.0};
  }
  if (name == "alpha_pinene") {
    return {"alpha_pinene",
            models::alpha_pinene(),
            {vec({88.35, 7.3, 2.3, 0.4, 1.75}), vec({5.926e-5, 2.963e-5, 2.047e-5, 2.744e-4, 3.997e-5})},
            36420.0};
  }
  throw Error(ErrorKind::UnknownModel, "no catalog model named '" + std::string(name) + "'");
}

/// Theta-linear coefficient matrix g(x) of a catalog model.
[[nodiscard]] inline Matrix g_of(std::string_view name, const Vector& x) {
  const ModelCatalogEntry entry = catalog_get(name);
  if (static_cast<std::size_t>(x.size()) != entry.model.dim_state) {
    throw Error(ErrorKind::DimensionMismatch, "state has the wrong dimension for " + entry.name);
  }
  return entry.model.theta_linear(x);
}

}  // namespace odeaccel
