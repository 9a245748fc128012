#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "tnnfrac/errors.hpp"
#include "tnnfrac/model.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/tables.hpp"

namespace tnnfrac {

enum class KernelKind { none, fredholm_quadratic_st, fredholm_weak_singular, volterra_double_exp, volterra_quadruple_3d };

inline std::string kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::none: return "none";
    case KernelKind::fredholm_quadratic_st: return "fredholm_quadratic_st";
    case KernelKind::fredholm_weak_singular: return "fredholm_weak_singular";
    case KernelKind::volterra_double_exp: return "volterra_double_exp";
    case KernelKind::volterra_quadruple_3d: return "volterra_quadruple_3d";
  }
  return "unknown";
}

inline KernelKind kernel_from_name(const std::string& s) {
  for (KernelKind k : {KernelKind::none, KernelKind::fredholm_quadratic_st, KernelKind::fredholm_weak_singular,
                       KernelKind::volterra_double_exp, KernelKind::volterra_quadruple_3d}) {
    if (kernel_name(k) == s) return k;
  }
  throw ConfigError("unknown kernel kind '" + s + "'");
}

/// Integral operator and its discretization settings.
struct KernelDescriptor {
  KernelKind kind = KernelKind::none;
  /// Composite Gauss-Legendre rule for the integration variables.
  int subintervals = 25;
  int points_per = 16;
  /// Gauss-Jacobi node count for the weakly singular kernel.
  int jacobi_nodes = 100;
  /// Integration box of the Fredholm variable (quadratic kernel).
  Interval box{-std::numbers::pi / 2, std::numbers::pi / 2};

  [[nodiscard]] QuadratureRule unit_rule() const { return composite_gauss_legendre(0.0, 1.0, subintervals, points_per); }
  [[nodiscard]] QuadratureRule box_rule() const { return composite_gauss_legendre(box.lo, box.hi, subintervals, points_per); }
};

/// f(x) and (optionally) nothing else; kernels only need values.
using ScalarFn = std::function<double(double)>;

// ----- Stencils shared by probe form and model form -----
//
// Each stencil maps an outer grid (rows) to inner evaluation points
// rows × inner with value coefficients.

struct KernelStencil {
  Eigen::Index rows = 0;
  Eigen::Index inner = 0;
  Eigen::VectorXd points;
  Eigen::VectorXd coef;

  [[nodiscard]] Eigen::VectorXd apply(const ScalarFn& f) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(rows);
    for (Eigen::Index q = 0; q < rows; ++q) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < inner; ++k) acc += coef[q * inner + k] * f(points[q * inner + k]);
      out[q] = acc;
    }
    return out;
  }

  LinearTable table(FactorEvaluator& ev, int subnet) const {
    std::array<Eigen::VectorXd, 3> c;
    c[0] = coef;
    return stencil_table(ev, subnet, rows, inner, points, 0, c);
  }
};

/// Σ_k coef · g(x·m_k) with coef = w_k · m_k^a · x^b · e^{λ x (1−m_k)}.
inline KernelStencil scaled_unit_stencil(const Eigen::VectorXd& xs, const QuadratureRule& unit, double m_power,
                                         double x_power, double exp_rate = 0.0) {
  KernelStencil st;
  st.rows = xs.size();
  st.inner = unit.size();
  st.points.resize(st.rows * st.inner);
  st.coef.resize(st.rows * st.inner);
  for (Eigen::Index q = 0; q < st.rows; ++q) {
    const double x = xs[q];
    const double xp = std::pow(x, x_power);
    for (Eigen::Index k = 0; k < st.inner; ++k) {
      const double m = unit.nodes[k];
      const Eigen::Index i = q * st.inner + k;
      st.points[i] = x * m;
      st.coef[i] = unit.weights[k] * std::pow(m, m_power) * xp * (exp_rate != 0.0 ? std::exp(exp_rate * x * (1.0 - m)) : 1.0);
    }
  }
  return st;
}

/// E(x) = Σ_i w_i e^{x(1−n_i)} x g(x n_i) ≈ ∫₀ˣ e^{x−s} g(s) ds.
inline KernelStencil double_exp_spatial_stencil(const Eigen::VectorXd& xs, const QuadratureRule& unit) {
  return scaled_unit_stencil(xs, unit, 0.0, 1.0, 1.0);
}

/// V(t) = Σ_k w_k m_k^{1+μ} t^{2+μ} q(t m_k) ≈ ∫₀ᵗ τ·τ^μ q(τ) dτ.
inline KernelStencil volterra_time_stencil(const Eigen::VectorXd& ts, const QuadratureRule& unit, double mu) {
  return scaled_unit_stencil(ts, unit, 1.0 + mu, 2.0 + mu);
}

/// The two halves of ∫₀¹|t−s|^{−1/2} s^μ q(s) ds.
struct WeakSingularStencil {
  KernelStencil right;  // ∫_t^1, s = t + (1−t)m, rule (0, −1/2)
  KernelStencil left;   // ∫_0^t, s = t m, rule (−1/2, μ)
};

inline WeakSingularStencil weak_singular_stencil(const Eigen::VectorXd& ts, double mu, int n_nodes) {
  if (!(mu > -1.0)) throw DomainError("weak-singular kernel needs mu > -1");
  const QuadratureRule r = gauss_jacobi_unit(0.0, -0.5, n_nodes);
  const QuadratureRule l = gauss_jacobi_unit(-0.5, mu, n_nodes);
  WeakSingularStencil st;
  const Eigen::Index rows = ts.size();
  for (KernelStencil* s : {&st.right, &st.left}) {
    s->rows = rows;
    s->inner = n_nodes;
    s->points.resize(rows * n_nodes);
    s->coef.resize(rows * n_nodes);
  }
  for (Eigen::Index q = 0; q < rows; ++q) {
    const double t = ts[q];
    if (!(t > 0.0 && t < 1.0)) throw DomainError("weak-singular kernel evaluation times must lie in (0,1)");
    const double right_scale = std::sqrt(1.0 - t);
    const double left_scale = std::pow(t, 0.5 + mu);
    for (int k = 0; k < n_nodes; ++k) {
      const Eigen::Index i = q * n_nodes + k;
      const double s = t + (1.0 - t) * r.nodes[k];
      st.right.points[i] = s;
      st.right.coef[i] = right_scale * r.weights[k] * std::pow(s, mu);
      st.left.points[i] = t * l.nodes[k];
      st.left.coef[i] = left_scale * l.weights[k];
    }
  }
  return st;
}

// ----- Probe forms (analytic functions in place of network factors) -----

/// ½cos(x) ∫_box s t u(s,t)² ds on the tensor grid (x × t).
inline Eigen::MatrixXd fredholm_quadratic_st_probe(const std::function<double(double, double)>& u,
                                                    const Eigen::VectorXd& xs, const Eigen::VectorXd& ts,
                                                    const KernelDescriptor& kd = {}) {
  const QuadratureRule r = kd.box_rule();
  Eigen::VectorXd integral(ts.size());
  for (Eigen::Index q = 0; q < ts.size(); ++q) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      const double v = u(r.nodes[k], ts[q]);
      acc += r.weights[k] * r.nodes[k] * v * v;
    }
    integral[q] = ts[q] * acc;
  }
  return 0.5 * xs.array().cos().matrix() * integral.transpose();
}

/// ∫₀¹|t−s|^{−1/2} s^μ q(s) ds; `left`/`right` receive the two halves when given.
inline Eigen::VectorXd fredholm_weak_singular(const ScalarFn& q, double mu, const Eigen::VectorXd& ts, int n_nodes = 100,
                                              Eigen::VectorXd* left = nullptr, Eigen::VectorXd* right = nullptr) {
  const WeakSingularStencil st = weak_singular_stencil(ts, mu, n_nodes);
  const Eigen::VectorXd r = st.right.apply(q);
  const Eigen::VectorXd l = st.left.apply(q);
  if (left != nullptr) *left = l;
  if (right != nullptr) *right = r;
  return l + r;
}

/// ∫₀ᵗ∫₀ˣ τ e^{x−s} X(s) τ^μ Θ(τ) ds dτ on the grid (x × t) for a separable probe.
inline Eigen::MatrixXd volterra_double_exp_probe(const ScalarFn& spatial, const ScalarFn& temporal, double mu,
                                                  const Eigen::VectorXd& xs, const Eigen::VectorXd& ts,
                                                  const KernelDescriptor& kd = {}) {
  const QuadratureRule unit = kd.unit_rule();
  const Eigen::VectorXd e = double_exp_spatial_stencil(xs, unit).apply(spatial);
  const Eigen::VectorXd v = volterra_time_stencil(ts, unit, mu).apply(temporal);
  return e * v.transpose();
}

/// Factors of x₁x₂(x₁m − x₂n) = x₁²m·x₂ − x₁·x₂²n: the quadruple Volterra
/// kernel splits into two rank-one terms, each a product of 1-D stencils.
struct Quadruple3dStencils {
  KernelStencil a1;  // x₁² Σ w m X₁(x₁m)
  KernelStencil b0;  // x₂ Σ w X₂(x₂n)
  KernelStencil a0;  // x₁ Σ w X₁(x₁m)
  KernelStencil b1;  // x₂² Σ w n X₂(x₂n)
  KernelStencil q3;  // x₃ Σ w X₃(x₃h)
  KernelStencil vt;  // t^{2+μ} Σ w η^{1+μ} Θ(tη)
};

inline Quadruple3dStencils quadruple_3d_stencils(const std::array<Eigen::VectorXd, 3>& xs, const Eigen::VectorXd& ts,
                                                 double mu, const QuadratureRule& unit) {
  Quadruple3dStencils st;
  st.a1 = scaled_unit_stencil(xs[0], unit, 1.0, 2.0);
  st.a0 = scaled_unit_stencil(xs[0], unit, 0.0, 1.0);
  st.b0 = scaled_unit_stencil(xs[1], unit, 0.0, 1.0);
  st.b1 = scaled_unit_stencil(xs[1], unit, 1.0, 2.0);
  st.q3 = scaled_unit_stencil(xs[2], unit, 0.0, 1.0);
  st.vt = volterra_time_stencil(ts, unit, mu);
  return st;
}

/// v(x,t) for a separable probe X₁X₂X₃·τ^μΘ at matching point lists (x_k, t_k).
inline Eigen::VectorXd volterra_quadruple_3d_probe(const std::array<ScalarFn, 3>& spatial, const ScalarFn& temporal,
                                                   double mu, const Eigen::MatrixXd& xs, const Eigen::VectorXd& ts,
                                                   const KernelDescriptor& kd = {}) {
  if (xs.cols() != 3 || xs.rows() != ts.size()) throw ConfigError("quadruple Volterra probe: point shape mismatch");
  const QuadratureRule unit = kd.unit_rule();
  const Quadruple3dStencils st = quadruple_3d_stencils({xs.col(0), xs.col(1), xs.col(2)}, ts, mu, unit);
  const Eigen::VectorXd a1 = st.a1.apply(spatial[0]), a0 = st.a0.apply(spatial[0]);
  const Eigen::VectorXd b0 = st.b0.apply(spatial[1]), b1 = st.b1.apply(spatial[1]);
  const Eigen::VectorXd q3 = st.q3.apply(spatial[2]);
  const Eigen::VectorXd vt = st.vt.apply(temporal);
  return ((a1.array() * b0.array() - a0.array() * b1.array()) * q3.array() * vt.array()).matrix();
}

// ----- Model forms -----

/// ½cos(x)∫ s t Ψ(s,t)² ds on the grid (x × t) via the double sum over (i, j).
inline Eigen::MatrixXd fredholm_quadratic_st(const TnnModel& model, const Eigen::VectorXd& xs, const Eigen::VectorXd& ts,
                                             const KernelDescriptor& kd = {}) {
  if (model.dim() != 1) throw ConfigError("fredholm_quadratic_st needs a 1-D model");
  const QuadratureRule r = kd.box_rule();
  FactorEvaluator ev(model);
  const int hs = ev.add_points(0, r.nodes, 0);
  const int ht = ev.add_points(1, ts, 0);
  ev.forward();
  const Eigen::MatrixXd& xs_tab = ev.component(hs, 0);  // s × p
  Eigen::MatrixXd tmu = ev.component(ht, 0);            // t × p
  tmu.array().colwise() *= ts.array().pow(model.mu);
  // M_ij = Σ_k w_k s_k φ_i(s_k) φ_j(s_k);  value(t) = t Σ_ij c_i c_j M_ij θ_i(t) θ_j(t).
  const Eigen::MatrixXd m = xs_tab.transpose() * (r.weights.array() * r.nodes.array()).matrix().asDiagonal() * xs_tab;
  const Eigen::MatrixXd y = tmu * model.c.asDiagonal();
  const Eigen::VectorXd quad = ((y * m).array() * y.array()).rowwise().sum();
  return 0.5 * xs.array().cos().matrix() * (ts.array() * quad.array()).matrix().transpose();
}

/// Σ_j c_j φ̂_{1,j}(x) ∫₀¹|t−s|^{−1/2} s^μ φ̂_{t,j}(s) ds on the grid (x × t).
inline Eigen::MatrixXd fredholm_weak_singular_model(const TnnModel& model, const Eigen::VectorXd& xs,
                                                    const Eigen::VectorXd& ts, const KernelDescriptor& kd = {}) {
  FactorEvaluator ev(model);
  const int hx = ev.add_points(0, xs, 0);
  const WeakSingularStencil st = weak_singular_stencil(ts, model.mu, kd.jacobi_nodes);
  LinearTable w = st.right.table(ev, 1);
  w.append(st.left.table(ev, 1));
  ev.forward();
  w.evaluate(ev);
  return ev.component(hx, 0) * model.c.asDiagonal() * w.value.transpose();
}

/// ∫₀ᵗ∫₀ˣ τ e^{x−s} Ψ(s,τ) ds dτ on the grid (x × t).
inline Eigen::MatrixXd volterra_double_exp(const TnnModel& model, const Eigen::VectorXd& xs, const Eigen::VectorXd& ts,
                                           const KernelDescriptor& kd = {}) {
  if (model.dim() != 1) throw ConfigError("volterra_double_exp needs a 1-D model");
  const QuadratureRule unit = kd.unit_rule();
  FactorEvaluator ev(model);
  LinearTable e = double_exp_spatial_stencil(xs, unit).table(ev, 0);
  LinearTable v = volterra_time_stencil(ts, unit, model.mu).table(ev, 1);
  ev.forward();
  e.evaluate(ev);
  v.evaluate(ev);
  return e.value * model.c.asDiagonal() * v.value.transpose();
}

/// v(x,t,Ψ) at matching point lists (x_k ∈ R³, t_k).
inline Eigen::VectorXd volterra_quadruple_3d(const TnnModel& model, const Eigen::MatrixXd& xs, const Eigen::VectorXd& ts,
                                             const KernelDescriptor& kd = {}) {
  if (model.dim() != 3) throw ConfigError("volterra_quadruple_3d needs a 3-D model");
  if (xs.cols() != 3 || xs.rows() != ts.size()) throw ConfigError("quadruple Volterra: point shape mismatch");
  const QuadratureRule unit = kd.unit_rule();
  const Quadruple3dStencils st = quadruple_3d_stencils({xs.col(0), xs.col(1), xs.col(2)}, ts, model.mu, unit);
  FactorEvaluator ev(model);
  LinearTable a1 = st.a1.table(ev, 0), a0 = st.a0.table(ev, 0);
  LinearTable b0 = st.b0.table(ev, 1), b1 = st.b1.table(ev, 1);
  LinearTable q3 = st.q3.table(ev, 2), vt = st.vt.table(ev, 3);
  ev.forward();
  for (LinearTable* t : {&a1, &a0, &b0, &b1, &q3, &vt}) t->evaluate(ev);
  const Eigen::MatrixXd prod = (a1.value.array() * b0.value.array() - a0.value.array() * b1.value.array()) *
                               q3.value.array() * vt.value.array();
  return prod * model.c;
}

}  // namespace tnnfrac
