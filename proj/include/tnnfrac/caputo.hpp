#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tnnfrac/errors.hpp"
#include "tnnfrac/model.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/special.hpp"
#include "tnnfrac/tables.hpp"

namespace tnnfrac {

struct FractionalOrders {
  std::vector<double> betas;

  void validate() const {
    if (betas.empty()) throw DomainError("fractional orders: need at least one order");
    for (std::size_t k = 0; k < betas.size(); ++k) {
      const double b = betas[k];
      if (!(b > 0.0 && b < 2.0) || b == 1.0) {
        std::ostringstream msg;
        msg << "fractional order " << b << " outside (0,1) U (1,2)";
        throw DomainError(msg.str());
      }
      if (k > 0 && !(b > betas[k - 1])) throw DomainError("fractional orders must be strictly increasing");
    }
  }
};

/// β₁ when every order is below 1, else the smallest order above 1.
inline double select_mu(const FractionalOrders& orders) {
  orders.validate();
  if (orders.betas.back() < 1.0) return orders.betas.front();
  for (double b : orders.betas) {
    if (b > 1.0) return b;
  }
  return orders.betas.front();
}

/// q(t), q'(t), q''(t).
using TemporalProbe = std::function<std::array<double, 3>(double)>;
using GammaFn = std::function<double(double)>;

/// Evaluation points t_q·τ_k and per-component coefficients so that
///   ᶜD^ν[t^μ q](t_q) = Σ_k Σ_c coef[c][q·N+k] · q^{(c)}(t_q τ_k).
struct CaputoStencil {
  Eigen::Index n_eval = 0;
  Eigen::Index n_tau = 0;
  int order = 1;
  Eigen::VectorXd points;
  std::array<Eigen::VectorXd, 3> coef;
};

inline CaputoStencil caputo_stencil(double nu, double mu, const Eigen::VectorXd& eval_times, int n_tau,
                                    const GammaFn& gamma_fn = [](double x) { return gamma(x); }) {
  const bool low = nu > 0.0 && nu < 1.0;
  const bool high = nu > 1.0 && nu < 2.0;
  if (!low && !high) throw DomainError("Caputo order must lie in (0,1) or (1,2)");
  if (low && !(mu > 0.0)) throw DomainError("Caputo scheme for order in (0,1) needs mu > 0");
  if (high && !(mu > 1.0)) throw DomainError("Caputo scheme for order in (1,2) needs mu > 1");
  if (n_tau < 1) throw DomainError("Caputo scheme needs at least one Jacobi node");
  for (Eigen::Index q = 0; q < eval_times.size(); ++q) {
    if (!(eval_times[q] > 0.0)) throw DomainError("Caputo evaluation times must be positive");
  }

  const QuadratureRule rule = low ? gauss_jacobi_unit(-nu, mu - 1.0, n_tau) : gauss_jacobi_unit(1.0 - nu, mu - 2.0, n_tau);
  CaputoStencil st;
  st.n_eval = eval_times.size();
  st.n_tau = n_tau;
  st.order = low ? 1 : 2;
  const Eigen::Index n = st.n_eval * n_tau;
  st.points.resize(n);
  for (int c = 0; c <= st.order; ++c) st.coef[c].resize(n);
  const double inv_gamma = 1.0 / gamma_fn(low ? 1.0 - nu : 2.0 - nu);
  for (Eigen::Index q = 0; q < st.n_eval; ++q) {
    const double t = eval_times[q];
    // t^{1−ν}·t^{μ−1} = t^{μ−ν} (low), t^{2−ν}·t^{μ−2} = t^{μ−ν} (high).
    const double base = std::pow(t, mu - nu) * inv_gamma;
    for (int k = 0; k < n_tau; ++k) {
      const double tau = rule.nodes[k];
      const double w = rule.weights[k] * base;
      const Eigen::Index i = q * n_tau + k;
      st.points[i] = t * tau;
      if (low) {
        st.coef[0][i] = w * mu;
        st.coef[1][i] = w * t * tau;
      } else {
        st.coef[0][i] = w * mu * (mu - 1.0);
        st.coef[1][i] = w * 2.0 * mu * t * tau;
        st.coef[2][i] = w * t * t * tau * tau;
      }
    }
  }
  return st;
}

namespace detail {

inline Eigen::VectorXd apply_stencil(const CaputoStencil& st, const TemporalProbe& probe) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(st.n_eval);
  for (Eigen::Index q = 0; q < st.n_eval; ++q) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < st.n_tau; ++k) {
      const Eigen::Index i = q * st.n_tau + k;
      const auto v = probe(st.points[i]);
      for (int c = 0; c <= st.order; ++c) acc += st.coef[c][i] * v[c];
    }
    out[q] = acc;
  }
  return out;
}

}  // namespace detail

/// ᶜD^ν[t^μ q] for ν ∈ (0,1) at each evaluation time.
inline Eigen::VectorXd caputo_low(double nu, double mu, const TemporalProbe& probe, const Eigen::VectorXd& eval_times,
                                  int n_tau = 100, const GammaFn& gamma_fn = [](double x) { return gamma(x); }) {
  if (!(nu > 0.0 && nu < 1.0)) throw DomainError("caputo_low: order must lie in (0,1)");
  return detail::apply_stencil(caputo_stencil(nu, mu, eval_times, n_tau, gamma_fn), probe);
}

/// ᶜD^ν[t^μ q] for ν ∈ (1,2) at each evaluation time.
inline Eigen::VectorXd caputo_high(double nu, double mu, const TemporalProbe& probe, const Eigen::VectorXd& eval_times,
                                   int n_tau = 100, const GammaFn& gamma_fn = [](double x) { return gamma(x); }) {
  if (!(nu > 1.0 && nu < 2.0)) throw DomainError("caputo_high: order must lie in (1,2)");
  return detail::apply_stencil(caputo_stencil(nu, mu, eval_times, n_tau, gamma_fn), probe);
}

/// Σ_k ᶜD^{β_k}[t^μ q].
inline Eigen::VectorXd caputo_multi(const FractionalOrders& orders, double mu, const TemporalProbe& probe,
                                    const Eigen::VectorXd& eval_times, int n_tau = 100,
                                    const GammaFn& gamma_fn = [](double x) { return gamma(x); }) {
  orders.validate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(eval_times.size());
  for (double b : orders.betas) out += detail::apply_stencil(caputo_stencil(b, mu, eval_times, n_tau, gamma_fn), probe);
  return out;
}

/// Table (eval time × j) of Σ_k ᶜD^{β_k}[t^μ φ̂_{t,j}], registered on `ev`.
inline LinearTable caputo_table(FactorEvaluator& ev, const FractionalOrders& orders, double mu,
                                const Eigen::VectorXd& eval_times, int n_tau) {
  orders.validate();
  LinearTable out;
  out.rows = eval_times.size();
  const int t_subnet = ev.model().dim();
  for (double b : orders.betas) {
    const CaputoStencil st = caputo_stencil(b, mu, eval_times, n_tau);
    out.append(stencil_table(ev, t_subnet, st.n_eval, st.n_tau, st.points, st.order, st.coef));
  }
  return out;
}

/// Caputo factor of every temporal column at the rule's nodes.
inline Eigen::MatrixXd caputo_tnn_factor(const TnnModel& model, const FractionalOrders& orders,
                                         const QuadratureRule& eval_rule, int n_tau = 100) {
  FactorEvaluator ev(model);
  LinearTable t = caputo_table(ev, orders, model.mu, eval_rule.nodes, n_tau);
  ev.forward();
  t.evaluate(ev);
  return t.value;
}

}  // namespace tnnfrac
