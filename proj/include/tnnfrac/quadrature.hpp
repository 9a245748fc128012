#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tnnfrac/errors.hpp"
#include "tnnfrac/special.hpp"

namespace tnnfrac {

/// Nodes and weights on [lo, hi]. When `jacobi` is set the weights absorb the
/// Jacobi weight function, (1−t)^α(1+t)^β on [−1,1] or (1−t)^α t^β on [0,1].
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  double lo = -1.0;
  double hi = 1.0;
  std::optional<std::pair<double, double>> jacobi;
  /// Largest relative disagreement between closed-form and Golub-Welsch weights.
  double weight_crosscheck = 0.0;

  [[nodiscard]] Eigen::Index size() const { return nodes.size(); }

  template <typename F>
  [[nodiscard]] double integrate(F&& f) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

namespace detail {

/// P_n^{(α,β)} and dP/dx at x = 1 − d via the three-term recurrence. Taking
/// the distance d to the endpoint keeps full relative precision in 1 − x for
/// nodes clustered near x = 1.
inline std::pair<double, double> jacobi_poly_near_plus_one(int n, double alpha, double beta,
                                                           double d) {
  auto eval = [d](int deg, double a, double b) {
    if (deg == 0) return 1.0;
    if (static_cast<double>(deg) * deg * d < 2.0) {
      // Close to the endpoint: binom(deg+a, deg) · 2F1(−deg, deg+a+b+1; a+1; d/2).
      // The recurrence loses relative accuracy in the outermost root here.
      double scale = 1.0;
      for (int k = 1; k <= deg; ++k) scale *= (k + a) / k;
      double term = 1.0;
      double sum = 1.0;
      for (int k = 0; k < deg; ++k) {
        term *= (k - deg) * (k + deg + a + b + 1.0) / ((k + a + 1.0) * (k + 1.0)) * 0.5 * d;
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
      }
      return scale * sum;
    }
    double p_prev = 1.0;
    double p = (a + 1.0) - 0.5 * (a + b + 2.0) * d;
    for (int k = 2; k <= deg; ++k) {
      const double s = 2.0 * k + a + b;
      const double c1 = 2.0 * k * (k + a + b) * (s - 2.0);
      const double ss = s * (s - 2.0);
      const double c2 = (s - 1.0) * ((ss + a * a - b * b) - ss * d);
      const double c3 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * s;
      const double p_next = (c2 * p - c3 * p_prev) / c1;
      p_prev = p;
      p = p_next;
    }
    return p;
  };
  const double value = eval(n, alpha, beta);
  const double deriv = n == 0 ? 0.0 : 0.5 * (n + alpha + beta + 1.0) * eval(n - 1, alpha + 1.0, beta + 1.0);
  return {value, deriv};
}

/// A node of a Jacobi rule stored as its distance to the nearer endpoint of [−1,1].
struct EndpointDistance {
  bool near_plus_one;
  double distance;

  [[nodiscard]] double x() const { return near_plus_one ? 1.0 - distance : distance - 1.0; }
};

/// Newton-polishes a root of P_n^{(α,β)} in endpoint-distance coordinates and
/// returns |P_n'| at the polished root. Roots near −1 are handled through
/// P_n^{(α,β)}(−x) = (−1)^n P_n^{(β,α)}(x).
inline double polish_jacobi_root(int n, double alpha, double beta, EndpointDistance& node) {
  const double a = node.near_plus_one ? alpha : beta;
  const double b = node.near_plus_one ? beta : alpha;
  double d = node.distance;
  for (int it = 0; it < 4; ++it) {
    const auto [p, dp] = jacobi_poly_near_plus_one(n, a, b, d);
    if (dp == 0.0 || !std::isfinite(p) || !std::isfinite(dp)) break;
    // x = 1 − d, so dP/dd = −P'(x).
    const double step = p / dp;
    const double candidate = d + step;
    if (!(candidate > 0.0 && candidate <= 1.0)) break;
    d = candidate;
    if (std::abs(step) <= 4e-16 * d) break;
  }
  node.distance = d;
  return std::abs(jacobi_poly_near_plus_one(n, a, b, d).second);
}

}  // namespace detail

namespace detail {
struct JacobiBuild {
  QuadratureRule rule;
  std::vector<EndpointDistance> distances;
};
inline JacobiBuild build_gauss_jacobi(double alpha, double beta, int n);
}  // namespace detail

/// N-point Gauss-Jacobi rule on [−1,1] for the weight (1−t)^α(1+t)^β.
///
/// Nodes come from the eigenvalues of the Jacobi matrix (Golub-Welsch) and are
/// polished with Newton steps on P_N^{(α,β)}. Weights use the closed form
///   w_i = 2^{α+β+1} Γ(α+N+1)Γ(β+N+1) / (N! Γ(α+β+N+1) (1−t_i²) P_N'(t_i)²)
/// evaluated in log space, and are cross-checked against μ₀·v₀² from the
/// eigenvectors.
inline QuadratureRule gauss_jacobi_reference(double alpha, double beta, int n) {
  return detail::build_gauss_jacobi(alpha, beta, n).rule;
}

inline detail::JacobiBuild detail::build_gauss_jacobi(double alpha, double beta, int n) {
  if (!(alpha > -1.0) || !(beta > -1.0)) {
    std::ostringstream msg;
    msg << "gauss_jacobi: exponents must exceed -1 (alpha=" << alpha << ", beta=" << beta << ")";
    throw DomainError(msg.str());
  }
  if (n < 1) throw DomainError("gauss_jacobi: node count must be positive");

  const double ab = alpha + beta;
  Eigen::VectorXd diag(n);
  Eigen::VectorXd off(std::max(n - 1, 0));
  for (int k = 0; k < n; ++k) {
    const double s = 2.0 * k + ab;
    diag[k] = (k == 0) ? (beta - alpha) / (ab + 2.0) : (beta * beta - alpha * alpha) / (s * (s + 2.0));
  }
  for (int k = 1; k < n; ++k) {
    const double s = 2.0 * k + ab;
    double b2;
    if (k == 1) {
      b2 = 4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab));
    } else {
      b2 = 4.0 * k * (k + alpha) * (k + beta) * (k + ab) / (s * s * (s + 1.0) * (s - 1.0));
    }
    off[k - 1] = std::sqrt(b2);
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "gauss_jacobi: tridiagonal eigensolver failed for alpha=" << alpha << " beta=" << beta
        << " N=" << n;
    throw NumericError(msg.str());
  }

  const double log_mu0 = (ab + 1.0) * std::log(2.0) + log_gamma(alpha + 1.0) +
                         log_gamma(beta + 1.0) - log_gamma(ab + 2.0);
  const double log_const = (ab + 1.0) * std::log(2.0) + log_gamma(alpha + n + 1.0) +
                           log_gamma(beta + n + 1.0) - log_gamma(n + 1.0) -
                           log_gamma(ab + n + 1.0);

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.lo = -1.0;
  rule.hi = 1.0;
  rule.jacobi = std::make_pair(alpha, beta);
  std::vector<detail::EndpointDistance> distances(n);

  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lambda = eig.eigenvalues()[i];
    detail::EndpointDistance node{lambda >= 0.0, lambda >= 0.0 ? 1.0 - lambda : 1.0 + lambda};
    const double dp = detail::polish_jacobi_root(n, alpha, beta, node);
    const double x = node.x();
    const double d = node.distance;
    const double w = std::exp(log_const - std::log(d) - std::log(2.0 - d) - 2.0 * std::log(dp));
    const double v0 = eig.eigenvectors()(0, i);
    const double w_gw = std::exp(log_mu0) * v0 * v0;
    if (!std::isfinite(w) || !(w > 0.0) || !(x > -1.0 && x < 1.0)) {
      std::ostringstream msg;
      msg << "gauss_jacobi: invalid node/weight at index " << i << " (x=" << x << ", w=" << w
          << ", alpha=" << alpha << ", beta=" << beta << ", N=" << n << ")";
      throw NumericError(msg.str());
    }
    worst = std::max(worst, std::abs(w - w_gw) / w);
    rule.nodes[i] = x;
    rule.weights[i] = w;
    distances[i] = node;
  }
  rule.weight_crosscheck = worst;
  if (worst > 1e-8) {
    std::ostringstream msg;
    msg << "gauss_jacobi: closed-form and eigenvector weights disagree (max rel " << worst
        << ", alpha=" << alpha << ", beta=" << beta << ", N=" << n << ")";
    throw NumericError(msg.str());
  }
  for (int i = 1; i < n; ++i) {
    if (!(rule.nodes[i] > rule.nodes[i - 1])) {
      throw NumericError("gauss_jacobi: nodes not strictly increasing after refinement");
    }
  }
  return {std::move(rule), std::move(distances)};
}

/// N-point Gauss-Jacobi rule on [0,1] for the weight (1−t)^α t^β.
inline QuadratureRule gauss_jacobi_unit(double alpha, double beta, int n) {
  auto [rule, distances] = detail::build_gauss_jacobi(alpha, beta, n);
  for (int i = 0; i < n; ++i) {
    const double half = 0.5 * distances[i].distance;
    rule.nodes[i] = distances[i].near_plus_one ? 1.0 - half : half;
  }
  rule.weights /= std::pow(2.0, alpha + beta + 1.0);
  rule.lo = 0.0;
  rule.hi = 1.0;
  return rule;
}

/// Gauss-Legendre rule on [lo, hi].
inline QuadratureRule gauss_legendre(double lo, double hi, int n) {
  QuadratureRule ref = gauss_jacobi_reference(0.0, 0.0, n);
  QuadratureRule rule;
  const double half = 0.5 * (hi - lo);
  rule.nodes = (ref.nodes.array() + 1.0) * half + lo;
  rule.weights = ref.weights * half;
  rule.lo = lo;
  rule.hi = hi;
  rule.weight_crosscheck = ref.weight_crosscheck;
  return rule;
}

/// Concatenation of `points_per`-point Gauss-Legendre rules on `subintervals`
/// equal pieces of [lo, hi].
inline QuadratureRule composite_gauss_legendre(double lo, double hi, int subintervals,
                                               int points_per) {
  if (!(lo < hi)) throw DomainError("composite_gauss_legendre: require lo < hi");
  if (subintervals < 1 || points_per < 1) {
    throw DomainError("composite_gauss_legendre: counts must be positive");
  }
  const QuadratureRule ref = gauss_jacobi_reference(0.0, 0.0, points_per);
  QuadratureRule rule;
  rule.lo = lo;
  rule.hi = hi;
  rule.nodes.resize(static_cast<Eigen::Index>(subintervals) * points_per);
  rule.weights.resize(rule.nodes.size());
  const double h = (hi - lo) / subintervals;
  for (int s = 0; s < subintervals; ++s) {
    const double a = lo + s * h;
    for (int k = 0; k < points_per; ++k) {
      const Eigen::Index idx = static_cast<Eigen::Index>(s) * points_per + k;
      rule.nodes[idx] = a + 0.5 * h * (ref.nodes[k] + 1.0);
      rule.weights[idx] = 0.5 * h * ref.weights[k];
    }
  }
  return rule;
}

}  // namespace tnnfrac
