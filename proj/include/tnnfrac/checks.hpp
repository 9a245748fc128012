#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tnnfrac/assembly.hpp"
#include "tnnfrac/caputo.hpp"
#include "tnnfrac/gradcheck.hpp"
#include "tnnfrac/oracles.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/special.hpp"
#include "tnnfrac/training.hpp"

// Self-contained verification suites behind `check <suite>`. Reference
// values come from closed forms evaluated with the C++ standard library
// (std::beta, std::tgamma), finite differences, or the pointwise oracle.
namespace tnnfrac::checks {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;
  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

inline double rel(double approx, double exact) {
  return std::abs(approx - exact) / std::max(std::abs(exact), 1e-300);
}

inline CheckResult finish(std::string name, double err, double tol, std::chrono::steady_clock::time_point t0) {
  CheckResult c;
  c.name = std::move(name);
  c.max_rel_error = err;
  c.tolerance = tol;
  c.passed = std::isfinite(err) && err <= tol;
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

}  // namespace detail

// ----- quadrature -----

/// 100-point Gauss-Jacobi on [0,1] against Beta integrals
/// ∫(1−t)^α t^β t^k (1−t)^j dt = B(β+k+1, α+j+1), k + j ≤ 199.
inline CheckResult check_gauss_jacobi_moments(std::uint64_t seed = 2024, int cases = 20, int n = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::pair<int, int>> kj{{0, 0},   {1, 0},   {0, 1},    {5, 7},    {37, 12},  {100, 0},
                                            {0, 199}, {199, 0}, {99, 100}, {60, 139}, {150, 30}, {2 * n - 1, 0}};
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    const double a = detail::uniform(rng, -0.9, 0.9);
    const double b = detail::uniform(rng, -0.9, 0.9);
    const QuadratureRule r = gauss_jacobi_unit(a, b, n);
    for (const auto& [k, j] : kj) {
      if (k + j > 2 * n - 1) continue;
      double q = 0.0;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        const double t = r.nodes[i];
        q += r.weights[i] * std::pow(t, k) * std::pow(1.0 - t, j);
      }
      worst = std::max(worst, detail::rel(q, std::beta(b + k + 1.0, a + j + 1.0)));
    }
  }
  return detail::finish("gauss_jacobi_unit Beta moments", worst, 1e-11, t0);
}

/// Composite Gauss-Legendre against ∫ x^k on a shifted interval, k ≤ 2m−1.
inline CheckResult check_gauss_legendre_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  const double lo = -0.3, hi = 1.7;
  double worst = 0.0;
  for (int m : {1, 4, 16}) {
    for (int subs : {1, 3, 10}) {
      const QuadratureRule r = composite_gauss_legendre(lo, hi, subs, m);
      for (int k = 0; k <= 2 * m - 1; ++k) {
        const double exact = (std::pow(hi, k + 1) - std::pow(lo, k + 1)) / (k + 1);
        const double q = (r.weights.array() * r.nodes.array().pow(k)).sum();
        worst = std::max(worst, std::abs(q - exact) / std::max(1.0, std::abs(exact)));
      }
    }
  }
  return detail::finish("composite Gauss-Legendre polynomial exactness", worst, 1e-13, t0);
}

inline SuiteResult quadrature_suite() {
  return {"quadrature", {check_gauss_jacobi_moments(), check_gauss_legendre_exactness()}};
}

// ----- caputo -----

/// Power rule ᶜD^ν t^γ = Γ(γ+1)/Γ(γ+1−ν) t^{γ−ν} for random (ν, μ) and a
/// positive cubic probe q, Ψ = t^μ q(t); `gamma_fn` is what the scheme uses.
inline CheckResult check_caputo_power_rule(const GammaFn& gamma_fn, std::uint64_t seed = 77, int cases = 50,
                                           int n_tau = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  Eigen::VectorXd times(3);
  times << 0.1, 0.5, 1.0;
  double worst = 0.0;
  for (int c = 0; c < cases; ++c) {
    const bool low = c % 2 == 0;
    const double nu = low ? detail::uniform(rng, 0.05, 0.95) : detail::uniform(rng, 1.05, 1.95);
    const double mu = low ? detail::uniform(rng, 0.2, 3.0) : detail::uniform(rng, 1.1, 3.5);
    std::array<double, 4> a{};
    for (auto& v : a) v = detail::uniform(rng, 0.1, 1.0);
    const TemporalProbe q = [a](double t) {
      return std::array<double, 3>{a[0] + t * (a[1] + t * (a[2] + t * a[3])), a[1] + t * (2 * a[2] + 3 * t * a[3]),
                                   2 * a[2] + 6 * t * a[3]};
    };
    const Eigen::VectorXd v = low ? caputo_low(nu, mu, q, times, n_tau, gamma_fn) : caputo_high(nu, mu, q, times, n_tau, gamma_fn);
    for (Eigen::Index k = 0; k < times.size(); ++k) {
      double exact = 0.0;
      for (int m = 0; m < 4; ++m) {
        const double g = mu + m;
        exact += a[static_cast<std::size_t>(m)] * std::tgamma(g + 1.0) / std::tgamma(g + 1.0 - nu) * std::pow(times[k], g - nu);
      }
      worst = std::max(worst, detail::rel(v[k], exact));
    }
  }
  return detail::finish("Caputo power rule", worst, 1e-10, t0);
}

/// `gamma_fn` defaults to the library Γ; the negative control passes a
/// perturbed one and must see this suite fail.
inline SuiteResult caputo_suite(const GammaFn& gamma_fn = [](double x) { return gamma(x); }) {
  return {"caputo", {check_caputo_power_rule(gamma_fn)}};
}

// ----- gradients -----

/// Desk-size model (p = 20, three hidden layers of 50, 10×16 rules) after
/// its first c-solve, central differences on `coords` coordinates.
inline CheckResult check_problem_gradient(const std::string& id, int coords = 20, std::uint64_t seed = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const ProblemSpec p = make_problem(id);
  TrainConfig cfg;
  cfg.seed = seed;
  const AssemblyRules r = cfg.rules(p);
  TnnModel m = make_model(p.domain, p.horizon, cfg.rank, p.mu(), cfg.seed, r.norm_rules(), cfg.hidden);
  Assembler as(p, r, m);
  GramSystem sys = p.linear() ? as.assemble_linear(m) : as.assemble_nonlinear(m, m.c);
  m.c = solve_least_squares(sys, cfg.rcond);
  const GradientCheck g = gradient_check(as, m, coords, seed + 100);
  return detail::finish("loss gradient vs central differences: " + id, g.max_rel_error, 1e-4, t0);
}

inline SuiteResult gradients_suite() {
  SuiteResult s{"gradients", {}};
  for (const char* id : {"diffusion_single", "fredholm_quadratic", "volterra_1d"}) s.checks.push_back(check_problem_gradient(id));
  return s;
}

// ----- assembly -----

/// Batched A, B (engine `kind`) against the pointwise dense-grid oracle.
inline CheckResult check_assembly_oracle(const std::string& id, EngineKind kind, int rank = 5, std::uint64_t seed = 4) {
  const auto t0 = std::chrono::steady_clock::now();
  const ProblemSpec p = make_problem(id);
  AssemblyRules r = make_rules(p, 6, 8, 100);
  r.engine = kind;
  const TnnModel m = make_model(p.domain, p.horizon, rank, p.mu(), seed, r.norm_rules(), {20, 20});
  Assembler as(p, r, m);
  const GramSystem fast = as.assemble_linear(m);
  const GramSystem ref = oracle::direct_gram(m, p, r);
  const double ea = (fast.A - ref.A).cwiseAbs().maxCoeff() / ref.A.cwiseAbs().maxCoeff();
  const double eb = (fast.B - ref.B).cwiseAbs().maxCoeff() / ref.B.cwiseAbs().maxCoeff();
  const std::string engine = kind == EngineKind::factorized ? "factorized" : "grid";
  return detail::finish("A, B vs dense-grid oracle (" + engine + ", p=" + std::to_string(rank) + "): " + id,
                        std::max(ea, eb), 1e-9, t0);
}

inline SuiteResult assembly_suite() {
  SuiteResult s{"assembly", {}};
  for (const char* id : {"diffusion_single", "diffusion_four_term", "weak_singular_t2"}) {
    s.checks.push_back(check_assembly_oracle(id, EngineKind::factorized));
    s.checks.push_back(check_assembly_oracle(id, EngineKind::grid));
  }
  return s;
}

}  // namespace tnnfrac::checks
