#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tnnfrac/caputo.hpp"
#include "tnnfrac/errors.hpp"
#include "tnnfrac/kernels.hpp"
#include "tnnfrac/model.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/special.hpp"

namespace tnnfrac {

using PointFn = std::function<double(std::span<const double> x, double t)>;
using SpatialFn = std::function<double(std::span<const double> x)>;

enum class Nonlinearity { none, square, fredholm_square };

inline std::string nonlinearity_name(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::none: return "none";
    case Nonlinearity::square: return "u^2";
    case Nonlinearity::fredholm_square: return "kernel(u^2)";
  }
  return "unknown";
}

/// coef · time(t) · Π_i space[i](x_i).
struct SeparableTerm {
  double coef = 1.0;
  ScalarFn time;
  std::vector<ScalarFn> space;
};

/// time(t) · space(x) with a non-separable spatial part.
struct GridTerm {
  ScalarFn time;
  SpatialFn space;
};

/// Right-hand side of the residual, kept in factored form where possible so
/// the 3-D assembly never needs the full space-time grid.
struct SourceModel {
  std::vector<SeparableTerm> separable;
  std::vector<GridTerm> grid;
  /// Fully general part; only usable on explicit tensor grids (d = 1).
  PointFn pointwise;

  [[nodiscard]] double operator()(std::span<const double> x, double t) const {
    double v = 0.0;
    for (const auto& s : separable) {
      double prod = s.coef * s.time(t);
      for (std::size_t i = 0; i < s.space.size(); ++i) prod *= s.space[i](x[i]);
      v += prod;
    }
    for (const auto& g : grid) v += g.time(t) * g.space(x);
    if (pointwise) v += pointwise(x, t);
    return v;
  }

  [[nodiscard]] bool factored() const { return !pointwise; }
};

/// A benchmark problem in residual form for the homogeneous unknown û:
///
///   R = Σ_k ᶜD^{β_k} û − Δû + σ·K[û] + a·û + N(û) − r
///
/// with u = û + ℓ (ℓ the lifting, zero when absent). K is the linear kernel
/// (σ = kernel_sign); for `fredholm_square` the kernel acts on û² inside N.
struct ProblemSpec {
  std::string id;
  std::string description;
  std::map<std::string, double> params;
  int dim = 1;
  std::vector<Interval> domain;
  double horizon = 1.0;
  FractionalOrders orders;
  std::optional<double> mu_override;
  KernelDescriptor kernel;
  double kernel_sign = -1.0;
  Nonlinearity nonlinearity = Nonlinearity::none;
  /// Equation source f as posed (closed form).
  PointFn source;
  /// Residual target r for û.
  SourceModel target;
  /// Exact solution u of the original problem.
  PointFn exact;
  /// ℓ; empty when the data are already homogeneous.
  PointFn lifting;
  /// a(x,t); empty when there is no reaction term (d = 1 only).
  PointFn reaction;

  [[nodiscard]] double mu() const { return mu_override ? *mu_override : select_mu(orders); }
  [[nodiscard]] bool linear() const { return nonlinearity == Nonlinearity::none; }
  [[nodiscard]] bool has_linear_kernel() const {
    return kernel.kind != KernelKind::none && kernel.kind != KernelKind::fredholm_quadratic_st;
  }

  [[nodiscard]] double lift_at(std::span<const double> x, double t) const { return lifting ? lifting(x, t) : 0.0; }
  /// Exact û = u − ℓ.
  [[nodiscard]] double exact_hat(std::span<const double> x, double t) const { return exact(x, t) - lift_at(x, t); }
};

namespace detail {

constexpr double kPi = std::numbers::pi;
constexpr double kE = std::numbers::e;

inline double param(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw ConfigError("missing problem parameter '" + key + "'");
  return it->second;
}

/// Σ_j Γ(1+α_j)/Γ(1+α_j−ν) t^{α_j−ν}: ᶜD^ν of Σ_j t^{α_j}.
inline double caputo_power_sum(const std::vector<double>& alphas, double nu, double t) {
  double v = 0.0;
  for (double a : alphas) v += std::exp(log_gamma(1.0 + a) - log_gamma(1.0 + a - nu)) * std::pow(t, a - nu);
  return v;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DomainError(msg);
}

inline KernelDescriptor kernel_of(KernelKind kind, int subintervals = 25, int points_per = 16) {
  KernelDescriptor k;
  k.kind = kind;
  k.subintervals = subintervals;
  k.points_per = points_per;
  return k;
}

// (Σ t^{α_j}) sin(2πx) with m fractional orders.
inline ProblemSpec diffusion_multi(const std::string& id, std::vector<double> betas, std::vector<double> alphas,
                                   std::map<std::string, double> params) {
  FractionalOrders orders{betas};
  orders.validate();
  require(alphas.size() == 2 && alphas[0] > 0.0 && alphas[0] <= alphas[1] && alphas[1] < 4.0,
          "diffusion problems need 0 < alpha1 <= alpha2 < 4");
  require(betas.back() < alphas[0] + 0.5, "diffusion problems need beta_m < alpha1 + 0.5");
  if (betas.back() > 1.0) require(alphas[0] > 1.0, "orders above 1 need alpha1 > 1 (twice differentiable in t)");

  ProblemSpec p;
  p.id = id;
  p.params = std::move(params);
  p.dim = 1;
  p.domain = {{0.0, 1.0}};
  p.orders = orders;
  auto time_part = [betas, alphas](double t) {
    double v = 0.0;
    for (double b : betas) v += caputo_power_sum(alphas, b, t);
    return v + 4.0 * kPi * kPi * (std::pow(t, alphas[0]) + std::pow(t, alphas[1]));
  };
  auto sin2 = [](double x) { return std::sin(2.0 * kPi * x); };
  p.source = [time_part, sin2](std::span<const double> x, double t) { return time_part(t) * sin2(x[0]); };
  p.target.separable.push_back({1.0, time_part, {sin2}});
  p.exact = [alphas, sin2](std::span<const double> x, double t) {
    return (std::pow(t, alphas[0]) + std::pow(t, alphas[1])) * sin2(x[0]);
  };
  std::ostringstream d;
  d << betas.size() << "-term diffusion-wave, u = (t^a1 + t^a2) sin(2 pi x)";
  p.description = d.str();
  return p;
}

inline ProblemSpec diffusion_high_frequency(const std::string& id, double k, double beta, bool high_order) {
  require(high_order ? (beta > 1.0 && beta < 2.0) : (beta > 0.0 && beta < 1.0),
          "high-frequency problem: beta outside its admissible range");
  ProblemSpec p;
  p.id = id;
  p.params = {{"beta", beta}};
  p.dim = 1;
  p.domain = {{0.0, 1.0}};
  p.orders = {{beta}};
  const double g = gamma(beta + 1.0);
  p.source = [=](std::span<const double> x, double t) {
    return (g + k * k * (std::pow(t, beta) + 1.0)) * std::sin(k * x[0]);
  };
  // u = û + sin(kx) ⇒ r = f + s''(x).
  p.target.separable.push_back(
      {1.0, [=](double t) { return g + k * k * std::pow(t, beta); }, {[=](double x) { return std::sin(k * x); }}});
  p.exact = [=](std::span<const double> x, double t) { return (std::pow(t, beta) + 1.0) * std::sin(k * x[0]); };
  p.lifting = [=](std::span<const double> x, double) { return std::sin(k * x[0]); };
  std::ostringstream d;
  d << "diffusion-wave, u = (t^beta + 1) sin(" << std::lround(k / kPi) << " pi x), lifted by s(x)";
  p.description = d.str();
  return p;
}

inline ProblemSpec fredholm_quadratic(const std::string& id, double beta, bool with_linear_t) {
  require(beta > 0.0 && beta < 1.0, "Fredholm problem needs beta in (0,1)");
  ProblemSpec p;
  p.id = id;
  p.params = {{"beta", beta}};
  p.dim = 1;
  p.domain = {{-kPi / 2, kPi / 2}};
  p.orders = {{beta}};
  p.kernel = kernel_of(KernelKind::fredholm_quadratic_st);
  p.kernel.box = {-kPi / 2, kPi / 2};
  p.kernel_sign = -1.0;
  p.nonlinearity = Nonlinearity::fredholm_square;
  const double g1 = gamma(1.0 + beta);
  const double g2 = gamma(2.0 - beta);
  ScalarFn time_part;
  if (with_linear_t) {
    time_part = [=](double t) { return g1 + std::pow(t, 1.0 - beta) / g2 + (std::pow(t, beta) + t); };
    p.exact = [=](std::span<const double> x, double t) { return (std::pow(t, beta) + t) * std::cos(x[0]); };
    p.description = "Fredholm IDE with kernel s t u^2, u = (t^beta + t) cos x";
  } else {
    time_part = [=](double t) { return g1 + std::pow(t, beta); };
    p.exact = [=](std::span<const double> x, double t) { return std::pow(t, beta) * std::cos(x[0]); };
    p.description = "Fredholm IDE with kernel s t u^2, u = t^beta cos x";
  }
  p.source = [time_part](std::span<const double> x, double t) { return time_part(t) * std::cos(x[0]); };
  p.target.separable.push_back({1.0, time_part, {[](double x) { return std::cos(x); }}});
  return p;
}

inline ProblemSpec weak_singular(const std::string& id, double b1, double b2, bool square_t) {
  FractionalOrders orders{{b1, b2}};
  orders.validate();
  require(b2 < 1.0, "weakly singular problem needs both orders in (0,1)");
  ProblemSpec p;
  p.id = id;
  p.params = {{"beta1", b1}, {"beta2", b2}};
  p.dim = 1;
  p.domain = {{0.0, 1.0}};
  p.orders = orders;
  p.kernel = kernel_of(KernelKind::fredholm_weak_singular);
  p.kernel_sign = -1.0;
  ScalarFn time_part;
  if (square_t) {
    time_part = [=](double t) {
      double v = 0.0;
      for (double b : {b1, b2}) v += gamma(3.0) / gamma(3.0 - b) * std::pow(t, 2.0 - b);
      v += 4.0 * kPi * kPi * t * t;
      const double r = 1.0 - t;
      return v - (16.0 / 15.0 * std::pow(t, 2.5) + 2.0 * std::sqrt(r) * t * t + 4.0 / 3.0 * std::pow(r, 1.5) * t +
                  0.4 * std::pow(r, 2.5));
    };
    p.exact = [](std::span<const double> x, double t) { return t * t * std::sin(2.0 * kPi * x[0]); };
    p.description = "two-term IDE with |t-s|^(-1/2) Fredholm kernel, u = t^2 sin(2 pi x)";
  } else {
    time_part = [=](double t) {
      double v = 0.0;
      for (double b : {b1, b2}) v += gamma(2.0) / gamma(2.0 - b) * std::pow(t, 1.0 - b);
      const double r = 1.0 - t;
      return v + 4.0 * kPi * kPi * t - 4.0 / 3.0 * std::pow(t, 1.5) - 2.0 * t * std::sqrt(r) -
             2.0 / 3.0 * std::pow(r, 1.5);
    };
    p.exact = [](std::span<const double> x, double t) { return t * std::sin(2.0 * kPi * x[0]); };
    p.description = "two-term IDE with |t-s|^(-1/2) Fredholm kernel, u = t sin(2 pi x)";
  }
  auto sin2 = [](double x) { return std::sin(2.0 * kPi * x); };
  p.source = [time_part, sin2](std::span<const double> x, double t) { return time_part(t) * sin2(x[0]); };
  p.target.separable.push_back({1.0, time_part, {sin2}});
  return p;
}

/// Posed as ᶜD^β u − u_xx − V[u] + u² = h with h the closed-form source below;
/// lifted by ℓ(x,t) = eˣ − (e−1)x − 1 + [(e−1)x+1](t−1)².
inline ProblemSpec volterra_1d(double beta) {
  require(beta > 0.0 && beta < 1.0, "Volterra 1-D problem needs beta in (0,1)");
  ProblemSpec p;
  p.id = "volterra_1d";
  p.params = {{"beta", beta}};
  p.description = "nonlinear IDE with double Volterra integral and non-homogeneous data, u = e^x (t-1)^2";
  p.dim = 1;
  p.domain = {{0.0, 1.0}};
  p.orders = {{beta}};
  p.kernel = kernel_of(KernelKind::volterra_double_exp);
  p.kernel_sign = -1.0;
  p.nonlinearity = Nonlinearity::square;
  const double g3 = gamma(3.0 - beta);
  const double g2 = gamma(2.0 - beta);
  // ᶜD^β (t−1)²
  auto dsq = [=](double t) { return 2.0 / g3 * std::pow(t, 2.0 - beta) - 2.0 / g2 * std::pow(t, 1.0 - beta); };
  // ∫₀ᵗ τ(τ−1)² dτ
  auto poly = [](double t) { return t * t * t * t / 4.0 - 2.0 / 3.0 * t * t * t + t * t / 2.0; };
  auto h = [=](double x, double t) {
    const double ex = std::exp(x);
    const double s = (t - 1.0) * (t - 1.0);
    return ex * dsq(t) - x * ex * poly(t) + ex * s * (ex * s - 1.0);
  };
  auto lift = [](double x, double t) {
    return std::exp(x) - (kE - 1.0) * x - 1.0 + ((kE - 1.0) * x + 1.0) * (t - 1.0) * (t - 1.0);
  };
  // L₁ℓ = ᶜD^β ℓ − ℓ_xx − V[ℓ], with ∫₀ˣe^{x−s}g(s)ds closed forms for g ∈ {eˢ, s, 1}.
  auto l1_lift = [=](double x, double t) {
    const double ex = std::exp(x);
    const double e_exp = x * ex;
    const double e_lin = ex - x - 1.0;
    const double e_one = ex - 1.0;
    const double v = 0.5 * t * t * (e_exp - (kE - 1.0) * e_lin - e_one) + poly(t) * ((kE - 1.0) * e_lin + e_one);
    return ((kE - 1.0) * x + 1.0) * dsq(t) - ex - v;
  };
  p.source = [h](std::span<const double> x, double t) { return h(x[0], t); };
  p.target.pointwise = [=](std::span<const double> x, double t) {
    const double l = lift(x[0], t);
    return h(x[0], t) - l1_lift(x[0], t) - l * l;
  };
  p.exact = [](std::span<const double> x, double t) { return std::exp(x[0]) * (t - 1.0) * (t - 1.0); };
  p.lifting = [lift](std::span<const double> x, double t) { return lift(x[0], t); };
  p.reaction = [lift](std::span<const double> x, double t) { return 2.0 * lift(x[0], t); };
  return p;
}

/// ∫₀ˣ∫₀ʸ (p−q) sin p sin q dq dp = I(x, y) as eight rank-one pairs (f(x), g(y), sign).
inline std::vector<std::tuple<ScalarFn, ScalarFn, double>> volterra_sine_pairs() {
  auto one = [](double) { return 1.0; };
  auto s = [](double v) { return std::sin(v); };
  auto c = [](double v) { return std::cos(v); };
  auto vc = [](double v) { return v * std::cos(v); };
  return {{c, s, 1.0}, {s, c, -1.0}, {s, one, 1.0}, {one, s, -1.0},
          {vc, c, 1.0}, {c, vc, -1.0}, {one, vc, 1.0}, {vc, one, -1.0}};
}

inline ProblemSpec volterra_3d_separable(double b1, double b2) {
  FractionalOrders orders{{b1, b2}};
  orders.validate();
  require(b1 > 1.0, "3-D Volterra problem needs both orders in (1,2)");
  ProblemSpec p;
  p.id = "volterra_3d_separable";
  p.params = {{"beta1", b1}, {"beta2", b2}};
  p.description = "3-D two-term IDE with quadruple Volterra integral, u = t^(2+beta2) sin x1 sin x2 sin x3 on (0,pi)^3";
  p.dim = 3;
  p.domain = {{0.0, kPi}, {0.0, kPi}, {0.0, kPi}};
  p.orders = orders;
  p.kernel = kernel_of(KernelKind::volterra_quadruple_3d, 10, 16);
  p.kernel_sign = -1.0;
  const double e = 2.0 + b2;
  auto caputo_plus_laplace = [=](double t) {
    double v = 3.0 * std::pow(t, e);
    for (double b : {b1, b2}) v += std::exp(log_gamma(1.0 + e) - log_gamma(1.0 + e - b)) * std::pow(t, e - b);
    return v;
  };
  auto sin_fn = [](double v) { return std::sin(v); };
  p.target.separable.push_back({1.0, caputo_plus_laplace, {sin_fn, sin_fn, sin_fn}});
  auto tpow = [=](double t) { return std::pow(t, 4.0 + b2); };
  auto one_minus_cos = [](double v) { return 1.0 - std::cos(v); };
  for (const auto& [f, g, sign] : volterra_sine_pairs()) {
    p.target.separable.push_back({-sign / (4.0 + b2), tpow, {f, g, one_minus_cos}});
  }
  SourceModel target = p.target;
  p.source = [target](std::span<const double> x, double t) { return target(x, t); };
  p.exact = [=](std::span<const double> x, double t) {
    return std::pow(t, e) * std::sin(x[0]) * std::sin(x[1]) * std::sin(x[2]);
  };
  return p;
}

/// ∫_{[0,1]³}(x₁y₁ − x₂y₂) e^{Πx_iy_i} Π sin(πx_iy_i) dy via the exponential
/// series Σₙ(Πx_iy_i)ⁿ/n! and 1-D moments Aₙ(x) = ∫₀¹ yⁿ sin(πxy) dy.
inline double nonseparable_volterra_integral(std::span<const double> x) {
  static const QuadratureRule rule = gauss_legendre(0.0, 1.0, 40);
  constexpr int kTerms = 26;
  std::array<std::array<double, kTerms + 1>, 3> a{};
  for (int i = 0; i < 3; ++i) {
    a[i].fill(0.0);
    for (Eigen::Index k = 0; k < rule.size(); ++k) {
      const double y = rule.nodes[k];
      double w = rule.weights[k] * std::sin(kPi * x[i] * y);
      for (int n = 0; n <= kTerms; ++n) {
        a[i][n] += w;
        w *= y;
      }
    }
  }
  const double prod = x[0] * x[1] * x[2];
  double coef = 1.0;  // prodⁿ/n!
  double v = 0.0;
  for (int n = 0; n < kTerms; ++n) {
    v += coef * (x[0] * a[0][n + 1] * a[1][n] - x[1] * a[0][n] * a[1][n + 1]) * a[2][n];
    coef *= prod / (n + 1);
  }
  return v;
}

inline ProblemSpec volterra_3d_nonseparable(double b1, double b2) {
  FractionalOrders orders{{b1, b2}};
  orders.validate();
  require(b1 > 1.0, "3-D Volterra problem needs both orders in (1,2)");
  ProblemSpec p;
  p.id = "volterra_3d_nonseparable";
  p.params = {{"beta1", b1}, {"beta2", b2}};
  p.description =
      "3-D two-term IDE with quadruple Volterra integral, u = t^(2 beta2) e^(x1 x2 x3) sin(pi x1) sin(pi x2) sin(pi x3)";
  p.dim = 3;
  p.domain = {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}};
  p.orders = orders;
  p.kernel = kernel_of(KernelKind::volterra_quadruple_3d, 10, 16);
  p.kernel_sign = -1.0;
  const double e = 2.0 * b2;
  auto es = [](std::span<const double> x) {
    return std::exp(x[0] * x[1] * x[2]) * std::sin(kPi * x[0]) * std::sin(kPi * x[1]) * std::sin(kPi * x[2]);
  };
  auto jfn = [](double u, double v, double w) {
    return u * v * std::sin(kPi * u) * std::sin(kPi * v) * std::cos(kPi * w);
  };
  p.target.grid.push_back({[=](double t) {
                             double v = 0.0;
                             for (double b : {b1, b2}) {
                               v += std::exp(log_gamma(1.0 + e) - log_gamma(1.0 + e - b)) * std::pow(t, e - b);
                             }
                             return v;
                           },
                           es});
  p.target.grid.push_back({[=](double t) { return std::pow(t, e); },
                           [=](std::span<const double> x) {
                             const double sq = std::pow(x[1] * x[2], 2) + std::pow(x[0] * x[2], 2) +
                                               std::pow(x[0] * x[1], 2);
                             const double jsum = jfn(x[1], x[2], x[0]) + jfn(x[0], x[2], x[1]) + jfn(x[0], x[1], x[2]);
                             return -es(x) * (sq - 3.0 * kPi * kPi) -
                                    2.0 * kPi * std::exp(x[0] * x[1] * x[2]) * jsum;
                           }});
  p.target.grid.push_back({[=](double t) { return std::pow(t, e + 2.0); },
                           [=](std::span<const double> x) {
                             return -x[0] * x[1] * x[2] / (2.0 * (b2 + 1.0)) * nonseparable_volterra_integral(x);
                           }});
  SourceModel target = p.target;
  p.source = [target](std::span<const double> x, double t) { return target(x, t); };
  p.exact = [=](std::span<const double> x, double t) { return std::pow(t, e) * es(x); };
  return p;
}

}  // namespace detail

struct RegistryEntry {
  std::string id;
  std::string summary;
  std::map<std::string, double> defaults;
  std::function<ProblemSpec(const std::map<std::string, double>&)> build;
};

/// Every benchmark with its default parameters.
inline const std::vector<RegistryEntry>& registry() {
  using detail::param;
  using P = std::map<std::string, double>;
  static const std::vector<RegistryEntry> entries = {
      {"diffusion_single", "single-term diffusion-wave, u = (t^a1 + t^a2) sin(2 pi x)",
       {{"beta", 0.5}, {"alpha1", 1.4}, {"alpha2", 1.6}},
       [](const P& p) {
         return detail::diffusion_multi("diffusion_single", {param(p, "beta")},
                                        {param(p, "alpha1"), param(p, "alpha2")}, p);
       }},
      {"diffusion_high_freq_6pi", "single-term diffusion, u = (t^beta + 1) sin(6 pi x), beta in (0,1)",
       {{"beta", 0.7}},
       [](const P& p) {
         return detail::diffusion_high_frequency("diffusion_high_freq_6pi", 6.0 * detail::kPi, param(p, "beta"), false);
       }},
      {"diffusion_high_freq_4pi", "single-term diffusion, u = (t^beta + 1) sin(4 pi x), beta in (1,2)",
       {{"beta", 1.2}},
       [](const P& p) {
         return detail::diffusion_high_frequency("diffusion_high_freq_4pi", 4.0 * detail::kPi, param(p, "beta"), true);
       }},
      {"diffusion_two_term", "two-term diffusion-wave, u = (t^a1 + t^a2) sin(2 pi x)",
       {{"beta1", 0.1}, {"beta2", 0.5}, {"alpha1", 2.2}, {"alpha2", 2.4}},
       [](const P& p) {
         return detail::diffusion_multi("diffusion_two_term", {param(p, "beta1"), param(p, "beta2")},
                                        {param(p, "alpha1"), param(p, "alpha2")}, p);
       }},
      {"diffusion_four_term", "four-term diffusion-wave, u = (t^a1 + t^a2) sin(2 pi x)",
       {{"beta1", 0.3}, {"beta2", 0.6}, {"beta3", 1.3}, {"beta4", 1.45}, {"alpha1", 2.1}, {"alpha2", 2.5}},
       [](const P& p) {
         return detail::diffusion_multi(
             "diffusion_four_term", {param(p, "beta1"), param(p, "beta2"), param(p, "beta3"), param(p, "beta4")},
             {param(p, "alpha1"), param(p, "alpha2")}, p);
       }},
      {"fredholm_quadratic", "Fredholm IDE with kernel s t u^2, u = t^beta cos x", {{"beta", 0.6}},
       [](const P& p) { return detail::fredholm_quadratic("fredholm_quadratic", param(p, "beta"), false); }},
      {"fredholm_quadratic_linear_t", "Fredholm IDE with kernel s t u^2, u = (t^beta + t) cos x", {{"beta", 0.1}},
       [](const P& p) { return detail::fredholm_quadratic("fredholm_quadratic_linear_t", param(p, "beta"), true); }},
      {"weak_singular_t2", "two-term IDE, |t-s|^(-1/2) kernel, u = t^2 sin(2 pi x)", {{"beta1", 0.2}, {"beta2", 0.8}},
       [](const P& p) {
         return detail::weak_singular("weak_singular_t2", param(p, "beta1"), param(p, "beta2"), true);
       }},
      {"weak_singular_t1", "two-term IDE, |t-s|^(-1/2) kernel, u = t sin(2 pi x)", {{"beta1", 0.2}, {"beta2", 0.8}},
       [](const P& p) {
         return detail::weak_singular("weak_singular_t1", param(p, "beta1"), param(p, "beta2"), false);
       }},
      {"volterra_1d", "nonlinear IDE with double Volterra integral, non-homogeneous data", {{"beta", 0.5}},
       [](const P& p) { return detail::volterra_1d(param(p, "beta")); }},
      {"volterra_3d_separable", "3-D IDE with quadruple Volterra integral, separable u",
       {{"beta1", 1.3}, {"beta2", 1.7}},
       [](const P& p) { return detail::volterra_3d_separable(param(p, "beta1"), param(p, "beta2")); }},
      {"volterra_3d_nonseparable", "3-D IDE with quadruple Volterra integral, non-separable u",
       {{"beta1", 1.1}, {"beta2", 1.3}},
       [](const P& p) { return detail::volterra_3d_nonseparable(param(p, "beta1"), param(p, "beta2")); }},
  };
  return entries;
}

inline const RegistryEntry& registry_entry(const std::string& id) {
  for (const auto& e : registry()) {
    if (e.id == id) return e;
  }
  throw LookupError("unknown problem id '" + id + "'");
}

/// Builds a problem, overriding defaults with `overrides`; unknown keys are rejected.
inline ProblemSpec make_problem(const std::string& id, const std::map<std::string, double>& overrides = {}) {
  const RegistryEntry& e = registry_entry(id);
  std::map<std::string, double> params = e.defaults;
  for (const auto& [k, v] : overrides) {
    if (!params.count(k)) throw ConfigError("problem '" + id + "' has no parameter '" + k + "'");
    params[k] = v;
  }
  ProblemSpec p = e.build(params);
  p.params = params;
  return p;
}

inline double source_eval(const ProblemSpec& p, std::span<const double> x, double t) { return p.source(x, t); }

/// u = û + ℓ at matching point lists (xs is n × d).
inline Eigen::VectorXd lift_values(const ProblemSpec& p, const Eigen::MatrixXd& xs, const Eigen::VectorXd& ts,
                                   const Eigen::VectorXd& uhat) {
  if (xs.rows() != ts.size() || uhat.size() != ts.size() || xs.cols() != p.dim) {
    throw ConfigError("lift_values: point shape mismatch");
  }
  if (!p.lifting) return uhat;
  Eigen::VectorXd out = uhat;
  std::vector<double> x(static_cast<std::size_t>(p.dim));
  for (Eigen::Index k = 0; k < ts.size(); ++k) {
    for (int i = 0; i < p.dim; ++i) x[static_cast<std::size_t>(i)] = xs(k, i);
    out[k] += p.lifting(x, ts[k]);
  }
  return out;
}

/// Uniform test grid: per spatial axis n_x points including the end points,
/// time t_k = kT/n_t, k = 1..n_t.
struct TestGrid {
  std::vector<Eigen::VectorXd> axes;
  Eigen::VectorXd times;

  [[nodiscard]] Eigen::Index spatial_size() const {
    Eigen::Index n = 1;
    for (const auto& a : axes) n *= a.size();
    return n;
  }
  /// Spatial point index → coordinates, first axis slowest.
  [[nodiscard]] std::vector<double> point(Eigen::Index idx) const {
    std::vector<double> x(axes.size());
    for (int i = static_cast<int>(axes.size()) - 1; i >= 0; --i) {
      const Eigen::Index n = axes[static_cast<std::size_t>(i)].size();
      x[static_cast<std::size_t>(i)] = axes[static_cast<std::size_t>(i)][idx % n];
      idx /= n;
    }
    return x;
  }
};

inline TestGrid test_grid(const ProblemSpec& p) {
  const int n = p.dim == 1 ? 300 : 30;
  TestGrid g;
  for (const auto& iv : p.domain) g.axes.push_back(Eigen::VectorXd::LinSpaced(n, iv.lo, iv.hi));
  g.times.resize(n);
  for (int k = 0; k < n; ++k) g.times[k] = p.horizon * (k + 1) / n;
  return g;
}

/// û predicted by the model on the test grid, spatial points × times.
inline Eigen::MatrixXd model_on_grid(const TnnModel& m, const TestGrid& g) {
  FactorEvaluator ev(m);
  std::vector<int> hs;
  for (int i = 0; i < m.dim(); ++i) hs.push_back(ev.add_points(i, g.axes[static_cast<std::size_t>(i)], 0));
  const int ht = ev.add_points(m.dim(), g.times, 0);
  ev.forward();
  Eigen::MatrixXd tt = ev.component(ht, 0);
  tt.array().colwise() *= g.times.array().pow(m.mu);
  // Khatri-Rao product over spatial axes (first axis slowest).
  Eigen::MatrixXd space = ev.component(hs[0], 0);
  for (int i = 1; i < m.dim(); ++i) {
    const Eigen::MatrixXd& next = ev.component(hs[static_cast<std::size_t>(i)], 0);
    Eigen::MatrixXd kr(space.rows() * next.rows(), m.rank());
    for (Eigen::Index a = 0; a < space.rows(); ++a) {
      kr.middleRows(a * next.rows(), next.rows()) = next.array().rowwise() * space.row(a).array();
    }
    space = std::move(kr);
  }
  return space * m.c.asDiagonal() * tt.transpose();
}

/// (exact, predicted) u on the test grid, lifting applied.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> solution_on_grid(const TnnModel& m, const ProblemSpec& p,
                                                                    const TestGrid& g) {
  Eigen::MatrixXd pred = model_on_grid(m, g);
  Eigen::MatrixXd exact(pred.rows(), pred.cols());
  for (Eigen::Index s = 0; s < pred.rows(); ++s) {
    const std::vector<double> x = g.point(s);
    for (Eigen::Index k = 0; k < g.times.size(); ++k) {
      exact(s, k) = p.exact(x, g.times[k]);
      pred(s, k) += p.lift_at(x, g.times[k]);
    }
  }
  return {std::move(exact), std::move(pred)};
}

inline double relative_l2_error(const Eigen::MatrixXd& exact, const Eigen::MatrixXd& pred) {
  const double den = exact.squaredNorm();
  if (!(den > 0.0)) throw DegenerateError("relative L2 error: exact solution has zero norm on the test grid");
  return std::sqrt((pred - exact).squaredNorm() / den);
}

inline double relative_l2_test_error(const TnnModel& m, const ProblemSpec& p) {
  const auto [exact, pred] = solution_on_grid(m, p, test_grid(p));
  return relative_l2_error(exact, pred);
}

}  // namespace tnnfrac
