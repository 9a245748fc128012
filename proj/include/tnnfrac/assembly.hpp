#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tnnfrac/caputo.hpp"
#include "tnnfrac/errors.hpp"
#include "tnnfrac/kernels.hpp"
#include "tnnfrac/model.hpp"
#include "tnnfrac/problems.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/tables.hpp"

namespace tnnfrac {

enum class EngineKind { automatic, grid, factorized };

/// Quadrature used for the residual norm and the operator pieces.
struct AssemblyRules {
  std::vector<QuadratureRule> spatial;  // one per dimension
  QuadratureRule temporal;              // on (0, T]
  int n_tau = 100;
  /// Kernel rule sizes; unset keeps the problem's defaults.
  std::optional<int> kernel_subintervals;
  std::optional<int> kernel_points;
  std::optional<int> kernel_jacobi;
  /// Per-axis rule for non-separable right-hand sides (factorized engine).
  int reduced_subintervals = 10;
  int reduced_points = 8;
  EngineKind engine = EngineKind::automatic;

  [[nodiscard]] std::vector<QuadratureRule> norm_rules() const {
    std::vector<QuadratureRule> out = spatial;
    out.push_back(temporal);
    return out;
  }
};

inline AssemblyRules make_rules(const ProblemSpec& p, int subintervals = 10, int points = 16, int n_tau = 100) {
  AssemblyRules r;
  for (const auto& iv : p.domain) r.spatial.push_back(composite_gauss_legendre(iv.lo, iv.hi, subintervals, points));
  r.temporal = composite_gauss_legendre(0.0, p.horizon, subintervals, points);
  r.n_tau = n_tau;
  return r;
}

inline KernelDescriptor kernel_for(const ProblemSpec& p, const AssemblyRules& r) {
  KernelDescriptor kd = p.kernel;
  if (r.kernel_subintervals) kd.subintervals = *r.kernel_subintervals;
  if (r.kernel_points) kd.points_per = *r.kernel_points;
  if (r.kernel_jacobi) kd.jacobi_nodes = *r.kernel_jacobi;
  return kd;
}

/// A c = B with loss(c) = cᵀAc − 2cᵀB + rhs_norm2 (exact for linear problems).
struct GramSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  double rhs_norm2 = 0.0;
  /// Filled by solve_least_squares: |eigenvalues| of A, descending.
  Eigen::VectorXd singular_values;
  int truncated = 0;
  double rcond = 0.0;

  [[nodiscard]] double quadratic_loss(const Eigen::VectorXd& c) const {
    return c.dot(A * c) - 2.0 * c.dot(B) + rhs_norm2;
  }
};

/// Minimum-norm solution of A c = B, discarding eigen-directions with
/// |λ| ≤ rcond·|λ|max. With `reference`, solves for the correction
/// c − reference instead (minimum change), which can never raise the
/// quadratic loss above its value at `reference`.
inline Eigen::VectorXd solve_least_squares(GramSystem& sys, double rcond = 1e-12,
                                           const Eigen::VectorXd* reference = nullptr) {
  if (!(rcond > 0.0 && rcond < 1.0)) throw ConfigError("solve_least_squares: rcond must lie in (0,1)");
  const Eigen::Index p = sys.A.rows();
  if (sys.A.cols() != p || sys.B.size() != p) throw ConfigError("solve_least_squares: shape mismatch");
  if (reference != nullptr && reference->size() != p) throw ConfigError("solve_least_squares: reference size");
  if (!sys.A.allFinite() || !sys.B.allFinite()) throw NumericError("solve_least_squares: non-finite system");
  const Eigen::MatrixXd sym = 0.5 * (sys.A + sys.A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("solve_least_squares: eigensolver failed");
  const Eigen::VectorXd lam = es.eigenvalues();
  Eigen::VectorXd sv = lam.cwiseAbs();
  std::sort(sv.data(), sv.data() + sv.size(), std::greater<>());
  sys.singular_values = sv;
  sys.rcond = rcond;
  const double smax = p > 0 ? sv[0] : 0.0;
  if (!(smax > 0.0)) {
    sys.truncated = static_cast<int>(p);
    throw DegenerateError("solve_least_squares: every singular value truncated (zero matrix)");
  }
  const Eigen::VectorXd g = reference != nullptr ? Eigen::VectorXd(sys.B - sys.A * *reference) : sys.B;
  const Eigen::VectorXd proj = es.eigenvectors().transpose() * g;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  int cut = 0;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (std::abs(lam[i]) > rcond * smax) {
      coef[i] = proj[i] / lam[i];
    } else {
      ++cut;
    }
  }
  sys.truncated = cut;
  Eigen::VectorXd c = es.eigenvectors() * coef;
  if (reference != nullptr) c += *reference;
  return c;
}

/// Tables of every rank-one piece of LΦ; term value for column j is
///   sign · Π_i tables[space[i]](:, j) ⊗ tables[time](:, j).
struct OperatorPlan {
  struct Term {
    double sign = 1.0;
    std::vector<int> space;
    int time = -1;
    std::string label;
  };
  std::vector<LinearTable> tables;
  std::vector<Term> terms;
  std::vector<int> value;  // φ̂_i at the spatial nodes
  int tmu = -1;            // t^μ φ̂_t at the temporal nodes

  int add(LinearTable t) {
    tables.push_back(std::move(t));
    return static_cast<int>(tables.size()) - 1;
  }
  void evaluate(const FactorEvaluator& ev) {
    for (auto& t : tables) t.evaluate(ev);
  }
  const Eigen::MatrixXd& at(int i) const { return tables[static_cast<std::size_t>(i)].value; }
};

/// Registers the operator pieces on `ev`. Without `ts` only spatial tables
/// are built (term order is unchanged).
inline OperatorPlan build_operator(FactorEvaluator& ev, const ProblemSpec& p, const KernelDescriptor& kd,
                                   const std::vector<Eigen::VectorXd>& xs, const Eigen::VectorXd* ts, int n_tau) {
  const int d = p.dim;
  if (ev.model().dim() != d || static_cast<int>(xs.size()) != d) {
    throw ConfigError("operator: model/problem dimension mismatch");
  }
  const double mu = ev.model().mu;
  OperatorPlan plan;
  std::vector<int> lap(d);
  for (int i = 0; i < d; ++i) {
    const int h = ev.add_points(i, xs[i], 2);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(xs[i].size());
    plan.value.push_back(plan.add(scaled_table_at(h, 0, ones)));
    lap[i] = plan.add(scaled_table_at(h, 2, ones));
  }
  int caputo = -1;
  if (ts != nullptr) {
    const int ht = ev.add_points(d, *ts, 0);
    plan.tmu = plan.add(scaled_table_at(ht, 0, ts->array().pow(mu).matrix()));
    caputo = plan.add(caputo_table(ev, p.orders, mu, *ts, n_tau));
  }
  plan.terms.push_back({1.0, plan.value, caputo, "caputo"});
  for (int i = 0; i < d; ++i) {
    std::vector<int> sp = plan.value;
    sp[i] = lap[i];
    plan.terms.push_back({-1.0, sp, plan.tmu, "laplacian_" + std::to_string(i)});
  }

  const double sigma = p.kernel_sign;
  switch (p.kernel.kind) {
    case KernelKind::none:
    case KernelKind::fredholm_quadratic_st:
      break;
    case KernelKind::fredholm_weak_singular: {
      if (d != 1) throw ConfigError("weakly singular kernel is implemented for d = 1");
      int tw = -1;
      if (ts != nullptr) {
        const WeakSingularStencil st = weak_singular_stencil(*ts, mu, kd.jacobi_nodes);
        LinearTable w = st.right.table(ev, d);
        w.append(st.left.table(ev, d));
        tw = plan.add(std::move(w));
      }
      plan.terms.push_back({sigma, plan.value, tw, "kernel"});
      break;
    }
    case KernelKind::volterra_double_exp: {
      if (d != 1) throw ConfigError("double-exponential Volterra kernel is implemented for d = 1");
      const QuadratureRule unit = kd.unit_rule();
      const int e = plan.add(double_exp_spatial_stencil(xs[0], unit).table(ev, 0));
      const int v = ts != nullptr ? plan.add(volterra_time_stencil(*ts, unit, mu).table(ev, d)) : -1;
      plan.terms.push_back({sigma, {e}, v, "kernel"});
      break;
    }
    case KernelKind::volterra_quadruple_3d: {
      if (d != 3) throw ConfigError("quadruple Volterra kernel needs d = 3");
      const QuadratureRule unit = kd.unit_rule();
      const Eigen::VectorXd no_t;
      const Quadruple3dStencils st = quadruple_3d_stencils({xs[0], xs[1], xs[2]}, ts != nullptr ? *ts : no_t, mu, unit);
      auto shared = [&](int subnet, const KernelStencil& x, const KernelStencil& y) {
        const int h = ev.add_points(subnet, x.points, 0);
        std::array<Eigen::VectorXd, 3> cx, cy;
        cx[0] = x.coef;
        cy[0] = y.coef;
        return std::pair{plan.add(stencil_table_at(h, x.rows, x.inner, 0, cx)),
                         plan.add(stencil_table_at(h, y.rows, y.inner, 0, cy))};
      };
      const auto [a1, a0] = shared(0, st.a1, st.a0);
      const auto [b0, b1] = shared(1, st.b0, st.b1);
      const int q3 = plan.add(st.q3.table(ev, 2));
      const int vt = ts != nullptr ? plan.add(st.vt.table(ev, 3)) : -1;
      plan.terms.push_back({sigma, {a1, b0, q3}, vt, "kernel_a"});
      plan.terms.push_back({-sigma, {a0, b1, q3}, vt, "kernel_b"});
      break;
    }
  }
  return plan;
}

/// Evaluated rank-one terms of LΦ (column j of each table belongs to φ_j).
struct RankOneTerms {
  struct Term {
    double sign = 1.0;
    std::vector<Eigen::MatrixXd> space;
    Eigen::MatrixXd time;
    std::string label;
  };
  std::vector<Term> terms;
};

/// Residual values on the (x × t) tensor grid (d = 1).
struct ResidualGrid {
  QuadratureRule spatial;
  QuadratureRule temporal;
  Eigen::MatrixXd values;
};

namespace detail {

inline void add_bar(std::vector<Eigen::MatrixXd>& bars, int idx, const Eigen::MatrixXd& v) {
  auto& b = bars[static_cast<std::size_t>(idx)];
  if (b.size() == 0) {
    b = v;
  } else {
    b += v;
  }
}

inline void push_bars(const std::vector<Eigen::MatrixXd>& bars, const OperatorPlan& plan, FactorEvaluator& ev) {
  for (std::size_t i = 0; i < bars.size(); ++i) {
    if (bars[i].size() > 0) plan.tables[i].backward(bars[i], ev);
  }
}

inline void check_loss(double v) {
  if (!std::isfinite(v)) throw NumericError("loss is not finite");
}

// Pointwise engine on the explicit (x × t) grid; every 1-D problem.
class GridEngine {
 public:
  GridEngine(const ProblemSpec& p, const AssemblyRules& r, const TnnModel& m)
      : problem_(p), x_(r.spatial.at(0)), t_(r.temporal), ev_(m, true) {
    if (p.dim != 1) throw ConfigError("grid engine handles d = 1 only");
    const KernelDescriptor kd = kernel_for(p, r);
    plan_ = build_operator(ev_, p, kd, {x_.nodes}, &t_.nodes, r.n_tau);
    const Eigen::Index nx = x_.size(), nt = t_.size();
    w_ = x_.weights * t_.weights.transpose();
    target_.resize(nx, nt);
    if (p.reaction) reaction_.resize(nx, nt);
    for (Eigen::Index q = 0; q < nx; ++q) {
      const double x = x_.nodes[q];
      const std::span<const double> xs(&x, 1);
      for (Eigen::Index k = 0; k < nt; ++k) {
        target_(q, k) = p.target(xs, t_.nodes[k]);
        if (p.reaction) reaction_(q, k) = p.reaction(xs, t_.nodes[k]);
      }
    }
    if (!target_.allFinite()) throw NumericError("residual target is not finite on the grid");
    if (p.nonlinearity == Nonlinearity::fredholm_square) {
      const QuadratureRule box = kd.box_rule();
      const int hb = ev_.add_points(0, box.nodes, 0);
      box_ = plan_.add(scaled_table_at(hb, 0, Eigen::VectorXd::Ones(box.size())));
      omega_ = (box.weights.array() * box.nodes.array()).matrix();
      kappa_ = (p.kernel_sign * 0.5 * x_.nodes.array().cos()).matrix();
    }
  }

  // Tables depend on θ only; c-solves and inner iterations reuse them.
  void forward(const TnnModel& m) {
    Eigen::VectorXd theta = m.flat_parameters();
    if (theta.size() == theta_.size() && theta == theta_) {
      ev_.zero_adjoints();
      return;
    }
    ev_.set_model(m);
    ev_.forward();
    plan_.evaluate(ev_);
    theta_ = std::move(theta);
  }

  /// Residual on the grid at the current parameters and coefficient c.
  Eigen::MatrixXd residual(const Eigen::VectorXd& c) const {
    Eigen::MatrixXd r = -target_;
    for (const auto& term : plan_.terms) {
      r.noalias() += term.sign * (plan_.at(term.space[0]) * c.asDiagonal() * plan_.at(term.time).transpose());
    }
    const Eigen::MatrixXd psi = field(c);
    if (reaction_.size() > 0) r.array() += reaction_.array() * psi.array();
    if (problem_.nonlinearity == Nonlinearity::square) r.array() += psi.array().square();
    if (problem_.nonlinearity == Nonlinearity::fredholm_square) {
      const Eigen::MatrixXd psib = plan_.at(box_) * c.asDiagonal() * plan_.at(plan_.tmu).transpose();
      const Eigen::VectorXd quad = psib.array().square().matrix().transpose() * omega_;
      r.noalias() += kappa_ * (t_.nodes.array() * quad.array()).matrix().transpose();
    }
    return r;
  }

  double loss(const TnnModel& m) {
    forward(m);
    const double v = (w_.array() * residual(m.c).array().square()).sum();
    check_loss(v);
    return v;
  }

  double loss_and_gradient(const TnnModel& m, ModelGradient& grad) {
    forward(m);
    const Eigen::VectorXd& c = m.c;
    const Eigen::MatrixXd r = residual(c);
    const double v = (w_.array() * r.array().square()).sum();
    check_loss(v);
    const Eigen::MatrixXd gbar = 2.0 * (w_.array() * r.array()).matrix();
    std::vector<Eigen::MatrixXd> bars(plan_.tables.size());
    for (const auto& term : plan_.terms) {
      const int s = term.space[0];
      add_bar(bars, s, term.sign * (gbar * plan_.at(term.time) * c.asDiagonal()));
      add_bar(bars, term.time, term.sign * (gbar.transpose() * plan_.at(s) * c.asDiagonal()));
    }
    Eigen::MatrixXd psibar = Eigen::MatrixXd::Zero(r.rows(), r.cols());
    if (reaction_.size() > 0) psibar.array() += reaction_.array() * gbar.array();
    if (problem_.nonlinearity == Nonlinearity::square) psibar.array() += 2.0 * field(c).array() * gbar.array();
    const int xv = plan_.value[0];
    if (reaction_.size() > 0 || problem_.nonlinearity == Nonlinearity::square) {
      add_bar(bars, xv, psibar * plan_.at(plan_.tmu) * c.asDiagonal());
      add_bar(bars, plan_.tmu, psibar.transpose() * plan_.at(xv) * c.asDiagonal());
    }
    if (problem_.nonlinearity == Nonlinearity::fredholm_square) {
      const Eigen::MatrixXd& tm = plan_.at(plan_.tmu);
      const Eigen::MatrixXd psib = plan_.at(box_) * c.asDiagonal() * tm.transpose();
      // N_qk = κ_q t_k Σ_s ω_s Ψb(s,k)²
      const Eigen::VectorXd qbar = (gbar.transpose() * kappa_).cwiseProduct(t_.nodes);
      const Eigen::MatrixXd pbbar = 2.0 * (omega_.asDiagonal() * psib) * qbar.asDiagonal();
      add_bar(bars, box_, pbbar * tm * c.asDiagonal());
      add_bar(bars, plan_.tmu, pbbar.transpose() * plan_.at(box_) * c.asDiagonal());
    }
    push_bars(bars, plan_, ev_);
    ev_.backward(grad);
    return v;
  }

  /// Columns vec(Fφ_m) on the grid; Ĝ linearized about c_prev when given.
  Eigen::MatrixXd operator_columns(const Eigen::VectorXd* c_prev) const {
    const Eigen::Index nx = x_.size(), nt = t_.size();
    const int p = ev_.model().rank();
    const Eigen::MatrixXd& xv = plan_.at(plan_.value[0]);
    const Eigen::MatrixXd& tm = plan_.at(plan_.tmu);
    Eigen::MatrixXd psi_old, z;
    if (c_prev != nullptr && problem_.nonlinearity == Nonlinearity::square) psi_old = field(*c_prev);
    if (c_prev != nullptr && problem_.nonlinearity == Nonlinearity::fredholm_square) {
      const Eigen::MatrixXd psib = plan_.at(box_) * c_prev->asDiagonal() * tm.transpose();
      z = (omega_.asDiagonal() * psib).transpose() * plan_.at(box_);  // nt × p
    }
    Eigen::MatrixXd phi(nx * nt, p);
    for (int j = 0; j < p; ++j) {
      Eigen::MatrixXd col = Eigen::MatrixXd::Zero(nx, nt);
      for (const auto& term : plan_.terms) {
        col.noalias() += term.sign * plan_.at(term.space[0]).col(j) * plan_.at(term.time).col(j).transpose();
      }
      const Eigen::MatrixXd basis = xv.col(j) * tm.col(j).transpose();
      if (reaction_.size() > 0) col.array() += reaction_.array() * basis.array();
      if (psi_old.size() > 0) col.array() += psi_old.array() * basis.array();
      if (z.size() > 0) {
        col.noalias() += kappa_ * (t_.nodes.array() * tm.col(j).array() * z.col(j).array()).matrix().transpose();
      }
      phi.col(j) = Eigen::Map<const Eigen::VectorXd>(col.data(), nx * nt);
    }
    return phi;
  }

  GramSystem gram(const TnnModel& m, const Eigen::VectorXd* c_prev) {
    forward(m);
    const Eigen::MatrixXd phi = operator_columns(c_prev);
    const Eigen::Index n = w_.size();
    const Eigen::Map<const Eigen::VectorXd> w(w_.data(), n);
    const Eigen::Map<const Eigen::VectorXd> r(target_.data(), n);
    GramSystem sys;
    const Eigen::MatrixXd wphi = w.asDiagonal() * phi;
    sys.A = phi.transpose() * wphi;
    sys.A = 0.5 * (sys.A + sys.A.transpose()).eval();
    sys.B = wphi.transpose() * r;
    sys.rhs_norm2 = (w.array() * r.array().square()).sum();
    if (!sys.A.allFinite() || !sys.B.allFinite()) throw NumericError("Gram system is not finite");
    return sys;
  }

  [[nodiscard]] Eigen::MatrixXd field(const Eigen::VectorXd& c) const {
    return plan_.at(plan_.value[0]) * c.asDiagonal() * plan_.at(plan_.tmu).transpose();
  }
  [[nodiscard]] const OperatorPlan& plan() const { return plan_; }
  [[nodiscard]] const QuadratureRule& x_rule() const { return x_; }
  [[nodiscard]] const QuadratureRule& t_rule() const { return t_; }

 private:
  ProblemSpec problem_;
  QuadratureRule x_, t_;
  FactorEvaluator ev_;
  Eigen::VectorXd theta_;  // parameters behind the current tables
  OperatorPlan plan_;
  Eigen::MatrixXd w_, target_, reaction_;
  int box_ = -1;
  Eigen::VectorXd omega_, kappa_;
};

/// Σ_idx wF(idx) Π_i S_i(idx_i, j) for every j, and optionally the partial
/// contractions (all axes but one) that form its gradient. Layout: last
/// axis fastest.
struct TensorContraction {
  std::vector<Eigen::Index> sizes;
  Eigen::VectorXd data;

  [[nodiscard]] Eigen::VectorXd contract_except(const std::vector<const Eigen::MatrixXd*>& s, int j, int keep) const {
    const int d = static_cast<int>(sizes.size());
    Eigen::VectorXd v = data;
    // Trailing axes, last first.
    for (int i = d - 1; i > keep; --i) {
      const Eigen::Index n = sizes[i];
      const Eigen::Map<const Eigen::MatrixXd> m(v.data(), n, v.size() / n);
      v = m.transpose() * s[i]->col(j);
    }
    // Leading axes, first first.
    for (int i = 0; i < std::min(keep, d); ++i) {
      const Eigen::Index n = sizes[i];
      const Eigen::Map<const Eigen::MatrixXd> m(v.data(), v.size() / n, n);
      v = m * s[i]->col(j);
    }
    return v;
  }
};

// Factorized engine: LΦ as sums of separable terms; linear problems, any d.
class FactorizedEngine {
 public:
  FactorizedEngine(const ProblemSpec& p, const AssemblyRules& r, const TnnModel& m)
      : t_(r.temporal), ev_(m, true) {
    if (!p.linear()) throw ConfigError("factorized engine supports linear problems only");
    if (!p.target.factored()) throw ConfigError("factorized engine needs a factored right-hand side");
    if (p.reaction) throw ConfigError("factorized engine does not support a reaction term");
    const int d = p.dim;
    const KernelDescriptor kd = kernel_for(p, r);
    std::vector<Eigen::VectorXd> nodes;
    for (int i = 0; i < d; ++i) {
      nodes.push_back(r.spatial.at(static_cast<std::size_t>(i)).nodes);
      w_.push_back(r.spatial[static_cast<std::size_t>(i)].weights);
    }
    plan_ = build_operator(ev_, p, kd, nodes, &t_.nodes, r.n_tau);

    for (const auto& s : p.target.separable) {
      Sep sep;
      sep.coef = s.coef;
      for (int i = 0; i < d; ++i) {
        Eigen::VectorXd f(nodes[i].size());
        for (Eigen::Index q = 0; q < f.size(); ++q) f[q] = s.space[static_cast<std::size_t>(i)](nodes[i][q]);
        sep.fw.push_back(f.cwiseProduct(w_[static_cast<std::size_t>(i)]));
        sep.f.push_back(std::move(f));
      }
      sep.g.resize(t_.size());
      for (Eigen::Index k = 0; k < t_.size(); ++k) sep.g[k] = s.time(t_.nodes[k]);
      sep.gw = sep.g.cwiseProduct(t_.weights);
      sep_.push_back(std::move(sep));
    }

    if (!p.target.grid.empty()) {
      std::vector<Eigen::VectorXd> rnodes;
      std::vector<Eigen::VectorXd> rweights;
      for (const auto& iv : p.domain) {
        const QuadratureRule q = composite_gauss_legendre(iv.lo, iv.hi, r.reduced_subintervals, r.reduced_points);
        rnodes.push_back(q.nodes);
        rweights.push_back(q.weights);
      }
      red_plan_ = build_operator(ev_, p, kd, rnodes, nullptr, r.n_tau);
      has_red_ = true;
      std::vector<Eigen::Index> sizes;
      Eigen::Index total = 1;
      for (const auto& n : rnodes) {
        sizes.push_back(n.size());
        total *= n.size();
      }
      // Spatial parts of every right-hand-side component on the reduced grid (for ‖r‖²).
      std::vector<Eigen::VectorXd> comp_space;
      std::vector<Eigen::VectorXd> comp_time;
      Eigen::VectorXd wprod(total);
      std::vector<double> x(static_cast<std::size_t>(d));
      auto point = [&](Eigen::Index flat) {
        Eigen::Index rem = flat;
        for (int i = d - 1; i >= 0; --i) {
          x[static_cast<std::size_t>(i)] = rnodes[i][rem % sizes[i]];
          rem /= sizes[i];
        }
      };
      for (Eigen::Index f = 0; f < total; ++f) {
        Eigen::Index rem = f;
        double w = 1.0;
        for (int i = d - 1; i >= 0; --i) {
          w *= rweights[i][rem % sizes[i]];
          rem /= sizes[i];
        }
        wprod[f] = w;
      }
      for (const auto& g : p.target.grid) {
        GridPart gp;
        gp.tensor.sizes = sizes;
        gp.tensor.data.resize(total);
        Eigen::VectorXd raw(total);
        for (Eigen::Index f = 0; f < total; ++f) {
          point(f);
          raw[f] = g.space(x);
        }
        gp.tensor.data = raw.cwiseProduct(wprod);
        gp.aw.resize(t_.size());
        Eigen::VectorXd a(t_.size());
        for (Eigen::Index k = 0; k < t_.size(); ++k) a[k] = g.time(t_.nodes[k]);
        gp.aw = a.cwiseProduct(t_.weights);
        comp_space.push_back(std::move(raw));
        comp_time.push_back(std::move(a));
        grid_.push_back(std::move(gp));
      }
      for (const auto& s : p.target.separable) {
        Eigen::VectorXd raw(total);
        for (Eigen::Index f = 0; f < total; ++f) {
          point(f);
          double v = s.coef;
          for (int i = 0; i < d; ++i) v *= s.space[static_cast<std::size_t>(i)](x[static_cast<std::size_t>(i)]);
          raw[f] = v;
        }
        Eigen::VectorXd a(t_.size());
        for (Eigen::Index k = 0; k < t_.size(); ++k) a[k] = s.time(t_.nodes[k]);
        comp_space.push_back(std::move(raw));
        comp_time.push_back(std::move(a));
      }
      rhs_norm2_ = 0.0;
      for (std::size_t a = 0; a < comp_space.size(); ++a) {
        for (std::size_t b = 0; b < comp_space.size(); ++b) {
          rhs_norm2_ += (comp_space[a].array() * comp_space[b].array() * wprod.array()).sum() *
                        (comp_time[a].array() * comp_time[b].array() * t_.weights.array()).sum();
        }
      }
    } else {
      rhs_norm2_ = 0.0;
      for (const auto& a : sep_) {
        for (const auto& b : sep_) {
          double v = a.coef * b.coef * a.g.dot(b.gw);
          for (int i = 0; i < d; ++i) v *= a.f[static_cast<std::size_t>(i)].dot(b.fw[static_cast<std::size_t>(i)]);
          rhs_norm2_ += v;
        }
      }
    }
  }

  void forward(const TnnModel& m) {
    Eigen::VectorXd theta = m.flat_parameters();
    if (theta.size() == theta_.size() && theta == theta_) {
      ev_.zero_adjoints();
      return;
    }
    ev_.set_model(m);
    ev_.forward();
    plan_.evaluate(ev_);
    if (has_red_) red_plan_.evaluate(ev_);
    theta_ = std::move(theta);
  }

  GramSystem gram_current() const {
    const int p = ev_.model().rank();
    GramSystem sys;
    sys.A = Eigen::MatrixXd::Zero(p, p);
    sys.B = Eigen::VectorXd::Zero(p);
    const auto& terms = plan_.terms;
    for (std::size_t a = 0; a < terms.size(); ++a) {
      for (std::size_t b = 0; b < terms.size(); ++b) {
        sys.A.array() += terms[a].sign * terms[b].sign * pair_product(terms[a], terms[b], -1).array();
      }
      sys.B += terms[a].sign * rhs_projection(a);
    }
    sys.A = 0.5 * (sys.A + sys.A.transpose()).eval();
    sys.rhs_norm2 = rhs_norm2_;
    if (!sys.A.allFinite() || !sys.B.allFinite()) throw NumericError("Gram system is not finite");
    return sys;
  }

  GramSystem gram(const TnnModel& m) {
    forward(m);
    return gram_current();
  }

  double loss(const TnnModel& m) {
    forward(m);
    const double v = gram_current().quadratic_loss(m.c);
    check_loss(v);
    return v;
  }

  double loss_and_gradient(const TnnModel& m, ModelGradient& grad) {
    forward(m);
    const Eigen::VectorXd& c = m.c;
    const double v = gram_current().quadratic_loss(c);
    check_loss(v);
    const int d = static_cast<int>(w_.size());
    const Eigen::MatrixXd cc = c * c.transpose();
    std::vector<Eigen::MatrixXd> bars(plan_.tables.size());
    std::vector<Eigen::MatrixXd> red_bars(has_red_ ? red_plan_.tables.size() : 0);
    const auto& terms = plan_.terms;
    // cᵀAc part.
    for (const auto& ta : terms) {
      for (const auto& tb : terms) {
        const double ss = ta.sign * tb.sign;
        for (int i = 0; i <= d; ++i) {
          const Eigen::MatrixXd gbar = ss * (cc.array() * pair_product(ta, tb, i).array()).matrix();
          const int ia = i < d ? ta.space[static_cast<std::size_t>(i)] : ta.time;
          const int ib = i < d ? tb.space[static_cast<std::size_t>(i)] : tb.time;
          const Eigen::VectorXd& w = i < d ? w_[static_cast<std::size_t>(i)] : t_.weights;
          add_bar(bars, ia, w.asDiagonal() * plan_.at(ib) * gbar.transpose());
          add_bar(bars, ib, w.asDiagonal() * plan_.at(ia) * gbar);
        }
      }
    }
    // −2cᵀB part.
    for (std::size_t a = 0; a < terms.size(); ++a) {
      const auto& ta = terms[a];
      const Eigen::VectorXd cb = -2.0 * ta.sign * c;
      for (const auto& s : sep_) {
        std::vector<Eigen::VectorXd> proj;
        for (int i = 0; i < d; ++i) {
          proj.push_back(plan_.at(ta.space[static_cast<std::size_t>(i)]).transpose() * s.fw[static_cast<std::size_t>(i)]);
        }
        proj.push_back(plan_.at(ta.time).transpose() * s.gw);
        for (int i = 0; i <= d; ++i) {
          Eigen::VectorXd others = s.coef * cb;
          for (int k = 0; k <= d; ++k) {
            if (k != i) others = others.cwiseProduct(proj[static_cast<std::size_t>(k)]);
          }
          const int idx = i < d ? ta.space[static_cast<std::size_t>(i)] : ta.time;
          const Eigen::VectorXd& vec = i < d ? s.fw[static_cast<std::size_t>(i)] : s.gw;
          add_bar(bars, idx, vec * others.transpose());
        }
      }
      if (has_red_) {
        const auto& ra = red_plan_.terms[a];
        std::vector<const Eigen::MatrixXd*> st;
        for (int i = 0; i < d; ++i) st.push_back(&red_plan_.at(ra.space[static_cast<std::size_t>(i)]));
        const int p = static_cast<int>(c.size());
        for (const auto& g : grid_) {
          const Eigen::VectorXd tp = plan_.at(ta.time).transpose() * g.aw;
          Eigen::VectorXd h(p);
          for (int j = 0; j < p; ++j) h[j] = g.tensor.contract_except(st, j, d).sum();
          add_bar(bars, ta.time, g.aw * cb.cwiseProduct(h).transpose());
          const Eigen::VectorXd hbar = cb.cwiseProduct(tp);
          for (int i = 0; i < d; ++i) {
            Eigen::MatrixXd sb(st[static_cast<std::size_t>(i)]->rows(), p);
            for (int j = 0; j < p; ++j) sb.col(j) = hbar[j] * g.tensor.contract_except(st, j, i);
            add_bar(red_bars, ra.space[static_cast<std::size_t>(i)], sb);
          }
        }
      }
    }
    push_bars(bars, plan_, ev_);
    if (has_red_) push_bars(red_bars, red_plan_, ev_);
    ev_.backward(grad);
    return v;
  }

  [[nodiscard]] const OperatorPlan& plan() const { return plan_; }

 private:
  struct Sep {
    double coef = 1.0;
    std::vector<Eigen::VectorXd> f, fw;
    Eigen::VectorXd g, gw;
  };
  struct GridPart {
    TensorContraction tensor;
    Eigen::VectorXd aw;
  };

  /// Hadamard product over axes (time last) of S_aᵀ W S_b, skipping `skip`.
  [[nodiscard]] Eigen::MatrixXd pair_product(const OperatorPlan::Term& ta, const OperatorPlan::Term& tb, int skip) const {
    const int d = static_cast<int>(w_.size());
    const int p = ev_.model().rank();
    Eigen::MatrixXd out = Eigen::MatrixXd::Ones(p, p);
    for (int i = 0; i <= d; ++i) {
      if (i == skip) continue;
      const int ia = i < d ? ta.space[static_cast<std::size_t>(i)] : ta.time;
      const int ib = i < d ? tb.space[static_cast<std::size_t>(i)] : tb.time;
      const Eigen::VectorXd& w = i < d ? w_[static_cast<std::size_t>(i)] : t_.weights;
      out.array() *= (plan_.at(ia).transpose() * w.asDiagonal() * plan_.at(ib)).array();
    }
    return out;
  }

  [[nodiscard]] Eigen::VectorXd rhs_projection(std::size_t a) const {
    const int d = static_cast<int>(w_.size());
    const int p = ev_.model().rank();
    const auto& ta = plan_.terms[a];
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
    for (const auto& s : sep_) {
      Eigen::VectorXd v = s.coef * (plan_.at(ta.time).transpose() * s.gw);
      for (int i = 0; i < d; ++i) {
        v = v.cwiseProduct(plan_.at(ta.space[static_cast<std::size_t>(i)]).transpose() * s.fw[static_cast<std::size_t>(i)]);
      }
      out += v;
    }
    if (has_red_) {
      const auto& ra = red_plan_.terms[a];
      std::vector<const Eigen::MatrixXd*> st;
      for (int i = 0; i < d; ++i) st.push_back(&red_plan_.at(ra.space[static_cast<std::size_t>(i)]));
      for (const auto& g : grid_) {
        const Eigen::VectorXd tp = plan_.at(ta.time).transpose() * g.aw;
        for (int j = 0; j < p; ++j) out[j] += g.tensor.contract_except(st, j, d).sum() * tp[j];
      }
    }
    return out;
  }

  QuadratureRule t_;
  FactorEvaluator ev_;
  Eigen::VectorXd theta_;  // parameters behind the current tables
  OperatorPlan plan_;
  OperatorPlan red_plan_;
  bool has_red_ = false;
  std::vector<Eigen::VectorXd> w_;
  std::vector<Sep> sep_;
  std::vector<GridPart> grid_;
  double rhs_norm2_ = 0.0;
};

}  // namespace detail

/// Long-lived evaluator for one (problem, rules, model shape); point sets
/// and stencils are built once and reused across parameter updates.
class Assembler {
 public:
  Assembler(const ProblemSpec& p, const AssemblyRules& r, const TnnModel& m) : problem_(p) {
    if (m.dim() != p.dim) throw ConfigError("model dimension differs from problem dimension");
    if (static_cast<int>(r.spatial.size()) != p.dim) throw ConfigError("need one spatial rule per dimension");
    EngineKind kind = r.engine;
    if (kind == EngineKind::automatic) kind = p.dim == 1 ? EngineKind::grid : EngineKind::factorized;
    if (kind == EngineKind::grid) {
      grid_ = std::make_unique<detail::GridEngine>(p, r, m);
    } else {
      fact_ = std::make_unique<detail::FactorizedEngine>(p, r, m);
    }
  }

  /// Squared residual norm on the quadrature grid.
  double loss(const TnnModel& m) { return grid_ ? grid_->loss(m) : fact_->loss(m); }

  /// Loss plus d(loss)/dθ added into `grad` (c held fixed).
  double loss_and_gradient(const TnnModel& m, ModelGradient& grad) {
    return grid_ ? grid_->loss_and_gradient(m, grad) : fact_->loss_and_gradient(m, grad);
  }

  GramSystem assemble_linear(const TnnModel& m) {
    if (!problem_.linear()) throw ConfigError("assemble_linear: problem is nonlinear");
    return grid_ ? grid_->gram(m, nullptr) : fact_->gram(m);
  }

  /// Fφ_m system with Ĝ frozen at c_prev.
  GramSystem assemble_nonlinear(const TnnModel& m, const Eigen::VectorXd& c_prev) {
    if (problem_.linear()) throw ConfigError("assemble_nonlinear: problem has no nonlinearity");
    if (!grid_) throw ConfigError("assemble_nonlinear: nonlinear problems need the grid engine (d = 1)");
    if (c_prev.size() != m.rank()) throw ConfigError("assemble_nonlinear: c_prev has wrong length");
    return grid_->gram(m, &c_prev);
  }

  RankOneTerms apply_L_factors(const TnnModel& m) {
    const OperatorPlan* plan = nullptr;
    if (grid_) {
      grid_->forward(m);
      plan = &grid_->plan();
    } else {
      fact_->forward(m);
      plan = &fact_->plan();
    }
    RankOneTerms out;
    for (const auto& t : plan->terms) {
      RankOneTerms::Term r;
      r.sign = t.sign;
      r.label = t.label;
      for (int s : t.space) r.space.push_back(plan->at(s));
      r.time = plan->at(t.time);
      out.terms.push_back(std::move(r));
    }
    return out;
  }

  ResidualGrid residual_grid(const TnnModel& m) {
    if (!grid_) throw ConfigError("residual_grid: explicit grids exist for d = 1 only");
    grid_->forward(m);
    return {grid_->x_rule(), grid_->t_rule(), grid_->residual(m.c)};
  }

  [[nodiscard]] const ProblemSpec& problem() const { return problem_; }

 private:
  ProblemSpec problem_;
  std::unique_ptr<detail::GridEngine> grid_;
  std::unique_ptr<detail::FactorizedEngine> fact_;
};

inline RankOneTerms apply_L_factors(const TnnModel& m, const ProblemSpec& p, const AssemblyRules& r) {
  return Assembler(p, r, m).apply_L_factors(m);
}

inline double loss(const TnnModel& m, const ProblemSpec& p, const AssemblyRules& r) {
  return Assembler(p, r, m).loss(m);
}

inline GramSystem assemble_linear(const TnnModel& m, const ProblemSpec& p, const AssemblyRules& r) {
  return Assembler(p, r, m).assemble_linear(m);
}

inline GramSystem assemble_nonlinear(const TnnModel& m, const ProblemSpec& p, const Eigen::VectorXd& c_prev,
                                     const AssemblyRules& r) {
  return Assembler(p, r, m).assemble_nonlinear(m, c_prev);
}

}  // namespace tnnfrac
