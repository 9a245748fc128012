#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "tnnfrac/assembly.hpp"

// Slow pointwise reference implementations for d = 1, used to cross-check
// the batched assembly.
namespace tnnfrac::oracle {

// Normalized factors one point at a time through forward_jet, with norms from
// explicit loops. Shares no batching, tables or stencil maps with assembly.
class PointwiseFactors {
 public:
  explicit PointwiseFactors(const TnnModel& m) : m_(m) {
    for (int s = 0; s < m.subnet_count(); ++s) {
      const QuadratureRule& r = m.norm_rules[s];
      Eigen::VectorXd n2 = Eigen::VectorXd::Zero(m.rank());
      for (Eigen::Index k = 0; k < r.size(); ++k) {
        const Jet j = forward_jet(m.subnet(s), r.nodes[k]);
        const double g = poly(s, r.nodes[k], 0);
        n2 += r.weights[k] * (g * j.value).array().square().matrix();
      }
      norms_.push_back(n2.cwiseSqrt());
    }
  }

  // value, first, second derivative of φ̂_{s,j}.
  std::array<double, 3> operator()(int s, int j, double x) const {
    const Jet jt = forward_jet(m_.subnet(s), x);
    const double g0 = poly(s, x, 0), g1 = poly(s, x, 1), g2 = poly(s, x, 2);
    const double n = norms_[s][j];
    return {g0 * jt.value[j] / n, (g1 * jt.value[j] + g0 * jt.d1[j]) / n,
            (g2 * jt.value[j] + 2 * g1 * jt.d1[j] + g0 * jt.d2[j]) / n};
  }

  double basis(int j, double x, double t) const { return (*this)(0, j, x)[0] * std::pow(t, m_.mu) * (*this)(1, j, t)[0]; }

  double psi(const Eigen::VectorXd& c, double x, double t) const {
    double v = 0.0;
    for (int j = 0; j < c.size(); ++j) v += c[j] * basis(j, x, t);
    return v;
  }

 private:
  double poly(int s, double x, int deriv) const {
    if (s >= m_.dim() || !m_.boundary_mask[s]) return deriv == 0 ? 1.0 : 0.0;
    const double a = m_.domain[s].lo, b = m_.domain[s].hi;
    if (deriv == 0) return (x - a) * (b - x);
    if (deriv == 1) return a + b - 2 * x;
    return -2.0;
  }

  const TnnModel& m_;
  std::vector<Eigen::VectorXd> norms_;
};

AssemblyRules small_rules(const ProblemSpec& p) {
  AssemblyRules r = make_rules(p, 4, 8, 30);
  r.kernel_subintervals = 3;
  r.kernel_points = 8;
  r.kernel_jacobi = 20;
  return r;
}

TnnModel random_model(const ProblemSpec& p, const AssemblyRules& r, int rank, std::uint64_t seed) {
  TnnModel m = make_model(p.domain, p.horizon, rank, p.mu(), seed, r.norm_rules(), {12, 12});
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::normal_distribution<double> nd;
  for (int j = 0; j < rank; ++j) m.c[j] = nd(rng);
  return m;
}

// Lφ_j (plus a·φ_j) on the grid, pointwise.
inline std::vector<Eigen::MatrixXd> direct_operator(const TnnModel& m, const ProblemSpec& p, const AssemblyRules& r) {
  const PointwiseFactors f(m);
  const Eigen::VectorXd& xs = r.spatial[0].nodes;
  const Eigen::VectorXd& ts = r.temporal.nodes;
  const KernelDescriptor kd = kernel_for(p, r);
  std::vector<Eigen::MatrixXd> out;
  for (int j = 0; j < m.rank(); ++j) {
    const TemporalProbe probe = [&](double t) { return f(1, j, t); };
    const Eigen::VectorXd cap = caputo_multi(p.orders, m.mu, probe, ts, r.n_tau);
    auto xj = [&](double x) { return f(0, j, x)[0]; };
    auto tj = [&](double t) { return f(1, j, t)[0]; };
    Eigen::MatrixXd kern = Eigen::MatrixXd::Zero(xs.size(), ts.size());
    if (p.kernel.kind == KernelKind::fredholm_weak_singular) {
      const Eigen::VectorXd w = fredholm_weak_singular(tj, m.mu, ts, kd.jacobi_nodes);
      for (Eigen::Index q = 0; q < xs.size(); ++q) kern.row(q) = xj(xs[q]) * w.transpose();
    } else if (p.kernel.kind == KernelKind::volterra_double_exp) {
      kern = volterra_double_exp_probe(xj, tj, m.mu, xs, ts, kd);
    }
    Eigen::MatrixXd g(xs.size(), ts.size());
    for (Eigen::Index q = 0; q < xs.size(); ++q) {
      const auto fx = f(0, j, xs[q]);
      for (Eigen::Index k = 0; k < ts.size(); ++k) {
        const double t = ts[k];
        const double tmu = std::pow(t, m.mu) * f(1, j, t)[0];
        double v = fx[0] * cap[k] - fx[2] * tmu + p.kernel_sign * kern(q, k);
        if (p.reaction) {
          const double x = xs[q];
          v += p.reaction(std::span<const double>(&x, 1), t) * fx[0] * tmu;
        }
        g(q, k) = v;
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline Eigen::MatrixXd target_grid(const ProblemSpec& p, const AssemblyRules& r) {
  const Eigen::VectorXd& xs = r.spatial[0].nodes;
  const Eigen::VectorXd& ts = r.temporal.nodes;
  Eigen::MatrixXd out(xs.size(), ts.size());
  for (Eigen::Index q = 0; q < xs.size(); ++q) {
    for (Eigen::Index k = 0; k < ts.size(); ++k) out(q, k) = p.target(std::span<const double>(&xs[q], 1), ts[k]);
  }
  return out;
}

/// A, B built from the pointwise operator columns on the assembly grid.
inline GramSystem direct_gram(const TnnModel& m, const ProblemSpec& p, const AssemblyRules& r) {
  const std::vector<Eigen::MatrixXd> cols = direct_operator(m, p, r);
  const Eigen::MatrixXd tgt = target_grid(p, r);
  const Eigen::MatrixXd w = r.spatial[0].weights * r.temporal.weights.transpose();
  const int n = m.rank();
  GramSystem s;
  s.A.resize(n, n);
  s.B.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) s.A(i, j) = (w.array() * cols[i].array() * cols[j].array()).sum();
    s.B[i] = (w.array() * cols[i].array() * tgt.array()).sum();
  }
  s.rhs_norm2 = (w.array() * tgt.array().square()).sum();
  return s;
}

}  // namespace tnnfrac::oracle
