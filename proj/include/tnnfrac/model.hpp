#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tnnfrac/errors.hpp"
#include "tnnfrac/quadrature.hpp"
#include "tnnfrac/subnet.hpp"

namespace tnnfrac {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Ψ(x,t) = Σ_j c_j Π_i φ̂_{i,j}(x_i) · t^μ φ̂_{t,j}(t).
///
/// Subnet index s < dim() is spatial dimension s; s == dim() is time.
struct TnnModel {
  std::vector<SubnetParams> spatial;
  SubnetParams temporal;
  Eigen::VectorXd c;
  double mu = 1.0;
  std::vector<Interval> domain;
  double horizon = 1.0;
  std::vector<bool> boundary_mask;
  /// One rule per subnet (spatial dims first, then time) for the L² normalization.
  std::vector<QuadratureRule> norm_rules;

  [[nodiscard]] int dim() const { return static_cast<int>(spatial.size()); }
  [[nodiscard]] int rank() const { return static_cast<int>(c.size()); }
  [[nodiscard]] int subnet_count() const { return dim() + 1; }
  [[nodiscard]] const SubnetParams& subnet(int s) const { return s == dim() ? temporal : spatial[s]; }
  SubnetParams& subnet(int s) { return s == dim() ? temporal : spatial[s]; }

  [[nodiscard]] Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (int s = 0; s < subnet_count(); ++s) n += subnet(s).parameter_count();
    return n;
  }

  [[nodiscard]] Eigen::VectorXd flat_parameters() const {
    Eigen::VectorXd out(parameter_count());
    Eigen::Index off = 0;
    for (int s = 0; s < subnet_count(); ++s) {
      subnet(s).flatten_into(out, off);
      off += subnet(s).parameter_count();
    }
    return out;
  }

  void set_flat_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != parameter_count()) throw ConfigError("parameter vector has wrong length");
    Eigen::Index off = 0;
    for (int s = 0; s < subnet_count(); ++s) {
      subnet(s).unflatten_from(theta, off);
      off += subnet(s).parameter_count();
    }
  }

  void validate() const {
    const int p = rank();
    if (p < 1) throw ConfigError("model rank must be positive");
    if (static_cast<int>(domain.size()) != dim() || static_cast<int>(boundary_mask.size()) != dim()) {
      throw ConfigError("model domain/boundary mask size differs from spatial dimension");
    }
    if (static_cast<int>(norm_rules.size()) != subnet_count()) {
      throw ConfigError("model needs one normalization rule per subnet");
    }
    for (int s = 0; s < subnet_count(); ++s) {
      if (subnet(s).output_width() != p) throw ConfigError("subnet output width differs from rank");
    }
    for (const auto& iv : domain) {
      if (!(iv.lo < iv.hi)) throw ConfigError("model domain interval is empty");
    }
    if (!(horizon > 0.0)) throw ConfigError("time horizon must be positive");
    if (!(mu >= 0.0)) throw ConfigError("time exponent mu must be non-negative");
  }
};

using ModelGradient = std::vector<SubnetParams>;

inline ModelGradient zero_gradient(const TnnModel& m) {
  ModelGradient g;
  for (int s = 0; s < m.subnet_count(); ++s) g.push_back(m.subnet(s).zeros_like());
  return g;
}

inline Eigen::VectorXd flatten_gradient(const ModelGradient& g) {
  Eigen::Index n = 0;
  for (const auto& s : g) n += s.parameter_count();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (const auto& s : g) {
    s.flatten_into(out, off);
    off += s.parameter_count();
  }
  return out;
}

/// Builds a model with independently seeded subnets of the given widths.
inline TnnModel make_model(const std::vector<Interval>& domain, double horizon, int p, double mu,
                           std::uint64_t seed, const std::vector<QuadratureRule>& norm_rules,
                           std::vector<int> hidden = {50, 50, 50}) {
  std::vector<int> widths{1};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(p);
  TnnModel m;
  const int d = static_cast<int>(domain.size());
  for (int s = 0; s <= d; ++s) {
    const std::uint64_t sub_seed = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(s + 1);
    if (s < d) {
      SubnetParams sp = init_params(sub_seed, widths);
      // Zero biases make a tanh network odd in x; on an interval symmetric
      // about 0 every masked factor would then be odd and the subspace blind
      // to even data. Draw first-layer biases there instead.
      const double lo = domain[s].lo, hi = domain[s].hi;
      if (std::abs(lo + hi) <= 1e-12 * (hi - lo)) {
        std::mt19937_64 rng(sub_seed ^ 0x5851F42D4C957F2DULL);
        for (Eigen::Index k = 0; k < sp.layers[0].bias.size(); ++k) sp.layers[0].bias[k] = 2.0 * unit_uniform(rng) - 1.0;
      }
      m.spatial.push_back(std::move(sp));
    } else {
      m.temporal = init_params(sub_seed, widths);
    }
  }
  m.c = Eigen::VectorXd::Constant(p, 1.0 / p);
  m.mu = mu;
  m.domain = domain;
  m.horizon = horizon;
  m.boundary_mask.assign(d, true);
  m.norm_rules = norm_rules;
  m.validate();
  return m;
}

/// (value, d1, d2) per (node, j); node-major like the grids they live on.
struct FactorTable {
  Eigen::MatrixXd value;
  Eigen::MatrixXd d1;
  Eigen::MatrixXd d2;
};

/// Evaluates normalized factors of every subnet at registered point sets and
/// propagates adjoints of those factors back to the subnet parameters.
///
/// Spatial factors include the boundary polynomial (x−a)(b−x) when masked;
/// the temporal factor excludes t^μ. Normalization uses the model's
/// `norm_rules`, recomputed on every `forward()`.
class FactorEvaluator {
 public:
  explicit FactorEvaluator(const TnnModel& model, bool keep_tapes = false)
      : model_(model), keep_tapes_(keep_tapes) {
    model_.validate();
    for (int s = 0; s < model_.subnet_count(); ++s) {
      norm_handles_.push_back(add_points(s, model_.norm_rules[s].nodes, 0));
    }
  }

  /// Swaps in new parameters of the same shape; point sets are kept.
  void set_model(const TnnModel& model) {
    if (model.subnet_count() != model_.subnet_count() || model.rank() != model_.rank()) {
      throw ConfigError("FactorEvaluator::set_model: model shape differs");
    }
    model_.spatial = model.spatial;
    model_.temporal = model.temporal;
    model_.c = model.c;
    evaluated_ = false;
  }

  int add_points(int subnet, Eigen::VectorXd xs, int order) {
    if (subnet < 0 || subnet >= model_.subnet_count()) throw ConfigError("subnet index out of range");
    detail::check_order(order);
    Set set;
    set.subnet = subnet;
    set.order = order;
    set.xs = std::move(xs);
    sets_.push_back(std::move(set));
    evaluated_ = false;
    return static_cast<int>(sets_.size()) - 1;
  }

  void forward() {
    for (auto& set : sets_) {
      const SubnetParams& params = model_.subnet(set.subnet);
      set.raw = forward_batch(params, set.xs, set.order, keep_tapes_ ? &set.tape : nullptr);
      set.bar_value.resize(0, 0);
      set.bar_d1.resize(0, 0);
      set.bar_d2.resize(0, 0);
    }
    norms_.assign(model_.subnet_count(), Eigen::VectorXd());
    for (int s = 0; s < model_.subnet_count(); ++s) {
      const Set& ns = sets_[norm_handles_[s]];
      const Eigen::VectorXd g = boundary_poly(s, ns.xs, 0);
      const Eigen::MatrixXd u = ns.raw.value * g.asDiagonal();  // p × n
      Eigen::VectorXd nrm = (u.array().square().matrix() * model_.norm_rules[s].weights).cwiseSqrt();
      for (Eigen::Index j = 0; j < nrm.size(); ++j) {
        if (!std::isfinite(nrm[j])) {
          std::ostringstream msg;
          msg << "non-finite normalization constant (subnet " << s << ", column " << j << ")";
          throw NumericError(msg.str());
        }
        if (!(nrm[j] > 1e-300)) {
          std::ostringstream msg;
          msg << "degenerate factor: zero L2 norm (subnet " << s << ", column " << j << ")";
          throw DegenerateError(msg.str());
        }
      }
      norms_[s] = std::move(nrm);
    }
    for (std::size_t h = 0; h < sets_.size(); ++h) normalize(static_cast<int>(h));
    evaluated_ = true;
  }

  /// Drops accumulated adjoints without re-evaluating.
  void zero_adjoints() {
    for (auto& set : sets_) {
      set.bar_value.resize(0, 0);
      set.bar_d1.resize(0, 0);
      set.bar_d2.resize(0, 0);
    }
  }

  /// Normalized factor component (0 value, 1 first, 2 second derivative), n × p.
  [[nodiscard]] const Eigen::MatrixXd& component(int h, int comp) const {
    const Set& set = sets_.at(h);
    if (comp > set.order) throw ConfigError("requested derivative beyond registered order");
    return comp == 0 ? set.value : (comp == 1 ? set.d1 : set.d2);
  }

  /// Adjoint accumulator for `component(h, comp)`; zero on first access.
  Eigen::MatrixXd& component_bar(int h, int comp) {
    Set& set = sets_.at(h);
    if (comp > set.order) throw ConfigError("requested derivative beyond registered order");
    Eigen::MatrixXd& b = comp == 0 ? set.bar_value : (comp == 1 ? set.bar_d1 : set.bar_d2);
    if (b.size() == 0) b = Eigen::MatrixXd::Zero(set.xs.size(), model_.rank());
    return b;
  }

  [[nodiscard]] const Eigen::VectorXd& points(int h) const { return sets_.at(h).xs; }
  [[nodiscard]] int subnet_of(int h) const { return sets_.at(h).subnet; }
  [[nodiscard]] const Eigen::VectorXd& norms(int subnet) const { return norms_.at(subnet); }
  [[nodiscard]] const TnnModel& model() const { return model_; }

  /// Adds d(objective)/dθ into `grad` given the accumulated component adjoints.
  void backward(ModelGradient& grad) const {
    if (!keep_tapes_) throw ConfigError("FactorEvaluator::backward requires keep_tapes");
    if (!evaluated_) throw ConfigError("FactorEvaluator::backward before forward");
    const int p = model_.rank();
    const int ns = model_.subnet_count();
    std::vector<Eigen::VectorXd> norm_bar(ns, Eigen::VectorXd::Zero(p));
    std::vector<JetBatch> raw_bars(sets_.size());

    for (std::size_t h = 0; h < sets_.size(); ++h) {
      const Set& set = sets_[h];
      const bool any = set.bar_value.size() > 0 || set.bar_d1.size() > 0 || set.bar_d2.size() > 0;
      if (!any) continue;
      const int s = set.subnet;
      const Eigen::Index n = set.xs.size();
      const Eigen::VectorXd& nrm = norms_[s];
      const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(n, p);
      const Eigen::MatrixXd& bv = set.bar_value.size() > 0 ? set.bar_value : zero;
      const Eigen::MatrixXd& b1 = set.bar_d1.size() > 0 ? set.bar_d1 : zero;
      const Eigen::MatrixXd& b2 = set.bar_d2.size() > 0 ? set.bar_d2 : zero;
      check_finite(bv, s, static_cast<int>(h));
      check_finite(b1, s, static_cast<int>(h));
      check_finite(b2, s, static_cast<int>(h));

      // φ̂ = U / n  ⇒  Ū = φ̂̄ / n,  n̄ = −Σ φ̂̄ ⊙ φ̂ / n.
      Eigen::RowVectorXd dot = (bv.array() * set.value.array()).colwise().sum();
      if (set.order >= 1) dot += (b1.array() * set.d1.array()).colwise().sum().matrix();
      if (set.order >= 2) dot += (b2.array() * set.d2.array()).colwise().sum().matrix();
      norm_bar[s] -= (dot.transpose().array() / nrm.array()).matrix();

      const Eigen::MatrixXd uv = bv * nrm.cwiseInverse().asDiagonal();
      const Eigen::MatrixXd u1 = b1 * nrm.cwiseInverse().asDiagonal();
      const Eigen::MatrixXd u2 = b2 * nrm.cwiseInverse().asDiagonal();
      const Eigen::VectorXd g0 = boundary_poly(s, set.xs, 0);
      JetBatch rb;
      rb.order = set.order;
      if (set.order == 0) {
        rb.value = (g0.asDiagonal() * uv).transpose();
      } else {
        const Eigen::VectorXd g1 = boundary_poly(s, set.xs, 1);
        const Eigen::VectorXd g2 = boundary_poly(s, set.xs, 2);
        // U = gφ, U' = g'φ + gφ', U'' = g''φ + 2g'φ' + gφ''.
        rb.value = (g0.asDiagonal() * uv + g1.asDiagonal() * u1 + g2.asDiagonal() * u2).transpose();
        rb.d1 = (g0.asDiagonal() * u1 + 2.0 * (g1.asDiagonal() * u2)).transpose();
        if (set.order >= 2) rb.d2 = (g0.asDiagonal() * u2).transpose();
      }
      raw_bars[h] = std::move(rb);
    }

    // n_j = sqrt(Σ_q w_q U_qj²) over the normalization points.
    for (int s = 0; s < ns; ++s) {
      const int h = norm_handles_[s];
      const Set& set = sets_[h];
      const Eigen::VectorXd g0 = boundary_poly(s, set.xs, 0);
      const Eigen::MatrixXd u = set.raw.value * g0.asDiagonal();  // p × n
      const Eigen::VectorXd& w = model_.norm_rules[s].weights;
      Eigen::MatrixXd ubar = (norm_bar[s].cwiseQuotient(norms_[s])).asDiagonal() * u * w.asDiagonal();
      ubar = ubar * g0.asDiagonal();
      if (raw_bars[h].value.size() == 0) {
        raw_bars[h].order = 0;
        raw_bars[h].value = ubar;
      } else {
        raw_bars[h].value += ubar;
      }
    }

    for (std::size_t h = 0; h < sets_.size(); ++h) {
      if (raw_bars[h].value.size() == 0) continue;
      const Set& set = sets_[h];
      backward_batch(model_.subnet(set.subnet), set.tape, raw_bars[h], grad[set.subnet]);
    }
  }

 private:
  struct Set {
    int subnet = 0;
    int order = 0;
    Eigen::VectorXd xs;
    JetBatch raw;
    JetTape tape;
    Eigen::MatrixXd value, d1, d2;
    Eigen::MatrixXd bar_value, bar_d1, bar_d2;
  };

  /// (x−a)(b−x) and its derivatives for masked spatial subnets, 1 otherwise.
  [[nodiscard]] Eigen::VectorXd boundary_poly(int s, const Eigen::VectorXd& xs, int deriv) const {
    const bool masked = s < model_.dim() && model_.boundary_mask[s];
    if (!masked) return deriv == 0 ? Eigen::VectorXd::Ones(xs.size()) : Eigen::VectorXd::Zero(xs.size());
    const double a = model_.domain[s].lo;
    const double b = model_.domain[s].hi;
    if (deriv == 0) return ((xs.array() - a) * (b - xs.array())).matrix();
    if (deriv == 1) return ((a + b) - 2.0 * xs.array()).matrix();
    return Eigen::VectorXd::Constant(xs.size(), -2.0);
  }

  void normalize(int h) {
    Set& set = sets_[h];
    const int s = set.subnet;
    const Eigen::VectorXd inv = norms_[s].cwiseInverse();
    const Eigen::VectorXd g0 = boundary_poly(s, set.xs, 0);
    const Eigen::MatrixXd phi = set.raw.value.transpose();
    set.value = g0.asDiagonal() * phi * inv.asDiagonal();
    check_finite(set.value, s, h);
    if (set.order >= 1) {
      const Eigen::VectorXd g1 = boundary_poly(s, set.xs, 1);
      const Eigen::MatrixXd phi1 = set.raw.d1.transpose();
      set.d1 = (g1.asDiagonal() * phi + g0.asDiagonal() * phi1) * inv.asDiagonal();
      check_finite(set.d1, s, h);
      if (set.order >= 2) {
        const Eigen::VectorXd g2 = boundary_poly(s, set.xs, 2);
        const Eigen::MatrixXd phi2 = set.raw.d2.transpose();
        set.d2 = (g2.asDiagonal() * phi + 2.0 * (g1.asDiagonal() * phi1) + g0.asDiagonal() * phi2) *
                 inv.asDiagonal();
        check_finite(set.d2, s, h);
      }
    }
  }

  static void check_finite(const Eigen::MatrixXd& m, int subnet, int handle) {
    if (!m.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite factor values (subnet " << subnet << ", point set " << handle << ")";
      throw NumericError(msg.str());
    }
  }

  TnnModel model_;
  bool keep_tapes_;
  std::vector<Set> sets_;
  std::vector<int> norm_handles_;
  std::vector<Eigen::VectorXd> norms_;
  bool evaluated_ = false;
};

inline FactorTable factor_table(const TnnModel& model, int subnet, const Eigen::VectorXd& xs) {
  FactorEvaluator ev(model);
  const int h = ev.add_points(subnet, xs, 2);
  ev.forward();
  return {ev.component(h, 0), ev.component(h, 1), ev.component(h, 2)};
}

/// φ̂_{i,j} and its first two derivatives at the rule's nodes.
inline FactorTable spatial_factor_table(const TnnModel& model, int dim, const QuadratureRule& rule) {
  if (dim < 0 || dim >= model.dim()) throw ConfigError("spatial dimension out of range");
  const auto& iv = model.domain[dim];
  if (rule.size() > 0 && (rule.nodes.minCoeff() < iv.lo || rule.nodes.maxCoeff() > iv.hi)) {
    throw DomainError("spatial_factor_table: rule extends outside the domain interval");
  }
  return factor_table(model, dim, rule.nodes);
}

/// φ̂_{t,j} and derivatives at the rule's nodes, without the t^μ factor.
inline FactorTable temporal_factor_table(const TnnModel& model, const QuadratureRule& rule) {
  if (rule.size() > 0 && (rule.nodes.minCoeff() < 0.0 || rule.nodes.maxCoeff() > model.horizon)) {
    throw DomainError("temporal_factor_table: rule extends outside (0, T]");
  }
  return factor_table(model, model.dim(), rule.nodes);
}

/// Ψ at (x, t) points; `xs` is n × d, `ts` has length n.
inline Eigen::VectorXd evaluate(const TnnModel& model, const Eigen::MatrixXd& xs, const Eigen::VectorXd& ts) {
  const int d = model.dim();
  if (xs.cols() != d || xs.rows() != ts.size()) throw ConfigError("evaluate: point array shape mismatch");
  FactorEvaluator ev(model);
  std::vector<int> hs;
  for (int i = 0; i < d; ++i) hs.push_back(ev.add_points(i, xs.col(i), 0));
  const int ht = ev.add_points(d, ts, 0);
  ev.forward();
  Eigen::MatrixXd prod = ev.component(ht, 0);
  prod.array().colwise() *= ts.array().pow(model.mu);
  for (int i = 0; i < d; ++i) prod.array() *= ev.component(hs[i], 0).array();
  return prod * model.c;
}

}  // namespace tnnfrac
