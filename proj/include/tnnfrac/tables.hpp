#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <utility>
#include <vector>

#include "tnnfrac/model.hpp"

namespace tnnfrac {

using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// A grid × p matrix that is a fixed linear map of normalized factor jets:
///   M = Σ_src S_src · component(handle_src, comp_src).
/// All operator pieces (Caputo sums, kernel quadratures, t^μ scaling, the
/// identity on a grid) are expressed this way, so one transpose rule
/// differentiates all of them.
struct LinearTable {
  struct Source {
    int handle;
    int comp;
    RowSparse map;
  };

  Eigen::Index rows = 0;
  std::vector<Source> sources;
  Eigen::MatrixXd value;

  void evaluate(const FactorEvaluator& ev) {
    value.setZero(rows, ev.model().rank());
    for (const auto& src : sources) value.noalias() += src.map * ev.component(src.handle, src.comp);
  }

  /// Pushes an adjoint of `value` to the factor components.
  void backward(const Eigen::MatrixXd& bar, FactorEvaluator& ev) const {
    for (const auto& src : sources) {
      ev.component_bar(src.handle, src.comp).noalias() += src.map.transpose() * bar;
    }
  }

  void append(LinearTable other) {
    if (rows == 0) rows = other.rows;
    for (auto& s : other.sources) sources.push_back(std::move(s));
  }

  void scale(double factor) {
    for (auto& s : sources) s.map *= factor;
  }
};

/// Grid rows q, inner points k: row q reads points q·inner + k of handle h.
/// `coef[c]` (length rows·inner, or empty) weights component c.
inline LinearTable stencil_table_at(int h, Eigen::Index rows, Eigen::Index inner, int order,
                                    const std::array<Eigen::VectorXd, 3>& coef) {
  LinearTable t;
  t.rows = rows;
  for (int c = 0; c <= order; ++c) {
    if (coef[c].size() == 0) continue;
    RowSparse s(rows, rows * inner);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(rows * inner));
    for (Eigen::Index q = 0; q < rows; ++q) {
      for (Eigen::Index k = 0; k < inner; ++k) {
        const double v = coef[c][q * inner + k];
        if (v != 0.0) trip.emplace_back(q, q * inner + k, v);
      }
    }
    s.setFromTriplets(trip.begin(), trip.end());
    t.sources.push_back({h, c, std::move(s)});
  }
  return t;
}

/// Same, registering `points` on `ev` first.
inline LinearTable stencil_table(FactorEvaluator& ev, int subnet, Eigen::Index rows, Eigen::Index inner,
                                 const Eigen::VectorXd& points, int order,
                                 const std::array<Eigen::VectorXd, 3>& coef) {
  return stencil_table_at(ev.add_points(subnet, points, order), rows, inner, order, coef);
}

/// diag(scale) on an existing handle's component `comp`.
inline LinearTable scaled_table_at(int h, int comp, const Eigen::VectorXd& scale) {
  std::array<Eigen::VectorXd, 3> coef;
  coef[comp] = scale;
  return stencil_table_at(h, scale.size(), 1, comp, coef);
}

/// diag(scale) · component(comp) at the given points.
inline LinearTable pointwise_table(FactorEvaluator& ev, int subnet, const Eigen::VectorXd& points, int comp,
                                   const Eigen::VectorXd& scale) {
  std::array<Eigen::VectorXd, 3> coef;
  coef[comp] = scale;
  return stencil_table(ev, subnet, points.size(), 1, points, comp, coef);
}

}  // namespace tnnfrac
