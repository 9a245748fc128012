#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "tnnfrac/assembly.hpp"
#include "tnnfrac/model.hpp"

namespace tnnfrac {

struct GradientCheckEntry {
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradientCheck {
  double loss = 0.0;
  double max_rel_error = 0.0;
  std::vector<GradientCheckEntry> entries;
};

/// Central differences on `coords` random parameter coordinates, with one
/// Richardson step, (4·D(h/2) − D(h))/3, to remove the O(h²) term. Loss
/// surfaces after a c-solve can be strongly curved (‖c‖ in the thousands).
///
/// rel = |g − fd| / max(|g|, |fd|, floor·‖g‖∞): coordinates whose
/// derivative is far below the largest one are judged against that scale
/// instead of their own (near-zero) magnitude.
inline GradientCheck gradient_check(Assembler& as, const TnnModel& model, int coords, std::uint64_t seed,
                                    double step = 1e-5, double floor = 1e-3) {
  GradientCheck out;
  ModelGradient g = zero_gradient(model);
  out.loss = as.loss_and_gradient(model, g);
  const Eigen::VectorXd grad = flatten_gradient(g);
  const Eigen::VectorXd theta = model.flat_parameters();
  const double gmax = grad.cwiseAbs().maxCoeff();

  std::vector<Eigen::Index> all(static_cast<std::size_t>(theta.size()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  std::vector<Eigen::Index> pick;
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(pick), std::min<std::size_t>(coords, all.size()), rng);

  TnnModel probe = model;
  for (Eigen::Index k : pick) {
    const double h = step * std::max(1.0, std::abs(theta[k]));
    auto central = [&](double hh) {
      Eigen::VectorXd tp = theta;
      tp[k] = theta[k] + hh;
      probe.set_flat_parameters(tp);
      const double fp = as.loss(probe);
      tp[k] = theta[k] - hh;
      probe.set_flat_parameters(tp);
      const double fm = as.loss(probe);
      return (fp - fm) / (2.0 * hh);
    };
    GradientCheckEntry e;
    e.index = k;
    e.analytic = grad[k];
    e.numeric = (4.0 * central(0.5 * h) - central(h)) / 3.0;
    const double scale = std::max({std::abs(e.analytic), std::abs(e.numeric), floor * gmax});
    e.rel_error = scale > 0.0 ? std::abs(e.analytic - e.numeric) / scale : 0.0;
    out.max_rel_error = std::max(out.max_rel_error, e.rel_error);
    out.entries.push_back(e);
  }
  return out;
}

}  // namespace tnnfrac
