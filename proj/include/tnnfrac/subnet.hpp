#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tnnfrac/errors.hpp"

namespace tnnfrac {

struct Layer {
  Eigen::MatrixXd weight;  // out × in
  Eigen::VectorXd bias;    // out
};

/// Fully connected 1 → ... → p network, tanh on hidden layers, linear output.
struct SubnetParams {
  std::vector<Layer> layers;

  [[nodiscard]] int output_width() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
  }

  [[nodiscard]] std::vector<int> widths() const {
    std::vector<int> w;
    if (layers.empty()) return w;
    w.push_back(static_cast<int>(layers.front().weight.cols()));
    for (const auto& l : layers) w.push_back(static_cast<int>(l.weight.rows()));
    return w;
  }

  [[nodiscard]] Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Same shapes, all entries zero.
  [[nodiscard]] SubnetParams zeros_like() const {
    SubnetParams z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers) {
      z.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
    }
    return z;
  }

  /// Writes parameters into `out[offset ...]`, layer by layer, weights row-major then bias.
  void flatten_into(Eigen::VectorXd& out, Eigen::Index offset) const {
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[offset++] = l.weight(r, c);
      }
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[offset++] = l.bias[r];
    }
  }

  void unflatten_from(const Eigen::VectorXd& in, Eigen::Index offset) {
    for (auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = in[offset++];
      }
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = in[offset++];
    }
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }
};

inline void validate_widths(const std::vector<int>& widths) {
  if (widths.size() < 2) throw ConfigError("subnet widths need at least input and output");
  if (widths.front() != 1) throw ConfigError("subnet input width must be 1");
  for (int w : widths) {
    if (w < 1) throw ConfigError("subnet widths must be positive");
  }
}

/// Uniform double in [0,1) from the top 53 bits; identical on every platform,
/// unlike std::uniform_real_distribution.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Glorot-uniform weights, zero biases.
inline SubnetParams init_params(std::uint64_t seed, const std::vector<int>& widths) {
  validate_widths(widths);
  std::mt19937_64 rng(seed);
  SubnetParams params;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = (2.0 * unit_uniform(rng) - 1.0) * limit;
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

inline std::vector<int> default_widths(int p) { return {1, 50, 50, 50, p}; }

/// Output, d/dx and d²/dx² at one input.
struct Jet {
  Eigen::VectorXd value;
  Eigen::VectorXd d1;
  Eigen::VectorXd d2;
};

/// Batched jets, one column per input point (p × n). Only components up to
/// `order` are filled.
struct JetBatch {
  int order = 0;
  Eigen::MatrixXd value;
  Eigen::MatrixXd d1;
  Eigen::MatrixXd d2;
};

/// Intermediates kept by `forward_batch` for the reverse sweep.
struct JetTape {
  int order = 0;
  Eigen::RowVectorXd x;
  // Per hidden layer: tanh(z), z', z''.
  std::vector<Eigen::MatrixXd> a, z1, z2;
};

namespace detail {

inline void check_order(int order) {
  if (order < 0 || order > 2) throw ConfigError("jet order must be 0, 1 or 2");
}

}  // namespace detail

/// Evaluates the network and its first `order` input derivatives at all `xs`.
inline JetBatch forward_batch(const SubnetParams& params, const Eigen::VectorXd& xs, int order,
                              JetTape* tape = nullptr) {
  detail::check_order(order);
  const Eigen::Index n = xs.size();
  const std::size_t nl = params.layers.size();
  if (nl == 0) throw ConfigError("subnet has no layers");
  if (tape != nullptr) {
    tape->order = order;
    tape->x = xs.transpose();
    tape->a.assign(nl - 1, {});
    tape->z1.assign(nl - 1, {});
    tape->z2.assign(nl - 1, {});
  }

  // h, h', h'' of the current layer input.
  Eigen::MatrixXd h = xs.transpose();
  Eigen::MatrixXd h1;
  Eigen::MatrixXd h2;
  bool first = true;
  for (std::size_t l = 0; l < nl; ++l) {
    const Layer& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * h;
    z.colwise() += layer.bias;
    Eigen::MatrixXd z1;
    Eigen::MatrixXd z2;
    if (order >= 1) {
      if (first) {
        z1 = layer.weight.col(0).replicate(1, n);
      } else {
        z1 = layer.weight * h1;
      }
    }
    if (order >= 2) {
      if (first) {
        z2 = Eigen::MatrixXd::Zero(z.rows(), n);
      } else {
        z2 = layer.weight * h2;
      }
    }
    first = false;
    if (l + 1 == nl) {
      JetBatch out;
      out.order = order;
      out.value = std::move(z);
      if (order >= 1) out.d1 = std::move(z1);
      if (order >= 2) out.d2 = std::move(z2);
      return out;
    }
    Eigen::MatrixXd a = z.array().tanh().matrix();
    if (order >= 1) {
      const Eigen::ArrayXXd s = 1.0 - a.array().square();
      h1 = (s * z1.array()).matrix();
      if (order >= 2) h2 = (s * (z2.array() - 2.0 * a.array() * z1.array().square())).matrix();
    }
    if (tape != nullptr) {
      tape->a[l] = a;
      if (order >= 1) tape->z1[l] = z1;
      if (order >= 2) tape->z2[l] = z2;
    }
    h = std::move(a);
  }
  return {};
}

/// Reverse sweep. `bar` holds adjoints of the outputs (components up to the
/// tape order; missing components are treated as zero). Parameter adjoints
/// are added into `grad`, which must have the shapes of `params`.
inline void backward_batch(const SubnetParams& params, const JetTape& tape, const JetBatch& bar,
                           SubnetParams& grad) {
  const std::size_t nl = params.layers.size();
  const int order = tape.order;
  const Eigen::Index n = tape.x.size();
  const bool has1 = order >= 1 && bar.d1.size() > 0;
  const bool has2 = order >= 2 && bar.d2.size() > 0;

  Eigen::MatrixXd g = bar.value.size() > 0 ? bar.value : Eigen::MatrixXd::Zero(params.layers.back().weight.rows(), n);
  Eigen::MatrixXd g1 = has1 ? bar.d1 : Eigen::MatrixXd();
  Eigen::MatrixXd g2 = has2 ? bar.d2 : Eigen::MatrixXd();
  bool have1 = has1;
  bool have2 = has2;

  for (std::size_t li = nl; li-- > 0;) {
    const Layer& layer = params.layers[li];
    Layer& gl = grad.layers[li];
    // Adjoints g, g1, g2 are with respect to z, z', z'' of layer li.
    if (li == 0) {
      gl.weight.noalias() += g * tape.x.transpose();
      if (have1) gl.weight.col(0) += g1.rowwise().sum();
      gl.bias += g.rowwise().sum();
      break;
    }
    const std::size_t prev = li - 1;
    const Eigen::MatrixXd& a = tape.a[prev];
    Eigen::ArrayXXd s;
    Eigen::MatrixXd h1;
    Eigen::MatrixXd h2;
    if (order >= 1) {
      s = 1.0 - a.array().square();
      h1 = (s * tape.z1[prev].array()).matrix();
      if (order >= 2) {
        h2 = (s * (tape.z2[prev].array() - 2.0 * a.array() * tape.z1[prev].array().square())).matrix();
      }
    }
    gl.weight.noalias() += g * a.transpose();
    if (have1) gl.weight.noalias() += g1 * h1.transpose();
    if (have2) gl.weight.noalias() += g2 * h2.transpose();
    gl.bias += g.rowwise().sum();

    // Adjoints of the previous layer outputs a, a', a''.
    const Eigen::MatrixXd abar = layer.weight.transpose() * g;
    Eigen::MatrixXd a1bar;
    Eigen::MatrixXd a2bar;
    if (have1) a1bar = layer.weight.transpose() * g1;
    if (have2) a2bar = layer.weight.transpose() * g2;

    if (order == 0 || (!have1 && !have2)) {
      const Eigen::ArrayXXd sv = 1.0 - a.array().square();
      g = (abar.array() * sv).matrix();
      have1 = have2 = false;
      continue;
    }
    const Eigen::ArrayXXd& z1 = tape.z1[prev].array();
    Eigen::ArrayXXd sbar = Eigen::ArrayXXd::Zero(a.rows(), n);
    Eigen::ArrayXXd atot = abar.array();
    Eigen::MatrixXd nz1 = Eigen::MatrixXd::Zero(a.rows(), n);
    Eigen::MatrixXd nz2;
    if (have1) {
      sbar += a1bar.array() * z1;
      nz1 = (a1bar.array() * s).matrix();
    }
    if (have2) {
      const Eigen::ArrayXXd& z2 = tape.z2[prev].array();
      const Eigen::ArrayXXd aa = a.array();
      sbar += a2bar.array() * (z2 - 2.0 * aa * z1.square());
      atot -= 2.0 * a2bar.array() * s * z1.square();
      nz1 -= (4.0 * a2bar.array() * s * aa * z1).matrix();
      nz2 = (a2bar.array() * s).matrix();
    }
    atot -= 2.0 * a.array() * sbar;
    g = (atot * s).matrix();
    g1 = std::move(nz1);
    have1 = true;
    if (have2) g2 = std::move(nz2);
  }
}

/// Jet at a single input.
inline Jet forward_jet(const SubnetParams& params, double x) {
  if (!std::isfinite(x)) throw DomainError("forward_jet: non-finite input");
  Eigen::VectorXd xs(1);
  xs[0] = x;
  const JetBatch b = forward_batch(params, xs, 2);
  return {b.value.col(0), b.d1.col(0), b.d2.col(0)};
}

/// Element-wise `forward_jet`; the i-th entry is bitwise identical to
/// `forward_jet(params, xs[i])`.
inline std::vector<Jet> forward_jet_batch(const SubnetParams& params, const std::vector<double>& xs) {
  std::vector<Jet> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(forward_jet(params, x));
  return out;
}

}  // namespace tnnfrac
