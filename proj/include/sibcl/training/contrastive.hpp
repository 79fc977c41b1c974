#pragma once

#include <cmath>
#include <vector>

#include "sibcl/nn/network.hpp"

namespace sibcl::train {

using nn::Node;
using nn::Scalar;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace detail {

// Row norms of a [N, D] matrix; zero rows are an error.
inline std::vector<double> row_norms(const Tensor& z, const char* what) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(z[i * d + k]) * z[i * d + k];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i]))
      throw NumericalError(std::string(what) + ": embedding row " + std::to_string(i) + " has zero or non-finite norm");
  }
  return norms;
}

// Maps dL/du for unit rows u = z / |z| back to dL/dz.
inline void unit_backward(const Tensor& z, const std::vector<double>& norms, const std::vector<double>& du, Tensor& gz) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0;
    for (std::size_t k = 0; k < d; ++k) dot += du[i * d + k] * (z[i * d + k] / norms[i]);
    for (std::size_t k = 0; k < d; ++k)
      gz[i * d + k] += static_cast<Scalar>((du[i * d + k] - dot * z[i * d + k] / norms[i]) / norms[i]);
  }
}

inline void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2 || s[0] == 0 || s[1] == 0) throw ConfigError(std::string(what) + ": expected a [N, D] matrix, got " + nn::shape_str(s));
}

}  // namespace detail

// NT-Xent over 2B embeddings: rows 0..B-1 hold the first views, rows B..2B-1
// the second, so row i pairs with row (i + B) mod 2B. Returns the sum over
// all 2B anchors of -log(exp(s_ip / tau) / sum_{j != i} exp(s_ij / tau)) with
// cosine similarities s.
inline Var ntxent_loss(const Var& z, double tau = 0.1) {
  detail::require_matrix(z.shape(), "ntxent_loss");
  const Tensor& zv = z.value();
  const std::size_t n = zv.shape()[0], d = zv.shape()[1];
  if (n % 2 != 0) throw ConfigError("ntxent_loss: needs an even number of rows (two views per input)");
  if (!(tau > 0)) throw ConfigError("ntxent_loss: temperature must be positive");
  const std::size_t b = n / 2;
  const auto norms = detail::row_norms(zv, "ntxent_loss");
  std::vector<double> u(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) u[i * d + k] = zv[i * d + k] / norms[i];
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += u[i * d + k] * u[j * d + k];
      s[i * n + j] = s[j * n + i] = acc;
    }
  // Row softmax over j != i, shifted by the row maximum.
  std::vector<double> p(n * n, 0.0);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = (i + b) % n;
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, s[i * n + j] / tau);
    double den = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) den += std::exp(s[i * n + j] / tau - mx);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) p[i * n + j] = std::exp(s[i * n + j] / tau - mx) / den;
    loss += -(s[i * n + pos] / tau - mx - std::log(den));
  }
  return Var::from_op(Tensor::scalar(static_cast<Scalar>(loss)), {z},
                      [n, d, b, tau, norms, u = std::move(u), p = std::move(p)](Node& node) {
    auto& in = *node.inputs[0];
    const double g = node.grad[0];
    // G_ij = dL/ds_ij; s is symmetric so dL/du_i = sum_j (G_ij + G_ji) u_j.
    std::vector<double> G(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) G[i * n + j] = g * (p[i * n + j] - (j == (i + b) % n ? 1.0 : 0.0)) / tau;
    std::vector<double> du(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double w = G[i * n + j] + G[j * n + i];
        if (w == 0) continue;
        for (std::size_t k = 0; k < d; ++k) du[i * d + k] += w * u[j * d + k];
      }
    detail::unit_backward(in.value, norms, du, in.grad);
  });
}

// Mean over rows of 2 - 2 cos(p_i, t_i); t is a fixed target.
inline Var byol_loss(const Var& pred, const Tensor& target) {
  detail::require_matrix(pred.shape(), "byol_loss");
  if (!pred.value().same_shape(target))
    throw ConfigError("byol_loss: prediction " + nn::shape_str(pred.shape()) + " vs target " + nn::shape_str(target.shape()));
  const Tensor& pv = pred.value();
  const std::size_t n = pv.shape()[0], d = pv.shape()[1];
  const auto pn = detail::row_norms(pv, "byol_loss");
  const auto tn = detail::row_norms(target, "byol_loss");
  std::vector<double> cos(n);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0;
    for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(pv[i * d + k]) * target[i * d + k];
    cos[i] = dot / (pn[i] * tn[i]);
    loss += 2.0 - 2.0 * cos[i];
  }
  loss /= static_cast<double>(n);
  return Var::from_op(Tensor::scalar(static_cast<Scalar>(loss)), {pred},
                      [n, d, target, pn, tn, cos = std::move(cos)](Node& node) {
    auto& in = *node.inputs[0];
    const double g = node.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        // d cos / d p = t / (|p||t|) - cos p / |p|^2
        const double dc = target[i * d + k] / (pn[i] * tn[i]) - cos[i] * in.value[i * d + k] / (pn[i] * pn[i]);
        in.grad[i * d + k] += static_cast<Scalar>(-2.0 * g * dc);
      }
  });
}

// Averages both view assignments: online prediction of view a against the
// target embedding of view b, and the reverse.
inline Var byol_symmetric_loss(const Var& pred_a, const Var& pred_b, const Tensor& target_a, const Tensor& target_b) {
  return nn::scale(nn::add(byol_loss(pred_a, target_b), byol_loss(pred_b, target_a)), Scalar(0.5));
}

// xi <- tau xi + (1 - tau) theta for every parameter of the target network.
inline void ema_update(nn::Network& target, const nn::Network& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("EMA decay must lie in [0, 1]");
  const auto tp = target.parameters();
  const auto op = online.parameters();
  if (tp.size() != op.size()) throw ConfigError("EMA networks differ in parameter count");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto& xi = tp[i].var.node().value;
    const auto& th = op[i].var.value();
    if (!xi.same_shape(th)) throw ConfigError("EMA shape mismatch at '" + tp[i].name + "'");
    for (std::size_t k = 0; k < xi.numel(); ++k)
      xi[k] = static_cast<Scalar>(tau * xi[k] + (1.0 - tau) * th[k]);
  }
}

}  // namespace sibcl::train
