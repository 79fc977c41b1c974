#pragma once

// Differentiable primitives. Activations are laid out [batch, channel,
// spatial...] with one, two or three spatial dimensions.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <limits>

#include "sibcl/nn/autodiff.hpp"

namespace sibcl::nn {

using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

// Spatial extents padded to three dimensions (depth first).
struct Spatial {
  std::size_t rank = 0;
  std::array<std::size_t, 3> ext{1, 1, 1};
  std::size_t count() const { return ext[0] * ext[1] * ext[2]; }
};

inline Spatial spatial_of(const Shape& s) {
  Spatial sp;
  sp.rank = s.size() - 2;
  if (s.size() < 3 || s.size() > 5)
    throw ConfigError("expected [batch, channel, spatial...] with 1-3 spatial dims, got " + shape_str(s));
  for (std::size_t i = 0; i < sp.rank; ++i) sp.ext[3 - sp.rank + i] = s[2 + i];
  return sp;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return Var::from_op(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& in = *n.inputs[k];
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < n.grad.numel(); ++i) in.grad[i] += n.grad[i];
    }
  });
}

inline Var scale(const Var& a, Scalar s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return Var::from_op(std::move(out), {a}, [s](Node& n) {
    auto& in = *n.inputs[0];
    for (std::size_t i = 0; i < n.grad.numel(); ++i) in.grad[i] += s * n.grad[i];
  });
}

inline Var sum(const Var& a) {
  Scalar total = 0;
  for (auto v : a.value().data()) total += v;
  return Var::from_op(Tensor::scalar(total), {a}, [](Node& n) {
    auto& in = *n.inputs[0];
    const Scalar g = n.grad[0];
    for (std::size_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), Scalar(1) / Scalar(a.value().numel())); }

// Sum of scalar losses.
inline Var add_scalars(const std::vector<Var>& terms) {
  if (terms.empty()) throw ConfigError("add_scalars: no terms");
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0 ? v : Scalar(0);
  return Var::from_op(std::move(out), {a}, [](Node& n) {
    auto& in = *n.inputs[0];
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      if (in.value[i] > 0) in.grad[i] += n.grad[i];
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  return Var::from_op(std::move(out), {a}, [](Node& n) {
    auto& in = *n.inputs[0];
    for (std::size_t i = 0; i < n.grad.numel(); ++i) in.grad[i] += n.grad[i];
  });
}

inline Var flatten(const Var& a) {
  const std::size_t b = a.shape().at(0);
  return reshape(a, Shape{b, a.value().numel() / b});
}

// Concatenates [B, F_i] blocks along the feature axis.
inline Var concat_features(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_features: no inputs");
  const std::size_t b = parts[0].shape().at(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.shape()[0] != b)
      throw ConfigError("concat_features: expected [B, F] blocks, got " + shape_str(p.shape()));
    total += p.shape()[1];
  }
  Tensor out(Shape{b, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t f = p.shape()[1];
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < f; ++c) out[r * total + off + c] = p.value()[r * f + c];
    off += f;
  }
  return Var::from_op(std::move(out), parts, [b, total](Node& n) {
    std::size_t off = 0;
    for (auto& inp : n.inputs) {
      const std::size_t f = inp->value.shape()[1];
      if (inp->requires_grad)
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t c = 0; c < f; ++c) inp->grad[r * f + c] += n.grad[r * total + off + c];
      off += f;
    }
  });
}

// y = x W^T + b with x [B, in], W [out, in], b [out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || b.value().numel() != ws[0])
    throw ConfigError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  const auto batch = static_cast<Eigen::Index>(xs[0]);
  const auto in = static_cast<Eigen::Index>(xs[1]);
  const auto outf = static_cast<Eigen::Index>(ws[0]);
  Tensor out(Shape{xs[0], ws[0]});
  MatMap y(out.ptr(), batch, outf);
  y.noalias() = ConstMatMap(x.value().ptr(), batch, in) * ConstMatMap(w.value().ptr(), outf, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b.value().ptr(), outf);
  return Var::from_op(std::move(out), {x, w, b}, [batch, in, outf](Node& n) {
    auto& xn = *n.inputs[0];
    auto& wn = *n.inputs[1];
    auto& bn = *n.inputs[2];
    ConstMatMap gy(n.grad.ptr(), batch, outf);
    if (xn.requires_grad)
      MatMap(xn.grad.ptr(), batch, in).noalias() += gy * ConstMatMap(wn.value.ptr(), outf, in);
    if (wn.requires_grad)
      MatMap(wn.grad.ptr(), outf, in).noalias() += gy.transpose() * ConstMatMap(xn.value.ptr(), batch, in);
    if (bn.requires_grad)
      for (Eigen::Index r = 0; r < batch; ++r)
        for (Eigen::Index c = 0; c < outf; ++c) bn.grad[c] += gy(r, c);
  });
}

namespace detail {

// Gathers the input window for one kernel offset into cols [C, P] with zero
// padding. shift is the offset minus the half-width per axis.
inline void gather_shifted(const Scalar* x, std::size_t channels, const Spatial& sp,
                           const std::array<long, 3>& shift, Scalar* cols) {
  const long d0 = static_cast<long>(sp.ext[0]), d1 = static_cast<long>(sp.ext[1]),
             d2 = static_cast<long>(sp.ext[2]);
  const std::size_t plane = sp.count();
  for (std::size_t c = 0; c < channels; ++c) {
    const Scalar* xc = x + c * plane;
    Scalar* oc = cols + c * plane;
    for (long i = 0; i < d0; ++i) {
      const long si = i + shift[0];
      for (long j = 0; j < d1; ++j) {
        const long sj = j + shift[1];
        Scalar* row = oc + (i * d1 + j) * d2;
        if (si < 0 || si >= d0 || sj < 0 || sj >= d1) {
          std::fill(row, row + d2, Scalar(0));
          continue;
        }
        const Scalar* src = xc + (si * d1 + sj) * d2;
        for (long k = 0; k < d2; ++k) {
          const long sk = k + shift[2];
          row[k] = (sk < 0 || sk >= d2) ? Scalar(0) : src[sk];
        }
      }
    }
  }
}

// Adjoint of gather_shifted: adds cols back into the input gradient.
inline void scatter_shifted(const Scalar* cols, std::size_t channels, const Spatial& sp,
                            const std::array<long, 3>& shift, Scalar* gx) {
  const long d0 = static_cast<long>(sp.ext[0]), d1 = static_cast<long>(sp.ext[1]),
             d2 = static_cast<long>(sp.ext[2]);
  const std::size_t plane = sp.count();
  for (std::size_t c = 0; c < channels; ++c) {
    const Scalar* cc = cols + c * plane;
    Scalar* gc = gx + c * plane;
    for (long i = 0; i < d0; ++i) {
      const long si = i + shift[0];
      if (si < 0 || si >= d0) continue;
      for (long j = 0; j < d1; ++j) {
        const long sj = j + shift[1];
        if (sj < 0 || sj >= d1) continue;
        const Scalar* row = cc + (i * d1 + j) * d2;
        Scalar* dst = gc + (si * d1 + sj) * d2;
        for (long k = 0; k < d2; ++k) {
          const long sk = k + shift[2];
          if (sk >= 0 && sk < d2) dst[sk] += row[k];
        }
      }
    }
  }
}

inline std::vector<std::array<long, 3>> kernel_shifts(std::size_t rank, std::size_t k) {
  const long half = static_cast<long>(k / 2);
  std::array<long, 3> ext{1, 1, 1};
  for (std::size_t i = 0; i < rank; ++i) ext[3 - rank + i] = static_cast<long>(k);
  std::vector<std::array<long, 3>> shifts;
  for (long a = 0; a < ext[0]; ++a)
    for (long b = 0; b < ext[1]; ++b)
      for (long c = 0; c < ext[2]; ++c)
        shifts.push_back({ext[0] > 1 ? a - half : 0, ext[1] > 1 ? b - half : 0, ext[2] > 1 ? c - half : 0});
  return shifts;
}

}  // namespace detail

// "Same" convolution, stride 1, odd kernel. x [B, C, S...], w [O, C, k...], b [O].
inline Var conv(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const auto sp = detail::spatial_of(xs);
  if (ws.size() != xs.size() || ws[1] != xs[1])
    throw ConfigError("conv: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  const std::size_t k = ws[2];
  if (k % 2 == 0) throw ConfigError("conv: kernel size must be odd, got " + std::to_string(k));
  for (std::size_t i = 2; i < ws.size(); ++i)
    if (ws[i] != k) throw ConfigError("conv: kernel must be cubic, got " + shape_str(ws));
  const std::size_t batch = xs[0], cin = xs[1], cout = ws[0], plane = sp.count();
  if (b.value().numel() != cout) throw ConfigError("conv: bias length mismatch");
  const auto shifts = detail::kernel_shifts(sp.rank, k);
  const std::size_t taps = shifts.size();

  // Weight slice per tap: [taps][O, C].
  std::vector<Scalar> wt(taps * cout * cin);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t t = 0; t < taps; ++t) wt[(t * cout + o) * cin + c] = w.value()[(o * cin + c) * taps + t];

  Shape os = xs;
  os[1] = cout;
  Tensor out(os);
  std::vector<Scalar> cols(cin * plane);
  const auto P = static_cast<Eigen::Index>(plane);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    MatMap y(out.ptr() + bi * cout * plane, static_cast<Eigen::Index>(cout), P);
    for (std::size_t o = 0; o < cout; ++o) y.row(static_cast<Eigen::Index>(o)).setConstant(b.value()[o]);
    const Scalar* xb = x.value().ptr() + bi * cin * plane;
    for (std::size_t t = 0; t < taps; ++t) {
      detail::gather_shifted(xb, cin, sp, shifts[t], cols.data());
      y.noalias() += ConstMatMap(wt.data() + t * cout * cin, static_cast<Eigen::Index>(cout),
                                 static_cast<Eigen::Index>(cin)) *
                     ConstMatMap(cols.data(), static_cast<Eigen::Index>(cin), P);
    }
  }

  return Var::from_op(std::move(out), {x, w, b},
                      [sp, shifts, wt = std::move(wt), batch, cin, cout, plane, taps](Node& n) {
    auto& xn = *n.inputs[0];
    auto& wn = *n.inputs[1];
    auto& bn = *n.inputs[2];
    const auto P = static_cast<Eigen::Index>(plane);
    const auto Ci = static_cast<Eigen::Index>(cin);
    const auto Co = static_cast<Eigen::Index>(cout);
    std::vector<Scalar> cols(cin * plane), gcols(cin * plane);
    std::vector<Scalar> gwt(wn.requires_grad ? taps * cout * cin : 0, Scalar(0));
    for (std::size_t bi = 0; bi < batch; ++bi) {
      ConstMatMap gy(n.grad.ptr() + bi * cout * plane, Co, P);
      if (bn.requires_grad)
        for (std::size_t o = 0; o < cout; ++o) bn.grad[o] += gy.row(static_cast<Eigen::Index>(o)).sum();
      const Scalar* xb = xn.value.ptr() + bi * cin * plane;
      for (std::size_t t = 0; t < taps; ++t) {
        if (wn.requires_grad) {
          detail::gather_shifted(xb, cin, sp, shifts[t], cols.data());
          MatMap(gwt.data() + t * cout * cin, Co, Ci).noalias() +=
              gy * ConstMatMap(cols.data(), Ci, P).transpose();
        }
        if (xn.requires_grad) {
          MatMap(gcols.data(), Ci, P).noalias() =
              ConstMatMap(wt.data() + t * cout * cin, Co, Ci).transpose() * gy;
          detail::scatter_shifted(gcols.data(), cin, sp, shifts[t], xn.grad.ptr() + bi * cin * plane);
        }
      }
    }
    if (wn.requires_grad)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t t = 0; t < taps; ++t) wn.grad[(o * cin + c) * taps + t] += gwt[(t * cout + o) * cin + c];
  });
}

// Max pooling with window 2 and stride 2 along every spatial axis.
inline Var maxpool2(const Var& x) {
  const auto& xs = x.shape();
  const auto sp = detail::spatial_of(xs);
  for (std::size_t i = 2; i < xs.size(); ++i)
    if (xs[i] % 2 != 0)
      throw ConfigError("maxpool2: spatial extents must be even, got " + shape_str(xs));
  Shape os = xs;
  for (std::size_t i = 2; i < os.size(); ++i) os[i] /= 2;
  const auto osp = detail::spatial_of(os);
  const std::size_t maps = xs[0] * xs[1];
  const std::size_t in_plane = sp.count(), out_plane = osp.count();
  const std::size_t dz = sp.rank == 3 ? 2 : 1;
  const std::size_t dy = sp.rank >= 2 ? 2 : 1;
  Tensor out(os);
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t m = 0; m < maps; ++m) {
    const Scalar* xin = x.value().ptr() + m * in_plane;
    for (std::size_t i = 0; i < osp.ext[0]; ++i)
      for (std::size_t j = 0; j < osp.ext[1]; ++j)
        for (std::size_t k = 0; k < osp.ext[2]; ++k) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          std::size_t where = 0;
          for (std::size_t a = 0; a < dz; ++a)
            for (std::size_t b = 0; b < dy; ++b)
              for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t idx = ((i * dz + a) * sp.ext[1] + (j * dy + b)) * sp.ext[2] + (k * 2 + c);
                if (xin[idx] > best) {
                  best = xin[idx];
                  where = idx;
                }
              }
          const std::size_t o = m * out_plane + (i * osp.ext[1] + j) * osp.ext[2] + k;
          out[o] = best;
          argmax[o] = m * in_plane + where;
        }
  }
  return Var::from_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& n) {
    auto& in = *n.inputs[0];
    for (std::size_t o = 0; o < argmax.size(); ++o) in.grad[argmax[o]] += n.grad[o];
  });
}

// Running statistics owned by a BatchNorm layer.
struct BatchNormStats {
  std::vector<Scalar> mean;
  std::vector<Scalar> var;
};

// Per-channel normalization over batch and spatial positions. Training mode
// uses batch statistics (biased variance) and updates the running buffers
// with the unbiased variance; evaluation mode uses the running buffers.
inline Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
                     bool training, Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5)) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw ConfigError("batchnorm: expected [B, C, ...], got " + shape_str(xs));
  const std::size_t batch = xs[0], ch = xs[1];
  const std::size_t plane = x.value().numel() / (batch * ch);
  if (gamma.value().numel() != ch || beta.value().numel() != ch)
    throw ConfigError("batchnorm: parameter length does not match channels in " + shape_str(xs));
  if (stats.mean.size() != ch) {
    stats.mean.assign(ch, Scalar(0));
    stats.var.assign(ch, Scalar(1));
  }
  const std::size_t count = batch * plane;
  if (training && batch < 2)
    throw ConfigError("batchnorm: training mode requires batch >= 2, got " + std::to_string(batch));

  std::vector<Scalar> mu(ch), inv_std(ch);
  const Scalar* xv = x.value().ptr();
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      double s = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) s += xv[(b * ch + c) * plane + p];
      const double m = s / static_cast<double>(count);
      double v = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = xv[(b * ch + c) * plane + p] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mu[c] = static_cast<Scalar>(m);
      inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(v + eps));
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      stats.mean[c] = (1 - momentum) * stats.mean[c] + momentum * static_cast<Scalar>(m);
      stats.var[c] = (1 - momentum) * stats.var[c] + momentum * static_cast<Scalar>(unbiased);
    } else {
      mu[c] = stats.mean[c];
      inv_std[c] = Scalar(1) / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor out(xs);
  Tensor xhat(xs);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * ch + c) * plane + p;
        xhat[i] = (xv[i] - mu[c]) * inv_std[c];
        out[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
      }

  return Var::from_op(std::move(out), {x, gamma, beta},
                      [xhat = std::move(xhat), inv_std, training, batch, ch, plane](Node& n) {
    auto& xn = *n.inputs[0];
    auto& gn = *n.inputs[1];
    auto& bn = *n.inputs[2];
    const double count = static_cast<double>(batch * plane);
    for (std::size_t c = 0; c < ch; ++c) {
      double sg = 0, sgx = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = (b * ch + c) * plane + p;
          sg += n.grad[i];
          sgx += n.grad[i] * xhat[i];
        }
      if (gn.requires_grad) gn.grad[c] += static_cast<Scalar>(sgx);
      if (bn.requires_grad) bn.grad[c] += static_cast<Scalar>(sg);
      if (!xn.requires_grad) continue;
      const Scalar g = gn.value[c];
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = (b * ch + c) * plane + p;
          if (training)
            xn.grad[i] += static_cast<Scalar>(g * inv_std[c] *
                                              (n.grad[i] - sg / count - xhat[i] * sgx / count));
          else
            xn.grad[i] += g * inv_std[c] * n.grad[i];
        }
    }
  });
}

// Mean over all elements of f(pred - target) for the elementwise losses.
namespace detail {
template <typename F, typename DF>
Var elementwise_loss(const Var& pred, const Tensor& target, const char* name, F f, DF df) {
  require_same_shape(pred.value(), target, name);
  const std::size_t n = target.numel();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += f(static_cast<double>(pred.value()[i] - target[i]));
  return Var::from_op(Tensor::scalar(static_cast<Scalar>(total / static_cast<double>(n))), {pred},
                      [target, df, n](Node& node) {
    auto& in = *node.inputs[0];
    const double g = node.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      in.grad[i] += static_cast<Scalar>(g * df(static_cast<double>(in.value[i] - target[i])));
  });
}
inline double sgn(double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); }
}  // namespace detail

inline Var l1_loss(const Var& pred, const Tensor& target) {
  return detail::elementwise_loss(pred, target, "l1_loss", [](double d) { return std::abs(d); },
                                  [](double d) { return detail::sgn(d); });
}

inline Var mse_loss(const Var& pred, const Tensor& target) {
  return detail::elementwise_loss(pred, target, "mse_loss", [](double d) { return d * d; },
                                  [](double d) { return 2.0 * d; });
}

// mean(log(1 + |pred - target|)), the DOS pre-training loss.
inline Var log_l1_loss(const Var& pred, const Tensor& target) {
  return detail::elementwise_loss(pred, target, "log_l1_loss",
                                  [](double d) { return std::log1p(std::abs(d)); },
                                  [](double d) { return detail::sgn(d) / (1.0 + std::abs(d)); });
}

}  // namespace sibcl::nn
