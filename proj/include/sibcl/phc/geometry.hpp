#pragma once

// Two-tone unit cells on an N x N pixel grid. Pixel (i, j) is stored at
// i * N + j and has its center at ((i + 1/2) / N, (j + 1/2) / N); the first
// index runs along x.

#include <algorithm>
#include <complex>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sibcl/core/error.hpp"
#include "sibcl/core/rng.hpp"

namespace sibcl::phc {

inline constexpr double kEpsMin = 1.0;
inline constexpr double kEpsMax = 20.0;

enum class CellKind { levelset, circle, uniform };

inline const char* to_string(CellKind k) {
  switch (k) {
    case CellKind::levelset: return "levelset";
    case CellKind::circle: return "circle";
    case CellKind::uniform: return "uniform";
  }
  return "?";
}

struct PermittivityCell {
  std::size_t n = 0;
  std::vector<double> eps;
  double eps1 = 1.0;
  double eps2 = 1.0;
  CellKind kind = CellKind::uniform;

  double at(std::size_t i, std::size_t j) const { return eps[i * n + j]; }

  // Mean refractive index, the average of sqrt(eps) over pixels.
  double n_avg() const {
    double s = 0;
    for (double e : eps) s += std::sqrt(e);
    return s / static_cast<double>(eps.size());
  }
};

inline void check_eps(double e, const char* what) {
  if (!(e >= kEpsMin && e <= kEpsMax))
    throw ConfigError(std::string(what) + " = " + std::to_string(e) + " outside [1, 20]");
}

inline PermittivityCell uniform_cell(std::size_t n, double eps) {
  if (n == 0) throw ConfigError("cell resolution must be positive");
  if (!(eps > 0)) throw ConfigError("permittivity must be positive");
  return {n, std::vector<double>(n * n, eps), eps, eps, CellKind::uniform};
}

// phi(r) = Re sum_k c_k exp(2 pi i n_k . r) over integer n_k in [-order, order]^dim.
struct FourierField {
  std::size_t dim = 2;
  int order = 1;
  std::vector<std::complex<double>> coeffs;  // lexicographic in (n_1, ..., n_dim)

  std::size_t terms() const {
    std::size_t t = 1;
    for (std::size_t d = 0; d < dim; ++d) t *= static_cast<std::size_t>(2 * order + 1);
    return t;
  }

  double operator()(std::span<const double> r) const {
    const int side = 2 * order + 1;
    double phi = 0;
    for (std::size_t t = 0; t < coeffs.size(); ++t) {
      std::size_t rem = t;
      double arg = 0;
      for (std::size_t d = dim; d-- > 0;) {
        const int nd = static_cast<int>(rem % side) - order;
        rem /= side;
        arg += nd * r[d];
      }
      arg *= 2 * std::numbers::pi;
      phi += coeffs[t].real() * std::cos(arg) - coeffs[t].imag() * std::sin(arg);
    }
    return phi;
  }

  // Values at the pixel centers of an n^dim grid, row-major. The sum is
  // contracted one axis at a time with per-axis phase tables.
  std::vector<double> sample(std::size_t n) const {
    const std::size_t side = static_cast<std::size_t>(2 * order + 1);
    std::vector<std::complex<double>> phase(side * n);
    for (std::size_t a = 0; a < side; ++a)
      for (std::size_t i = 0; i < n; ++i) {
        const double nd = static_cast<double>(static_cast<int>(a) - order);
        phase[a * n + i] = std::polar(1.0, 2 * std::numbers::pi * nd * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
      }
    // cur has shape [side]*(dim - d) + [n]*d after d contractions of the trailing axes.
    std::vector<std::complex<double>> cur(coeffs.begin(), coeffs.end());
    std::size_t lead = cur.size() / side, trail = 1;
    for (std::size_t d = 0; d < dim; ++d) {
      std::vector<std::complex<double>> next(lead * n * trail);
      for (std::size_t l = 0; l < lead; ++l)
        for (std::size_t a = 0; a < side; ++a)
          for (std::size_t i = 0; i < n; ++i) {
            const auto ph = phase[a * n + i];
            const auto* src = &cur[(l * side + a) * trail];
            auto* dst = &next[(l * n + i) * trail];
            for (std::size_t t = 0; t < trail; ++t) dst[t] += src[t] * ph;
          }
      cur = std::move(next);
      trail *= n;
      if (d + 1 < dim) lead /= side;
    }
    std::vector<double> out(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) out[i] = cur[i].real();
    return out;
  }
};

// Each coefficient is r e^{i theta} with r and theta drawn (in that order)
// uniformly from [0, 1).
inline FourierField sample_fourier_field(Rng& rng, std::size_t dim = 2, int order = 1) {
  FourierField f{dim, order, {}};
  f.coeffs.resize(f.terms());
  for (auto& c : f.coeffs) {
    const double r = rng.uniform();
    const double theta = rng.uniform();
    c = std::polar(r, theta);
  }
  return f;
}

// Level Delta at the `fill` quantile of the samples: the round(fill * count)
// smallest values map to `low`, the rest to `high`. A constant field maps
// entirely to `high` when fill rounds to zero and to `low` otherwise.
inline std::vector<double> threshold_fill(const std::vector<double>& phi, double fill, double low, double high) {
  if (!(fill >= 0.0 && fill <= 1.0)) throw ConfigError("fill fraction must lie in [0, 1]");
  const std::size_t count = phi.size();
  const auto k = static_cast<std::size_t>(std::llround(fill * static_cast<double>(count)));
  std::vector<double> out(count, high);
  if (k == 0) return out;
  std::vector<double> sorted = phi;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  const double level = sorted[k - 1];
  for (std::size_t i = 0; i < count; ++i)
    if (phi[i] <= level) out[i] = low;
  return out;
}

inline PermittivityCell levelset_to_cell(const FourierField& field, std::size_t n, double fill, double eps1,
                                         double eps2) {
  check_eps(eps1, "eps1");
  check_eps(eps2, "eps2");
  if (field.dim != 2) throw ConfigError("permittivity cells need a 2D field");
  return {n, threshold_fill(field.sample(n), fill, eps1, eps2), eps1, eps2, CellKind::levelset};
}

// Draw order: field coefficients, fill, eps1, eps2.
inline PermittivityCell gen_levelset_cell(Rng& rng, std::size_t n = 32) {
  const auto field = sample_fourier_field(rng, 2, 1);
  const double fill = rng.uniform();
  const double eps1 = rng.uniform(kEpsMin, kEpsMax);
  const double eps2 = rng.uniform(kEpsMin, kEpsMax);
  return levelset_to_cell(field, n, fill, eps1, eps2);
}

inline PermittivityCell gen_circle_cell(std::size_t n, double radius, double eps_in, double eps_clad) {
  if (!(radius > 0.0)) throw ConfigError("circle radius must be positive");
  if (radius > 0.5) throw ConfigError("circle radius must not exceed half the lattice constant");
  check_eps(eps_in, "eps_in");
  check_eps(eps_clad, "eps_clad");
  PermittivityCell c{n, std::vector<double>(n * n, eps_clad), eps_in, eps_clad, CellKind::circle};
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      // Offsets in units of pixels keep the comparison exact under the 4mm ops.
      const double dx = static_cast<double>(2 * i + 1) - static_cast<double>(n);
      const double dy = static_cast<double>(2 * j + 1) - static_cast<double>(n);
      const double scale = 2.0 * static_cast<double>(n);
      if (dx * dx + dy * dy <= r2 * scale * scale) c.eps[i * n + j] = eps_in;
    }
  return c;
}

// Draw order: radius in (0, 1/2], eps_in, eps_clad.
inline PermittivityCell gen_circle_cell(Rng& rng, std::size_t n = 32) {
  const double radius = 0.5 * (1.0 - rng.uniform());
  const double eps_in = rng.uniform(kEpsMin, kEpsMax);
  const double eps_clad = rng.uniform(kEpsMin, kEpsMax);
  return gen_circle_cell(n, radius, eps_in, eps_clad);
}

}  // namespace sibcl::phc
