#pragma once

// Density of states by generalized Gilat-Raubenheimer integration, Gaussian
// smoothing and the empty-lattice-subtracted label.
//
// Frequencies are angular (c = a = 1). omega0 = 2 pi / n_avg, and the
// empty-lattice DOS is omega n_avg^2 / (2 pi), so omega0 * DOS_EL(x omega0) = 2 pi x.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sibcl/phc/bands.hpp"

namespace sibcl::phc {

// Uniform grid omega_i = start + i * step.
struct FreqGrid {
  double start = 0.0;
  double step = 1.0;
  std::size_t count = 0;

  double at(long i) const { return start + static_cast<double>(i) * step; }
};

struct DosSpectrum {
  FreqGrid grid;
  std::vector<double> dos;
  std::vector<std::string> warnings;

  double integral() const {
    double s = 0;
    for (double d : dos) s += d;
    return s * grid.step;
  }
};

// Fraction of the square [-b/2, b/2]^2 where v . dk <= s, for a velocity with
// components (vx, vy). This is the CDF of a sum of two uniforms.
inline double box_cdf(double vx, double vy, double b, double s) {
  double p = std::abs(vx) * b, r = std::abs(vy) * b;
  if (p < r) std::swap(p, r);
  const double t = s + 0.5 * (p + r);
  if (t <= 0) return 0.0;
  if (t >= p + r) return 1.0;
  if (r == 0.0) return t / p;
  if (t <= r) return t * t / (2 * p * r);
  if (t <= p) return (t - 0.5 * r) / p;
  const double u = p + r - t;
  return 1.0 - u * u / (2 * p * r);
}

// Length of the line {v . dk = s} inside the square of side b.
inline double box_chord_length(double vx, double vy, double b, double s) {
  double p = std::abs(vx) * b, r = std::abs(vy) * b;
  if (p < r) std::swap(p, r);
  const double speed = std::hypot(vx, vy);
  const double t = s + 0.5 * (p + r);
  if (p == 0.0 || t <= 0 || t >= p + r) return 0.0;
  double dfdt;
  if (r == 0.0) dfdt = 1.0 / p;
  else if (t <= r) dfdt = t / (p * r);
  else if (t <= p) dfdt = 1.0 / p;
  else dfdt = (p + r - t) / (p * r);
  return speed * b * b * dfdt;
}

// Fraction of the square [-b/2, b/2]^2 inside the disk |dk| <= radius.
inline double box_disk_fraction(double b, double radius) {
  if (radius <= 0) return 0.0;
  const double h = 0.5 * b;
  if (radius >= h * std::numbers::sqrt2) return 1.0;
  double area = std::numbers::pi * radius * radius;
  if (radius > h) area -= 4 * (radius * radius * std::acos(h / radius) - h * std::sqrt(radius * radius - h * h));
  return area / (b * b);
}

inline constexpr double kZeroVelocity = 1e-12;

// Each (band, k-box) spreads weight 1/nk^2 over the frequencies of its
// linearized band omega_c + v . dk. Bin i collects the weight with omega in
// [omega_i - step/2, omega_i + step/2), divided by step, so every box deposits
// exactly its share and each band integrates to one when the grid covers it.
// Weight that falls outside the grid is dropped and reported.
inline DosSpectrum ggr_dos(const BandStructure& bs, const FreqGrid& grid, std::size_t bands = 0) {
  if (bs.velocity.size() != bs.omega.size()) throw ConfigError("GGR integration needs group velocities");
  if (grid.count == 0 || !(grid.step > 0)) throw ConfigError("frequency grid must be non-empty and increasing");
  if (bands == 0 || bands > bs.nbands) bands = bs.nbands;
  DosSpectrum out{grid, std::vector<double>(grid.count, 0.0), {}};
  const double b = 2 * std::numbers::pi / static_cast<double>(bs.nk);
  const double box_weight = 1.0 / static_cast<double>(bs.nk * bs.nk);
  const double lo_edge = grid.start - 0.5 * grid.step;
  const double hi_edge = grid.at(static_cast<long>(grid.count) - 1) + 0.5 * grid.step;
  std::vector<double> lost(bands, 0.0);

  auto deposit = [&](std::size_t band, long i, double w) {
    if (i < 0 || i >= static_cast<long>(grid.count)) {
      lost[band] += w;
      return;
    }
    out.dos[static_cast<std::size_t>(i)] += w / grid.step;
  };

  for (std::size_t band = 0; band < bands; ++band)
    for (std::size_t ix = 0; ix < bs.nk; ++ix)
      for (std::size_t iy = 0; iy < bs.nk; ++iy) {
        const std::size_t idx = bs.index(band, ix, iy);
        const double wc = bs.omega[idx];
        const auto v = bs.velocity[idx];
        if (wc < kZeroOmega && bs.long_wave_speed > 0) {
          // Band 1 at Gamma: a cone omega = c |dk| instead of a plane.
          const double c = bs.long_wave_speed;
          const double wmax = c * 0.5 * b * std::numbers::sqrt2;
          if (lo_edge > 0) lost[band] += box_weight * box_disk_fraction(b, lo_edge / c);
          if (wmax > hi_edge) lost[band] += box_weight * (1 - box_disk_fraction(b, hi_edge / c));
          const long first = std::max(0L, static_cast<long>(std::floor(-lo_edge / grid.step)));
          const long last = std::min(static_cast<long>(grid.count) - 1, static_cast<long>(std::floor((wmax - lo_edge) / grid.step)));
          double prev = box_disk_fraction(b, (lo_edge + static_cast<double>(first) * grid.step) / c);
          for (long i = first; i <= last; ++i) {
            const double cur = box_disk_fraction(b, (lo_edge + static_cast<double>(i + 1) * grid.step) / c);
            out.dos[static_cast<std::size_t>(i)] += box_weight * (cur - prev) / grid.step;
            prev = cur;
          }
          continue;
        }
        if (std::hypot(v[0], v[1]) < kZeroVelocity) {
          // Flat box: a delta at wc, split linearly over the two nearest bins.
          const double pos = (wc - grid.start) / grid.step;
          const long i0 = static_cast<long>(std::floor(pos));
          const double f = pos - static_cast<double>(i0);
          deposit(band, i0, box_weight * (1 - f));
          deposit(band, i0 + 1, box_weight * f);
          continue;
        }
        const double half = 0.5 * b * (std::abs(v[0]) + std::abs(v[1]));
        const double wmin = wc - half, wmax = wc + half;
        if (wmin < lo_edge) lost[band] += box_weight * box_cdf(v[0], v[1], b, lo_edge - wc);
        if (wmax > hi_edge) lost[band] += box_weight * (1 - box_cdf(v[0], v[1], b, hi_edge - wc));
        long first = static_cast<long>(std::floor((wmin - lo_edge) / grid.step));
        long last = static_cast<long>(std::floor((wmax - lo_edge) / grid.step));
        first = std::max(first, 0L);
        last = std::min(last, static_cast<long>(grid.count) - 1);
        double prev = box_cdf(v[0], v[1], b, lo_edge + static_cast<double>(first) * grid.step - wc);
        for (long i = first; i <= last; ++i) {
          const double cur = box_cdf(v[0], v[1], b, lo_edge + static_cast<double>(i + 1) * grid.step - wc);
          out.dos[static_cast<std::size_t>(i)] += box_weight * (cur - prev) / grid.step;
          prev = cur;
        }
      }

  for (std::size_t band = 0; band < bands; ++band)
    if (lost[band] > 1e-12)
      out.warnings.push_back("band " + std::to_string(band + 1) + ": weight " + std::to_string(lost[band]) +
                             " outside the frequency window");
  return out;
}

// Normalized Gaussian with standard deviation `width` sampled at the grid
// step, truncated at 6 widths and renormalized to unit sum.
inline std::vector<double> gaussian_kernel(double width, double step) {
  const long half = static_cast<long>(std::ceil(6.0 * width / step));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  double total = 0;
  for (long m = -half; m <= half; ++m) {
    const double x = static_cast<double>(m) * step / width;
    k[static_cast<std::size_t>(m + half)] = std::exp(-0.5 * x * x);
    total += k[static_cast<std::size_t>(m + half)];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Discrete convolution with zero padding beyond the grid ends.
inline DosSpectrum smooth(const DosSpectrum& in, double width) {
  if (!(width > 0)) throw ConfigError("smoothing width must be positive");
  const auto k = gaussian_kernel(width, in.grid.step);
  const long half = static_cast<long>(k.size() / 2);
  const long n = static_cast<long>(in.dos.size());
  DosSpectrum out{in.grid, std::vector<double>(in.dos.size(), 0.0), in.warnings};
  for (long i = 0; i < n; ++i) {
    const double v = in.dos[static_cast<std::size_t>(i)];
    if (v == 0.0) continue;
    const long lo = std::max(-half, -i), hi = std::min(half, n - 1 - i);
    for (long m = lo; m <= hi; ++m) out.dos[static_cast<std::size_t>(i + m)] += v * k[static_cast<std::size_t>(m + half)];
  }
  return out;
}

struct DosParams {
  BandParams bands{};
  std::size_t n_freq = 16000;
  double x_max = 0.96;          // grid covers omega / omega0 in [0, x_max]
  double width = 0.006;         // Gaussian width in units of omega0
  std::size_t stride = 40;      // label decimation
  double eval_lo = 0.24;        // evaluation window in omega / omega0
  double eval_hi = 0.96;

  std::size_t label_size() const { return (n_freq + stride - 1) / stride; }
};

inline double omega0_of(double n_avg) { return 2 * std::numbers::pi / n_avg; }

// Band-structure target: omega / omega0 for the lowest `bands` bands, laid
// out band-major over the k grid.
inline std::vector<double> band_label(const BandStructure& bs, double n_avg, std::size_t bands = 6) {
  if (bands > bs.nbands) throw ConfigError("band label needs " + std::to_string(bands) + " bands");
  const double w0 = omega0_of(n_avg);
  const std::size_t per = bs.nk * bs.nk;
  std::vector<double> y(bands * per);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = bs.omega[i] / w0;
  return y;
}

inline double empty_lattice_dos(double omega, double n_avg) {
  return omega * n_avg * n_avg / (2 * std::numbers::pi);
}

// The label's x = omega / omega0 grid (every stride-th point of the fine grid).
inline std::vector<double> label_x(const DosParams& p) {
  std::vector<double> x;
  const double step = p.x_max / static_cast<double>(p.n_freq - 1);
  for (std::size_t i = 0; i < p.n_freq; i += p.stride) x.push_back(static_cast<double>(i) * step);
  return x;
}

struct DosLabel {
  std::vector<double> y;
  double n_avg = 0;
  double omega0 = 0;
  std::vector<std::string> warnings;
};

// Integrates on the fine grid padded by the smoothing support on both sides,
// smooths, crops, subtracts the empty lattice, scales by omega0 and decimates.
inline DosLabel make_label(const BandStructure& bs, double n_avg, const DosParams& p) {
  if (p.n_freq < 2 || p.stride == 0) throw ConfigError("label grid needs at least two points and a positive stride");
  const double w0 = omega0_of(n_avg);
  const double step = p.x_max * w0 / static_cast<double>(p.n_freq - 1);
  const long pad = static_cast<long>(std::ceil(6.0 * p.width * w0 / step));
  const FreqGrid ext{-static_cast<double>(pad) * step, step, p.n_freq + 2 * static_cast<std::size_t>(pad)};
  auto raw = ggr_dos(bs, ext);
  // Only the low end of band 1 and the top of the window may spill; that is expected.
  raw.warnings.clear();
  const double top = bs.omega.empty() ? 0.0 : *std::min_element(bs.omega.end() - static_cast<long>(bs.nk * bs.nk), bs.omega.end());
  DosLabel label{{}, n_avg, w0, {}};
  if (top < p.x_max * w0)
    label.warnings.push_back("band " + std::to_string(bs.nbands) + " minimum " + std::to_string(top / w0) +
                             " omega0 lies inside the window; higher bands are missing");
  const auto sm = smooth(raw, p.width * w0);
  for (std::size_t i = 0; i < p.n_freq; i += p.stride) {
    const double omega = static_cast<double>(i) * step;
    const double d = sm.dos[i + static_cast<std::size_t>(pad)];
    label.y.push_back(w0 * (d - empty_lattice_dos(omega, n_avg)));
  }
  return label;
}

inline DosLabel dos_label(const PermittivityCell& cell, const DosParams& p) {
  return make_label(solve_tm_bands(cell, p.bands), cell.n_avg(), p);
}

// sum |y_pred - y_true| / sum (y_true + 2 pi x) over the evaluation window,
// the relative L1 error of the smoothed DOS itself.
inline double eval_dos_error(std::span<const double> pred, std::span<const double> truth, const DosParams& p) {
  if (pred.size() != truth.size() || truth.size() != p.label_size())
    throw ConfigError("DOS labels must both have " + std::to_string(p.label_size()) + " points");
  const auto x = label_x(p);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < p.eval_lo - 1e-12 || x[i] > p.eval_hi + 1e-12) continue;
    num += std::abs(pred[i] - truth[i]);
    den += truth[i] + 2 * std::numbers::pi * x[i];
  }
  return num / den;
}

}  // namespace sibcl::phc
