#pragma once

// TM band structures by plane-wave expansion. Frequencies are angular with
// c = a = 1, so the lattice constant sets the unit of k and omega.

#include <array>
#include <complex>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "sibcl/phc/geometry.hpp"

namespace sibcl::phc {

using CMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kZeroOmega = 1e-8;
inline constexpr double kDegenerateGap = 1e-9;
inline constexpr double kProbeAngle = 0.3;  // radians; avoids lattice symmetry axes

// k_j = -pi + 2 pi (j + 1) / nk, j = 0 .. nk - 1: the half-open zone (-pi, pi].
inline std::vector<double> kgrid(std::size_t nk) {
  std::vector<double> k(nk);
  for (std::size_t j = 0; j < nk; ++j)
    k[j] = -std::numbers::pi + 2 * std::numbers::pi * (static_cast<double>(j + 1) / static_cast<double>(nk));
  return k;
}

// Index of -k_j on the same grid, or nk when -k_j falls outside (the zone edge).
inline std::size_t kgrid_partner(std::size_t j, std::size_t nk) { return j + 2 <= nk ? nk - 2 - j : nk; }

// Reciprocal vectors G = 2 pi (a - M, b - M) for a, b in [0, n_pw), M = (n_pw - 1) / 2.
struct PwBasis {
  std::size_t n_pw = 0;

  int half() const { return static_cast<int>(n_pw / 2); }
  std::size_t size() const { return n_pw * n_pw; }
  std::array<int, 2> m(std::size_t g) const {
    return {static_cast<int>(g / n_pw) - half(), static_cast<int>(g % n_pw) - half()};
  }
};

// Fourier coefficients of the piecewise-constant pixel image,
//   eps_hat(m) = integral over the cell of eps(r) exp(-2 pi i m . r),
// for |m_x|, |m_y| <= mmax, as a (2 mmax + 1)^2 table indexed [mx + mmax][my + mmax].
// Each pixel contributes its value times the pixel-center phase and
// sinc(pi m_x / N) sinc(pi m_y / N).
inline CMatrix eps_fourier_table(const PermittivityCell& cell, int mmax) {
  const std::size_t n = cell.n;
  const int side = 2 * mmax + 1;
  CMatrix P(side, static_cast<Eigen::Index>(n));
  for (int m = -mmax; m <= mmax; ++m) {
    const double x = std::numbers::pi * m / static_cast<double>(n);
    const double sinc = m == 0 ? 1.0 : std::sin(x) / x;
    for (std::size_t i = 0; i < n; ++i) {
      const double phase = -2 * std::numbers::pi * m * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      P(m + mmax, static_cast<Eigen::Index>(i)) = std::polar(sinc / static_cast<double>(n), phase);
    }
  }
  Eigen::MatrixXd E(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) E(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cell.at(i, j);
  return P * E.cast<std::complex<double>>() * P.transpose();
}

// B_{GG'} = eps_hat(G - G') over the n_pw x n_pw basis. Built from the upper
// triangle so the result is Hermitian bit for bit.
inline CMatrix build_eps_fourier(const PermittivityCell& cell, std::size_t n_pw) {
  if (n_pw % 2 == 0 || n_pw == 0) throw ConfigError("plane-wave count per axis must be odd");
  const PwBasis basis{n_pw};
  const int M = basis.half();
  const CMatrix T = eps_fourier_table(cell, 2 * M);
  const auto n = static_cast<Eigen::Index>(basis.size());
  CMatrix B(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto mi = basis.m(static_cast<std::size_t>(i));
    B(i, i) = std::complex<double>(T(2 * M, 2 * M).real(), 0.0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto mj = basis.m(static_cast<std::size_t>(j));
      B(i, j) = T(mi[0] - mj[0] + 2 * M, mi[1] - mj[1] + 2 * M);
      B(j, i) = std::conj(B(i, j));
    }
  }
  return B;
}

struct KSolution {
  std::vector<double> omega;
  std::vector<std::array<double, 2>> velocity;
  std::vector<std::uint8_t> degenerate;
};

// Solves |k+G|^2 u = omega^2 B u at arbitrary k for one cell. B is factored
// once; per k the problem becomes the standard Hermitian problem for
// C = D^{1/2} B^{-1} D^{1/2}, D = diag |k+G|^2, with the same eigenvalues.
// Eigenvectors u = B^{-1} D^{1/2} v / omega satisfy u^H B u = 1.
class TmSolver {
 public:
  TmSolver(const PermittivityCell& cell, std::size_t n_pw) : basis_{n_pw} {
    const CMatrix B = build_eps_fourier(cell, n_pw);
    Eigen::LLT<CMatrix> llt(B);
    if (llt.info() != Eigen::Success) throw NumericalError("permittivity matrix is not positive definite");
    binv_ = llt.solve(CMatrix::Identity(B.rows(), B.cols()));
    binv_ = (0.5 * (binv_ + binv_.adjoint())).eval();
  }

  const PwBasis& basis() const noexcept { return basis_; }

  KSolution solve(double kx, double ky, std::size_t nbands, bool with_velocity = true,
                  const std::string& where = "") const {
    const std::size_t n = basis_.size();
    if (nbands == 0 || nbands > n) throw ConfigError("band count must lie in [1, basis size]");
    std::vector<double> d(n);
    std::vector<std::array<double, 2>> kg(n);
    std::vector<Eigen::Index> active;
    active.reserve(n);
    for (std::size_t g = 0; g < n; ++g) {
      const auto m = basis_.m(g);
      kg[g] = {kx + 2 * std::numbers::pi * m[0], ky + 2 * std::numbers::pi * m[1]};
      d[g] = std::hypot(kg[g][0], kg[g][1]);
      if (d[g] > 1e-13) active.push_back(static_cast<Eigen::Index>(g));
    }
    // Plane waves with k+G = 0 decouple exactly and carry omega = 0.
    const std::size_t zeros = n - active.size();
    const auto na = static_cast<Eigen::Index>(active.size());
    const std::size_t want = std::min(nbands + 1, n);
    const std::size_t solve_count = want > zeros ? std::min<std::size_t>(want - zeros, active.size()) : 0;

    std::vector<double> lambda(zeros, 0.0);
    CMatrix vecs;
    if (solve_count > 0) {
      CMatrix C(na, na);
      for (Eigen::Index j = 0; j < na; ++j)
        for (Eigen::Index i = 0; i < na; ++i)
          C(i, j) = d[active[i]] * binv_(active[i], active[j]) * d[active[j]];
      std::vector<double> w(na);
      vecs.resize(na, static_cast<Eigen::Index>(solve_count));
      std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(na));
      lapack_int found = 0;
      const lapack_int info = LAPACKE_zheevr(
          LAPACK_COL_MAJOR, with_velocity ? 'V' : 'N', 'I', 'U', static_cast<lapack_int>(na), C.data(),
          static_cast<lapack_int>(na), 0.0, 0.0, 1, static_cast<lapack_int>(solve_count),
          2 * LAPACKE_dlamch('S'), &found, w.data(), vecs.data(), static_cast<lapack_int>(na), isuppz.data());
      if (info != 0 || static_cast<std::size_t>(found) != solve_count)
        throw NumericalError("eigensolver failed (info " + std::to_string(info) + ") at k-point " +
                             (where.empty() ? "(" + std::to_string(kx) + ", " + std::to_string(ky) + ")" : where));
      for (std::size_t b = 0; b < solve_count; ++b) lambda.push_back(w[b]);
    }

    KSolution out;
    out.omega.resize(nbands);
    out.velocity.assign(nbands, {0.0, 0.0});
    out.degenerate.assign(nbands, 0);
    for (std::size_t b = 0; b < nbands; ++b) out.omega[b] = std::sqrt(std::max(lambda[b], 0.0));
    for (std::size_t b = 0; b < nbands; ++b) {
      const bool below = b > 0 && out.omega[b] - out.omega[b - 1] < kDegenerateGap;
      const bool above = b + 1 < lambda.size() && std::sqrt(std::max(lambda[b + 1], 0.0)) - out.omega[b] < kDegenerateGap;
      out.degenerate[b] = below || above;
    }
    if (!with_velocity) return out;

    // Velocities from u = B^{-1} D^{1/2} v / omega. Inside a degenerate cluster
    // the eigenvectors are first rotated to diagonalize the velocity along a
    // fixed generic direction, so crossing bands keep their own slopes.
    const std::size_t have = lambda.size();
    std::vector<Eigen::VectorXcd> u(have);
    Eigen::VectorXcd y(static_cast<Eigen::Index>(n));
    for (std::size_t b = zeros; b < have; ++b) {
      const double om = std::sqrt(std::max(lambda[b], 0.0));
      if (om < kZeroOmega) continue;
      y.setZero();
      for (Eigen::Index i = 0; i < na; ++i) y(active[i]) = d[active[i]] * vecs(i, static_cast<Eigen::Index>(b - zeros));
      u[b] = binv_ * y / om;
    }
    const double dir[2] = {std::cos(kProbeAngle), std::sin(kProbeAngle)};
    for (std::size_t s = zeros; s < have;) {
      std::size_t e = s + 1;
      while (e < have && std::sqrt(std::max(lambda[e], 0.0)) - std::sqrt(std::max(lambda[e - 1], 0.0)) < kDegenerateGap) ++e;
      const std::size_t m = e - s;
      const double om = std::sqrt(std::max(lambda[s], 0.0));
      if (m > 1 && om >= kZeroOmega) {
        Eigen::MatrixXcd V(m, m);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            std::complex<double> acc = 0;
            for (std::size_t g = 0; g < n; ++g)
              acc += std::conj(u[s + i](static_cast<Eigen::Index>(g))) * u[s + j](static_cast<Eigen::Index>(g)) *
                     (dir[0] * kg[g][0] + dir[1] * kg[g][1]);
            V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc;
          }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(V);
        std::vector<Eigen::VectorXcd> rotated(m, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(n)));
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t i = 0; i < m; ++i)
            rotated[j] += es.eigenvectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * u[s + i];
        for (std::size_t j = 0; j < m; ++j) u[s + j] = std::move(rotated[j]);
      }
      s = e;
    }
    for (std::size_t b = zeros; b < nbands; ++b) {
      const double om = out.omega[b];
      if (om < kZeroOmega) continue;
      double vx = 0, vy = 0;
      for (std::size_t g = 0; g < n; ++g) {
        const double p = std::norm(u[b](static_cast<Eigen::Index>(g)));
        vx += p * kg[g][0];
        vy += p * kg[g][1];
      }
      out.velocity[b] = {vx / om, vy / om};
    }
    return out;
  }

 private:
  PwBasis basis_;
  CMatrix binv_;
};

struct BandParams {
  std::size_t n_pw = 25;
  std::size_t nk = 25;
  std::size_t nbands = 10;
};

// omega and velocity are indexed [band][kx][ky].
struct BandStructure {
  std::size_t nbands = 0;
  std::size_t nk = 0;
  std::vector<double> k;
  std::vector<double> omega;
  std::vector<std::array<double, 2>> velocity;
  std::vector<std::uint8_t> degenerate;
  double long_wave_speed = 0;  // d omega / d|k| of band 1 at Gamma, 0 if unknown

  std::size_t index(std::size_t b, std::size_t ix, std::size_t iy) const { return (b * nk + ix) * nk + iy; }
  double w(std::size_t b, std::size_t ix, std::size_t iy) const { return omega[index(b, ix, iy)]; }
  std::size_t degenerate_count() const {
    return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), std::uint8_t{1}));
  }
};

// Solves every grid point. Time reversal (eps real) gives omega(-k) = omega(k)
// and v(-k) = -v(k), so points whose partner is already solved are copied.
inline BandStructure solve_tm_bands(const PermittivityCell& cell, const BandParams& p, bool with_velocity = true) {
  if (p.nbands > p.n_pw * p.n_pw) throw ConfigError("more bands requested than plane waves");
  if (p.nk == 0) throw ConfigError("k-grid must be non-empty");
  const TmSolver solver(cell, p.n_pw);
  BandStructure bs;
  bs.nbands = p.nbands;
  bs.nk = p.nk;
  bs.k = kgrid(p.nk);
  // TM long-wavelength limit: omega = |k| / sqrt(<eps>).
  double mean_eps = 0;
  for (double e : cell.eps) mean_eps += e;
  bs.long_wave_speed = 1.0 / std::sqrt(mean_eps / static_cast<double>(cell.eps.size()));
  bs.omega.assign(p.nbands * p.nk * p.nk, 0.0);
  bs.velocity.assign(bs.omega.size(), {0.0, 0.0});
  bs.degenerate.assign(bs.omega.size(), 0);
  for (std::size_t ix = 0; ix < p.nk; ++ix)
    for (std::size_t iy = 0; iy < p.nk; ++iy) {
      const std::size_t px = kgrid_partner(ix, p.nk), py = kgrid_partner(iy, p.nk);
      const bool have_partner = px < p.nk && py < p.nk && px * p.nk + py < ix * p.nk + iy;
      if (have_partner) {
        for (std::size_t b = 0; b < p.nbands; ++b) {
          const auto src = bs.index(b, px, py), dst = bs.index(b, ix, iy);
          bs.omega[dst] = bs.omega[src];
          bs.velocity[dst] = {-bs.velocity[src][0], -bs.velocity[src][1]};
          bs.degenerate[dst] = bs.degenerate[src];
        }
        continue;
      }
      const auto sol = solver.solve(bs.k[ix], bs.k[iy], p.nbands, with_velocity,
                                    "(" + std::to_string(ix) + ", " + std::to_string(iy) + ")");
      for (std::size_t b = 0; b < p.nbands; ++b) {
        const auto dst = bs.index(b, ix, iy);
        bs.omega[dst] = sol.omega[b];
        bs.velocity[dst] = sol.velocity[b];
        bs.degenerate[dst] = sol.degenerate[b];
      }
    }
  return bs;
}

}  // namespace sibcl::phc
