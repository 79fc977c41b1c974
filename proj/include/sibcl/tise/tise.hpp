#pragma once

// Single-particle ground states in a box with Dirichlet walls, in Hartree
// atomic units. A resolution-N grid has nodes at x_j = (j + 1) h,
// j = 0 .. N - 1, with h = L / (N + 1); the walls sit at 0 and L.

#include <fftw3.h>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "sibcl/phc/geometry.hpp"

namespace sibcl::tise {

inline constexpr double kBoxLength = 10.0;

struct PotentialGrid {
  std::size_t dim = 3;
  std::size_t n = 0;
  double length = kBoxLength;
  std::vector<double> u;

  double h() const { return length / static_cast<double>(n + 1); }
  std::size_t size() const { return u.size(); }
};

inline std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

inline void check_grid(const PotentialGrid& p) {
  if (p.dim < 1 || p.dim > 3) throw ConfigError("potential dimension must be 1, 2 or 3");
  if (p.n < 2) throw ConfigError("resolution must be at least 2");
  if (p.u.size() != ipow(p.n, p.dim)) throw ConfigError("potential grid has the wrong number of values");
}

// Multilinear interpolation of a row-major n^dim grid at fractional indices,
// clamped to the grid.
inline double interp_multilinear(const std::vector<double>& g, std::size_t n, std::size_t dim, const double* t) {
  std::size_t i0[3] = {0, 0, 0};
  double f[3] = {0, 0, 0};
  for (std::size_t d = 0; d < dim; ++d) {
    const double c = std::clamp(t[d], 0.0, static_cast<double>(n - 1));
    i0[d] = std::min(static_cast<std::size_t>(c), n - 2);
    f[d] = c - static_cast<double>(i0[d]);
  }
  double acc = 0;
  for (std::size_t corner = 0; corner < (1u << dim); ++corner) {
    double w = 1;
    std::size_t idx = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const std::size_t bit = (corner >> d) & 1u;
      w *= bit ? f[d] : 1 - f[d];
      idx = idx * n + i0[d] + bit;
    }
    if (w != 0) acc += w * g[idx];
  }
  return acc;
}

// Resamples onto the interior nodes of a coarser (or finer) grid by
// multilinear interpolation in physical coordinates.
inline PotentialGrid resample(const PotentialGrid& src, std::size_t target) {
  check_grid(src);
  if (target < 2) throw ConfigError("target resolution must be at least 2");
  PotentialGrid out{src.dim, target, src.length, std::vector<double>(ipow(target, src.dim))};
  const double hs = src.h(), ht = out.h();
  double t[3];
  for (std::size_t idx = 0; idx < out.u.size(); ++idx) {
    std::size_t rem = idx;
    for (std::size_t d = src.dim; d-- > 0;) {
      t[d] = static_cast<double>(rem % target + 1) * ht / hs - 1.0;
      rem /= target;
    }
    out.u[idx] = interp_multilinear(src.u, src.n, src.dim, t);
  }
  return out;
}

inline PotentialGrid downsample_potential(const PotentialGrid& src, std::size_t target) {
  if (target >= src.n) throw ConfigError("downsampling needs a coarser target resolution");
  return resample(src, target);
}

// Gaussian blur along every axis with an edge-renormalized kernel, so each
// output is a convex combination of inputs.
inline std::vector<double> blur(const std::vector<double>& g, std::size_t n, std::size_t dim, double sigma) {
  const long half = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * half + 1));
  for (long m = -half; m <= half; ++m)
    k[static_cast<std::size_t>(m + half)] = std::exp(-0.5 * (m / sigma) * (m / sigma));
  std::vector<double> cur = g, next(g.size());
  for (std::size_t axis = 0; axis < dim; ++axis) {
    const std::size_t stride = ipow(n, dim - 1 - axis);
    for (std::size_t idx = 0; idx < cur.size(); ++idx) {
      const long i = static_cast<long>((idx / stride) % n);
      double s = 0, w = 0;
      for (long m = std::max(-half, -i); m <= std::min(half, static_cast<long>(n) - 1 - i); ++m) {
        const double km = k[static_cast<std::size_t>(m + half)];
        s += km * cur[static_cast<std::size_t>(static_cast<long>(idx) + m * static_cast<long>(stride))];
        w += km;
      }
      next[idx] = s / w;
    }
    std::swap(cur, next);
  }
  return cur;
}

struct PotentialParams {
  std::size_t dim = 3;
  int order = 2;             // Fourier modes n in [-order, order]^dim
  std::size_t fine = 80;     // pixels per axis over the full periodic cell
  double crop = 0.2;         // fraction removed from each edge
  double blur_frac = 0.08;   // Gaussian sigma over the cropped length
};

// A blurred two-tone field on a fine pixel grid covering the cropped region,
// read as a continuous function of position by multilinear interpolation.
// Grids of any resolution sample the same function.
struct ContinuousPotential {
  std::size_t dim = 3;
  std::size_t m = 0;  // pixels per axis over the crop
  double length = kBoxLength;
  std::vector<double> fine;

  double operator()(const double* x) const {
    double t[3];
    for (std::size_t d = 0; d < dim; ++d) t[d] = x[d] / length * static_cast<double>(m) - 0.5;
    return interp_multilinear(fine, m, dim, t);
  }

  PotentialGrid sample(std::size_t n) const {
    PotentialGrid g{dim, n, length, std::vector<double>(ipow(n, dim))};
    const double h = g.h();
    double x[3];
    for (std::size_t idx = 0; idx < g.u.size(); ++idx) {
      std::size_t rem = idx;
      for (std::size_t d = dim; d-- > 0;) {
        x[d] = static_cast<double>(rem % n + 1) * h;
        rem /= n;
      }
      g.u[idx] = (*this)(x);
    }
    return g;
  }
};

inline ContinuousPotential potential_from_field(const phc::FourierField& field, double fill, double v,
                                                const PotentialParams& p) {
  const auto phi = field.sample(p.fine);
  const auto full = phc::threshold_fill(phi, fill, 0.0, v);
  const auto lo = static_cast<std::size_t>(std::lround(p.crop * static_cast<double>(p.fine)));
  const std::size_t m = p.fine - 2 * lo;
  if (m < 2) throw ConfigError("crop leaves fewer than two pixels per axis");
  std::vector<double> cropped(ipow(m, p.dim));
  for (std::size_t idx = 0; idx < cropped.size(); ++idx) {
    std::size_t rem = idx, src = 0;
    std::size_t coords[3];
    for (std::size_t d = p.dim; d-- > 0;) {
      coords[d] = rem % m + lo;
      rem /= m;
    }
    for (std::size_t d = 0; d < p.dim; ++d) src = src * p.fine + coords[d];
    cropped[idx] = full[src];
  }
  return {p.dim, m, kBoxLength, blur(cropped, m, p.dim, p.blur_frac * static_cast<double>(m))};
}

// Fourier-sum level set with values {0, v}: phi <= Delta gives 0. The fill
// quantile is taken over the full periodic cell before cropping.
// Draw order: Fourier coefficients, fill, v.
inline ContinuousPotential gen_tise_field(Rng& rng, const PotentialParams& p = {}) {
  const auto field = phc::sample_fourier_field(rng, p.dim, p.order);
  const double fill = rng.uniform();
  const double v = rng.uniform();
  return potential_from_field(field, fill, v, p);
}

inline PotentialGrid gen_tise_potential(Rng& rng, std::size_t dim = 3, std::size_t n = 32) {
  PotentialParams p;
  p.dim = dim;
  return gen_tise_field(rng, p).sample(n);
}

// Matrix-free H = -1/2 laplacian_h + diag(u) with Dirichlet walls.
class FdHamiltonian {
 public:
  explicit FdHamiltonian(const PotentialGrid& pot) : pot_(pot) {
    check_grid(pot_);
    inv_h2_ = 1.0 / (pot_.h() * pot_.h());
  }

  const PotentialGrid& potential() const noexcept { return pot_; }
  std::size_t size() const noexcept { return pot_.u.size(); }
  double diag(std::size_t i) const { return static_cast<double>(pot_.dim) * inv_h2_ + pot_.u[i]; }
  double offdiag() const { return -0.5 * inv_h2_; }

  void apply(const double* x, double* y) const {
    const std::size_t n = pot_.n, dim = pot_.dim, total = size();
    for (std::size_t i = 0; i < total; ++i) y[i] = diag(i) * x[i];
    const double off = offdiag();
    for (std::size_t axis = 0; axis < dim; ++axis) {
      const std::size_t stride = ipow(n, dim - 1 - axis);
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t c = (i / stride) % n;
        double s = 0;
        if (c > 0) s += x[i - stride];
        if (c + 1 < n) s += x[i + stride];
        y[i] += off * s;
      }
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y(x.size());
    apply(x.data(), y.data());
    return y;
  }

  Eigen::SparseMatrix<double> sparse() const {
    const std::size_t n = pot_.n, dim = pot_.dim, total = size();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(total * (2 * dim + 1));
    for (std::size_t i = 0; i < total; ++i) {
      t.emplace_back(static_cast<int>(i), static_cast<int>(i), diag(i));
      for (std::size_t axis = 0; axis < dim; ++axis) {
        const std::size_t stride = ipow(n, dim - 1 - axis);
        const std::size_t c = (i / stride) % n;
        if (c > 0) t.emplace_back(static_cast<int>(i), static_cast<int>(i - stride), offdiag());
        if (c + 1 < n) t.emplace_back(static_cast<int>(i), static_cast<int>(i + stride), offdiag());
      }
    }
    Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(total));
    m.setFromTriplets(t.begin(), t.end());
    return m;
  }

 private:
  PotentialGrid pot_;
  double inv_h2_ = 0;
};

inline Eigen::SparseMatrix<double> build_fd_hamiltonian(const PotentialGrid& pot) { return FdHamiltonian(pot).sparse(); }

// Ground energy of the free box: d (2 / h^2) sin^2(pi h / (2 L)).
inline double free_box_energy(std::size_t dim, std::size_t n, double length = kBoxLength) {
  const double h = length / static_cast<double>(n + 1);
  const double s = std::sin(std::numbers::pi * h / (2 * length));
  return static_cast<double>(dim) * 2.0 / (h * h) * s * s;
}

struct GroundState {
  double energy = 0;
  Eigen::VectorXd psi;  // unit norm, non-negative sum
  double residual = 0;  // ||H psi - E psi|| / ||psi||
  std::size_t iterations = 0;
  std::string method;
};

enum class Solver { automatic, dense, lanczos, lopcg };

struct SolverOptions {
  Solver solver = Solver::automatic;
  double tol = 1e-9;
  std::size_t max_iter = 3000;
  std::size_t lanczos_basis = 400;
};

namespace detail {

inline void finish(GroundState& gs, const FdHamiltonian& H) {
  gs.psi.normalize();
  if (gs.psi.sum() < 0) gs.psi = -gs.psi;
  const Eigen::VectorXd hp = H.apply(gs.psi);
  gs.energy = gs.psi.dot(hp);
  gs.residual = (hp - gs.energy * gs.psi).norm();
}

// Product of the lowest free-box modes; positive and close to most ground states.
inline Eigen::VectorXd free_start(const PotentialGrid& p) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(p.size()));
  for (std::size_t idx = 0; idx < p.size(); ++idx) {
    std::size_t rem = idx;
    double s = 1;
    for (std::size_t d = 0; d < p.dim; ++d) {
      s *= std::sin(std::numbers::pi * static_cast<double>(rem % p.n + 1) / static_cast<double>(p.n + 1));
      rem /= p.n;
    }
    v(static_cast<Eigen::Index>(idx)) = s;
  }
  return v.normalized();
}

inline GroundState dense_solve(const FdHamiltonian& H) {
  const Eigen::MatrixXd M(H.sparse());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
  GroundState gs;
  gs.psi = es.eigenvectors().col(0);
  gs.method = "dense";
  finish(gs, H);
  return gs;
}

// Lanczos with full reorthogonalization, restarted from the current Ritz
// vector when the basis is full.
inline GroundState lanczos_solve(const FdHamiltonian& H, const SolverOptions& opt) {
  const auto n = static_cast<Eigen::Index>(H.size());
  const std::size_t m = std::min<std::size_t>(opt.lanczos_basis, static_cast<std::size_t>(n));
  Eigen::MatrixXd V(n, static_cast<Eigen::Index>(m));
  Eigen::VectorXd start = free_start(H.potential());
  GroundState gs;
  gs.method = "lanczos";
  std::size_t total = 0;
  double last_res = 0;
  while (total < opt.max_iter) {
    std::vector<double> alpha, beta;
    V.col(0) = start.normalized();
    Eigen::VectorXd w(n), ritz;
    std::size_t k = 0;
    double theta = 0;
    for (; k < m && total < opt.max_iter; ++k, ++total) {
      H.apply(V.col(static_cast<Eigen::Index>(k)).data(), w.data());
      const double a = V.col(static_cast<Eigen::Index>(k)).dot(w);
      alpha.push_back(a);
      // Two passes of classical Gram-Schmidt against the whole basis.
      for (int pass = 0; pass < 2; ++pass) {
        const auto basis = V.leftCols(static_cast<Eigen::Index>(k + 1));
        w -= basis * (basis.transpose() * w);
      }
      const double b = w.norm();
      Eigen::MatrixXd T = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k + 1), static_cast<Eigen::Index>(k + 1));
      for (std::size_t i = 0; i <= k; ++i) {
        T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = alpha[i];
        if (i < k) {
          T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + 1)) = beta[i];
          T(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = beta[i];
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
      theta = es.eigenvalues()(0);
      ritz = es.eigenvectors().col(0);
      last_res = std::abs(b * ritz(static_cast<Eigen::Index>(k)));
      if (last_res < opt.tol || b < 1e-14 || k + 1 == m) {
        ++k;
        ++total;
        break;
      }
      beta.push_back(b);
      V.col(static_cast<Eigen::Index>(k + 1)) = w / b;
    }
    start = V.leftCols(static_cast<Eigen::Index>(k)) * ritz;
    gs.psi = start;
    gs.energy = theta;
    if (last_res < opt.tol) break;
  }
  gs.iterations = total;
  finish(gs, H);
  if (gs.residual > 10 * opt.tol)
    throw NumericalError("Lanczos did not converge after " + std::to_string(total) + " iterations, residual " +
                         std::to_string(gs.residual));
  return gs;
}

// (T + sigma)^{-1} for the free FD Laplacian T = -1/2 laplacian_h, applied
// with type-I discrete sine transforms (FFTW RODFT00).
class FreePreconditioner {
 public:
  FreePreconditioner(const PotentialGrid& p, double sigma) : size_(p.size()) {
    buf_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * size_)));
    std::vector<int> dims(p.dim, static_cast<int>(p.n));
    std::vector<fftw_r2r_kind> kinds(p.dim, FFTW_RODFT00);
    plan_ = fftw_plan_r2r(static_cast<int>(p.dim), dims.data(), buf_.get(), buf_.get(), kinds.data(), FFTW_ESTIMATE);
    if (!plan_) throw NumericalError("FFTW could not plan the sine transform");
    const double h = p.h();
    std::vector<double> lam1(p.n);
    for (std::size_t k = 0; k < p.n; ++k) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(p.n + 1)));
      lam1[k] = 2.0 / (h * h) * s * s;
    }
    const double norm = std::pow(2.0 * static_cast<double>(p.n + 1), static_cast<double>(p.dim));
    scale_.resize(size_);
    for (std::size_t idx = 0; idx < size_; ++idx) {
      std::size_t rem = idx;
      double lam = sigma;
      for (std::size_t d = 0; d < p.dim; ++d) {
        lam += lam1[rem % p.n];
        rem /= p.n;
      }
      scale_[idx] = 1.0 / (lam * norm);
    }
  }
  ~FreePreconditioner() { fftw_destroy_plan(plan_); }
  FreePreconditioner(const FreePreconditioner&) = delete;
  FreePreconditioner& operator=(const FreePreconditioner&) = delete;

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    std::copy(x.data(), x.data() + size_, buf_.get());
    fftw_execute(plan_);
    for (std::size_t i = 0; i < size_; ++i) buf_.get()[i] *= scale_[i];
    fftw_execute(plan_);
    y.resize(static_cast<Eigen::Index>(size_));
    std::copy(buf_.get(), buf_.get() + size_, y.data());
  }

 private:
  struct FftwFree {
    void operator()(double* p) const { fftw_free(p); }
  };
  std::size_t size_;
  std::unique_ptr<double, FftwFree> buf_;
  fftw_plan plan_ = nullptr;
  std::vector<double> scale_;
};

// Locally optimal preconditioned conjugate gradient, block size one.
inline GroundState lopcg_solve(const FdHamiltonian& H, const SolverOptions& opt) {
  const auto& pot = H.potential();
  double mean_u = 0;
  for (double u : pot.u) mean_u += u;
  mean_u /= static_cast<double>(pot.size());
  FreePreconditioner P(pot, mean_u + free_box_energy(pot.dim, pot.n, pot.length));

  const auto n = static_cast<Eigen::Index>(H.size());
  Eigen::VectorXd x = free_start(pot), hx = H.apply(x), p = Eigen::VectorXd::Zero(n), hp = p, r(n), w(n), hw(n);
  double lambda = x.dot(hx);
  GroundState gs;
  gs.method = "lopcg";
  bool have_p = false;
  std::size_t it = 0;
  for (; it < opt.max_iter; ++it) {
    r = hx - lambda * x;
    if (r.norm() < opt.tol) break;
    P.apply(r, w);
    // Orthonormalize the search block {x, w, p} before Rayleigh-Ritz.
    w -= x * x.dot(w);
    if (have_p) {
      p -= x * x.dot(p);
      const double pn = p.norm();
      if (pn > 1e-14) {
        p /= pn;
        hp = H.apply(p);
      } else {
        have_p = false;
      }
    }
    if (have_p) w -= p * p.dot(w);
    w.normalize();
    hw = H.apply(w);
    const int k = have_p ? 3 : 2;
    Eigen::MatrixXd S(n, k), HS(n, k);
    S.col(0) = x;
    S.col(1) = w;
    HS.col(0) = hx;
    HS.col(1) = hw;
    if (have_p) {
      S.col(2) = p;
      HS.col(2) = hp;
    }
    Eigen::MatrixXd G = S.transpose() * HS;
    G = (0.5 * (G + G.transpose())).eval();
    Eigen::MatrixXd M = S.transpose() * S;
    M = (0.5 * (M + M.transpose())).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(G, M);
    if (es.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz step failed in LOPCG");
    const Eigen::VectorXd c = es.eigenvectors().col(0);
    // New direction: the part of the update outside x.
    p = S.rightCols(k - 1) * c.tail(k - 1);
    hp = HS.rightCols(k - 1) * c.tail(k - 1);
    x = c(0) * x + p;
    hx = c(0) * hx + hp;
    const double xn = x.norm();
    x /= xn;
    hx /= xn;
    lambda = x.dot(hx);
    have_p = true;
  }
  gs.psi = x;
  gs.iterations = it;
  finish(gs, H);
  if (gs.residual > 10 * opt.tol)
    throw NumericalError("LOPCG did not converge after " + std::to_string(it) + " iterations, residual " +
                         std::to_string(gs.residual));
  return gs;
}

}  // namespace detail

inline GroundState ground_state(const PotentialGrid& pot, SolverOptions opt = {}) {
  const FdHamiltonian H(pot);
  Solver s = opt.solver;
  if (s == Solver::automatic) s = H.size() <= 1000 ? Solver::dense : (H.size() <= 70000 ? Solver::lanczos : Solver::lopcg);
  switch (s) {
    case Solver::dense: return detail::dense_solve(H);
    case Solver::lanczos: return detail::lanczos_solve(H, opt);
    default: return detail::lopcg_solve(H, opt);
  }
}

// Harmonic well 1/2 sum_d omega_d^2 (r_d - c_d)^2 with coordinates measured
// from the box center, so c is the offset of the well from the center.
struct QhoSample {
  std::vector<double> omega;
  std::vector<double> center;

  double analytic_energy() const {
    double s = 0;
    for (double w : omega) s += w;
    return 0.5 * s;
  }
};

inline PotentialGrid qho_potential(const QhoSample& q, std::size_t n, double length = kBoxLength) {
  const std::size_t dim = q.omega.size();
  if (dim == 0 || q.center.size() != dim) throw ConfigError("QHO needs matching frequency and center vectors");
  PotentialGrid g{dim, n, length, std::vector<double>(ipow(n, dim))};
  const double h = g.h();
  for (std::size_t idx = 0; idx < g.u.size(); ++idx) {
    std::size_t rem = idx;
    double u = 0;
    for (std::size_t d = dim; d-- > 0;) {
      const double r = static_cast<double>(rem % n + 1) * h - 0.5 * length;
      rem /= n;
      const double dr = r - q.center[d];
      u += 0.5 * q.omega[d] * q.omega[d] * dr * dr;
    }
    g.u[idx] = u;
  }
  return g;
}

struct QhoRanges {
  double omega_lo = 0.3, omega_hi = 3.2;
  double center_lo = 0.0, center_hi = 4.5;
};

// Draw order: omega per axis, then center per axis.
inline QhoSample sample_qho(Rng& rng, std::size_t dim = 2, const QhoRanges& r = {}) {
  QhoSample q;
  for (std::size_t d = 0; d < dim; ++d) q.omega.push_back(rng.uniform(r.omega_lo, r.omega_hi));
  for (std::size_t d = 0; d < dim; ++d) q.center.push_back(rng.uniform(r.center_lo, r.center_hi));
  return q;
}

}  // namespace sibcl::tise
