#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "sibcl/phc/bands.hpp"

using namespace sibcl;
using namespace sibcl::phc;

namespace {

std::size_t count_value(const PermittivityCell& c, double v) {
  return static_cast<std::size_t>(std::count(c.eps.begin(), c.eps.end(), v));
}

PermittivityCell random_cell(std::uint64_t seed, std::size_t n) {
  Rng rng = Rng::stream(seed, "test-cell");
  return gen_levelset_cell(rng, n);
}

// Pixel (i, j) moves to (n-1-j, i): a quarter turn about the cell center,
// (x, y) -> (-y, x).
PermittivityCell rotate_quarter(const PermittivityCell& c) {
  PermittivityCell r = c;
  for (std::size_t i = 0; i < c.n; ++i)
    for (std::size_t j = 0; j < c.n; ++j) r.eps[(c.n - 1 - j) * c.n + i] = c.at(i, j);
  return r;
}

PermittivityCell roll(const PermittivityCell& c, std::size_t di, std::size_t dj) {
  PermittivityCell r = c;
  for (std::size_t i = 0; i < c.n; ++i)
    for (std::size_t j = 0; j < c.n; ++j) r.eps[((i + di) % c.n) * c.n + (j + dj) % c.n] = c.at(i, j);
  return r;
}

}  // namespace

TEST(FourierField, DegenerateCoefficients) {
  FourierField f{2, 1, std::vector<std::complex<double>>(9)};
  for (double v : f.sample(8)) EXPECT_EQ(v, 0.0);
  f.coeffs[4] = 1.0;  // n = (0, 0)
  for (double v : f.sample(8)) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(FourierField, SingleModeAtPixelCenters) {
  FourierField f{2, 1, std::vector<std::complex<double>>(9)};
  f.coeffs[7] = {0.0, 1.0};  // n = (1, 0), c = i  ->  phi = -sin(2 pi x)
  const auto phi = f.sample(4);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(phi[i * 4 + 1], -std::sin(2 * std::numbers::pi * (i + 0.5) / 4), 1e-14);
}

TEST(FourierField, SeededSamplingIsBitIdentical) {
  Rng a(42), b(42);
  const auto fa = sample_fourier_field(a), fb = sample_fourier_field(b);
  EXPECT_EQ(fa.sample(32), fb.sample(32));
  for (const auto& c : fa.coeffs) {
    EXPECT_GE(std::abs(c), 0.0);
    EXPECT_LT(std::abs(c), 1.0);
    EXPECT_LT(std::arg(c), 1.0);
    EXPECT_GE(std::arg(c), 0.0);
  }
}

TEST(LevelSet, FillEndpoints) {
  Rng rng(1);
  const auto f = sample_fourier_field(rng);
  const auto empty = levelset_to_cell(f, 32, 0.0, 3.0, 7.0);
  EXPECT_EQ(count_value(empty, 7.0), 1024u);
  const auto full = levelset_to_cell(f, 32, 0.9999, 3.0, 7.0);
  EXPECT_EQ(count_value(full, 3.0), 1024u);
}

TEST(LevelSet, ConstantFieldRule) {
  FourierField f{2, 1, std::vector<std::complex<double>>(9)};
  f.coeffs[4] = 0.5;
  EXPECT_EQ(count_value(levelset_to_cell(f, 8, 0.0, 2.0, 5.0), 5.0), 64u);
  EXPECT_EQ(count_value(levelset_to_cell(f, 8, 0.3, 2.0, 5.0), 2.0), 64u);
}

TEST(LevelSet, RejectsOutOfRangePermittivity) {
  Rng rng(2);
  const auto f = sample_fourier_field(rng);
  EXPECT_THROW(levelset_to_cell(f, 8, 0.5, 0.5, 5.0), ConfigError);
  EXPECT_THROW(levelset_to_cell(f, 8, 0.5, 2.0, 21.0), ConfigError);
  EXPECT_THROW(levelset_to_cell(f, 8, 1.5, 2.0, 3.0), ConfigError);
}

// Property: two-tone cells with the requested eps1 area within half a pixel.
TEST(LevelSet, TwoToneAndFillCalibration) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng = Rng::stream(s, "prop");
    const auto f = sample_fourier_field(rng);
    const double fill = rng.uniform();
    const auto c = levelset_to_cell(f, 32, fill, 4.0, 9.0);
    std::set<double> tones(c.eps.begin(), c.eps.end());
    EXPECT_LE(tones.size(), 2u);
    const double frac = static_cast<double>(count_value(c, 4.0)) / 1024.0;
    EXPECT_LE(std::abs(frac - fill), 0.5 / 1024 + 1e-15) << "seed " << s;
  }
}

TEST(LevelSet, HalfFillCount) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng = Rng::stream(s, "half");
    const auto c = levelset_to_cell(sample_fourier_field(rng), 32, 0.5, 1.0, 2.0);
    const auto k = count_value(c, 1.0);
    EXPECT_GE(k, 480u);
    EXPECT_LE(k, 544u);
  }
}

TEST(LevelSet, FillFractionsAreUniform) {
  std::vector<double> fr;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng = Rng::stream(s, "generation");
    const auto c = gen_levelset_cell(rng, 32);
    std::set<double> tones(c.eps.begin(), c.eps.end());
    ASSERT_LE(tones.size(), 2u);
    fr.push_back(static_cast<double>(count_value(c, c.eps1)) / 1024.0);
  }
  std::sort(fr.begin(), fr.end());
  double ks = 0;
  const double n = static_cast<double>(fr.size());
  for (std::size_t i = 0; i < fr.size(); ++i)
    ks = std::max({ks, std::abs((i + 1) / n - fr[i]), std::abs(fr[i] - i / n)});
  EXPECT_LT(ks, 0.05);
}

TEST(Circle, Limits) {
  const auto tiny = gen_circle_cell(32, 1e-6, 10.0, 2.0);
  EXPECT_EQ(count_value(tiny, 2.0), 1024u);
  const auto same = gen_circle_cell(32, 0.4, 3.0, 3.0);
  EXPECT_EQ(count_value(same, 3.0), 1024u);
  const auto disk = gen_circle_cell(32, 0.5, 10.0, 2.0);
  EXPECT_NEAR(count_value(disk, 10.0) / 1024.0, std::numbers::pi / 4, 2.0 / 32);
  EXPECT_THROW(gen_circle_cell(32, 0.0, 2.0, 3.0), ConfigError);
  EXPECT_THROW(gen_circle_cell(32, -0.1, 2.0, 3.0), ConfigError);
  EXPECT_THROW(gen_circle_cell(32, 0.6, 2.0, 3.0), ConfigError);
}

TEST(Circle, RandomRadiiInRange) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto c = gen_circle_cell(rng, 16);
    std::set<double> tones(c.eps.begin(), c.eps.end());
    EXPECT_LE(tones.size(), 2u);
    EXPECT_EQ(c.kind, CellKind::circle);
  }
}

TEST(EpsFourier, UniformCellIsScaledIdentity) {
  const auto B = build_eps_fourier(uniform_cell(16, 4.0), 9);
  EXPECT_LT((B - 4.0 * CMatrix::Identity(81, 81)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(EpsFourier, DcIsMeanAndMatrixIsHermitian) {
  const auto cell = random_cell(4, 32);
  const auto B = build_eps_fourier(cell, 25);
  double mean = 0;
  for (double e : cell.eps) mean += e;
  mean /= 1024;
  EXPECT_NEAR(B(0, 0).real(), mean, 1e-12);
  EXPECT_EQ(B, B.adjoint().eval());
  EXPECT_THROW(build_eps_fourier(cell, 8), ConfigError);
}

// Oracle: integrate exp(-2 pi i m . r) exactly over each pixel and sum.
TEST(EpsFourier, CheckerboardMatchesDirectPixelIntegrals) {
  const std::size_t N = 8;
  PermittivityCell c = uniform_cell(N, 1.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) c.eps[i * N + j] = ((i / 2 + j) % 2) ? 9.0 : 2.5;
  auto seg = [&](int m, std::size_t i) -> std::complex<double> {
    const double x0 = static_cast<double>(i) / N, x1 = static_cast<double>(i + 1) / N;
    if (m == 0) return x1 - x0;
    const std::complex<double> I(0, 1);
    const double w = 2 * std::numbers::pi * m;
    return (std::exp(-I * w * x1) - std::exp(-I * w * x0)) / (-I * w);
  };
  const auto T = eps_fourier_table(c, 6);
  for (int mx = -6; mx <= 6; ++mx)
    for (int my = -6; my <= 6; ++my) {
      std::complex<double> s = 0;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) s += c.at(i, j) * seg(mx, i) * seg(my, j);
      EXPECT_LT(std::abs(T(mx + 6, my + 6) - s), 1e-12) << mx << "," << my;
    }
}

TEST(Bands, EmptyLatticeMatchesFreePhotons) {
  const TmSolver solver(uniform_cell(8, 4.0), 7);
  for (auto [kx, ky] : std::vector<std::array<double, 2>>{{0.3, -1.1}, {2.0, 0.7}, {-3.0, 3.1}}) {
    std::vector<double> expect;
    for (int a = -3; a <= 3; ++a)
      for (int b = -3; b <= 3; ++b)
        expect.push_back(0.5 * std::hypot(kx + 2 * std::numbers::pi * a, ky + 2 * std::numbers::pi * b));
    std::sort(expect.begin(), expect.end());
    const auto sol = solver.solve(kx, ky, 10);
    for (std::size_t b = 0; b < 10; ++b) {
      EXPECT_NEAR(sol.omega[b] / expect[b], 1.0, 1e-10);
      if (!sol.degenerate[b]) {
        const double speed = std::hypot(sol.velocity[b][0], sol.velocity[b][1]);
        EXPECT_NEAR(speed, 0.5, 1e-10);
      }
    }
  }
  // Zone edge (pi, 0): the first two bands meet at pi / n in angular units.
  const auto edge = solver.solve(std::numbers::pi, 0.0, 2);
  EXPECT_NEAR(edge.omega[0], std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(edge.omega[1], std::numbers::pi / 2, 1e-12);
  EXPECT_TRUE(edge.degenerate[0]);
}

TEST(Bands, EmptyLatticeVelocityDirection) {
  const TmSolver solver(uniform_cell(8, 9.0), 5);
  const auto sol = solver.solve(0.4, 0.9, 1);
  const double norm = std::hypot(0.4, 0.9);
  EXPECT_NEAR(sol.velocity[0][0], 0.4 / norm / 3.0, 1e-12);
  EXPECT_NEAR(sol.velocity[0][1], 0.9 / norm / 3.0, 1e-12);
}

TEST(Bands, GammaFirstBandIsZero) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const TmSolver solver(random_cell(s, 16), 9);
    const auto sol = solver.solve(0.0, 0.0, 3);
    EXPECT_LT(sol.omega[0], 1e-10);
    EXPECT_EQ(sol.velocity[0][0], 0.0);
    EXPECT_GT(sol.omega[1], 0.1);
  }
}

TEST(Bands, VelocityMatchesFiniteDifference) {
  const TmSolver solver(random_cell(7, 16), 9);
  const double dk = 1e-4 * 2 * std::numbers::pi;
  for (auto [kx, ky] : std::vector<std::array<double, 2>>{{0.7, -0.4}, {-2.2, 1.3}, {1.9, 2.8}}) {
    const auto s0 = solver.solve(kx, ky, 6);
    const auto sxp = solver.solve(kx + dk, ky, 6, false), sxm = solver.solve(kx - dk, ky, 6, false);
    const auto syp = solver.solve(kx, ky + dk, 6, false), sym = solver.solve(kx, ky - dk, 6, false);
    for (std::size_t b = 0; b < 6; ++b) {
      if (s0.degenerate[b]) continue;
      const double fx = (sxp.omega[b] - sxm.omega[b]) / (2 * dk);
      const double fy = (syp.omega[b] - sym.omega[b]) / (2 * dk);
      const double mag = std::max(std::hypot(fx, fy), 1e-3);
      EXPECT_LT(std::hypot(fx - s0.velocity[b][0], fy - s0.velocity[b][1]) / mag, 1e-3) << "band " << b;
    }
  }
}

TEST(Bands, PlaneWaveConvergence) {
  const auto cell = random_cell(11, 8);
  const BandParams coarse{9, 5, 6}, fine{17, 5, 6};
  const auto a = solve_tm_bands(cell, coarse, false), b = solve_tm_bands(cell, fine, false);
  for (std::size_t i = 0; i < a.omega.size(); ++i) {
    if (b.omega[i] < 1e-8) continue;
    EXPECT_LT(std::abs(a.omega[i] - b.omega[i]) / b.omega[i], 0.01) << i;
  }
}

TEST(Bands, TimeReversalCopyMatchesDirectSolve) {
  const auto cell = random_cell(12, 16);
  const BandParams p{7, 6, 4};
  const auto bs = solve_tm_bands(cell, p);
  const TmSolver solver(cell, 7);
  for (std::size_t ix = 0; ix < p.nk; ++ix)
    for (std::size_t iy = 0; iy < p.nk; ++iy) {
      const auto sol = solver.solve(bs.k[ix], bs.k[iy], 4);
      for (std::size_t b = 0; b < 4; ++b) {
        EXPECT_NEAR(bs.w(b, ix, iy), sol.omega[b], 1e-10);
        if (!sol.degenerate[b] && sol.omega[b] > 1e-8) {
          EXPECT_NEAR(bs.velocity[bs.index(b, ix, iy)][0], sol.velocity[b][0], 1e-7);
          EXPECT_NEAR(bs.velocity[bs.index(b, ix, iy)][1], sol.velocity[b][1], 1e-7);
        }
      }
    }
}

TEST(Bands, TranslationAndScalingInvariance) {
  const auto cell = random_cell(13, 16);
  const BandParams p{9, 5, 6};
  const auto ref = solve_tm_bands(cell, p);
  const auto shifted = solve_tm_bands(roll(cell, 5, 11), p);
  PermittivityCell scaled = cell;
  const double s2 = 0.37;
  for (auto& e : scaled.eps) e *= s2;
  const auto sc = solve_tm_bands(scaled, p);
  for (std::size_t i = 0; i < ref.omega.size(); ++i) {
    if (ref.omega[i] < 1e-8) continue;
    EXPECT_LT(std::abs(shifted.omega[i] / ref.omega[i] - 1), 1e-8);
    EXPECT_LT(std::abs(sc.omega[i] * std::sqrt(s2) / ref.omega[i] - 1), 1e-10);
  }
}

TEST(Bands, QuarterTurnPermutesKPoints) {
  const auto cell = random_cell(14, 16);
  const TmSolver a(cell, 9), b(rotate_quarter(cell), 9);
  for (auto [kx, ky] : std::vector<std::array<double, 2>>{{0.5, 1.2}, {-2.0, 0.3}}) {
    const auto s = a.solve(kx, ky, 6, false), r = b.solve(-ky, kx, 6, false);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s.omega[i], r.omega[i], 1e-10 * s.omega[i]);
  }
}

TEST(Bands, KGridIsHalfOpen) {
  const auto k = kgrid(25);
  EXPECT_DOUBLE_EQ(k.back(), std::numbers::pi);
  EXPECT_GT(k.front(), -std::numbers::pi);
  const auto even = kgrid(6);
  EXPECT_EQ(even[2], 0.0);
  for (std::size_t j = 0; j + 2 <= 25; ++j) EXPECT_NEAR(k[kgrid_partner(j, 25)], -k[j], 1e-14);
  EXPECT_EQ(kgrid_partner(24, 25), 25u);
}

TEST(Bands, RejectsBadRequests) {
  const auto cell = uniform_cell(8, 2.0);
  EXPECT_THROW(solve_tm_bands(cell, {3, 4, 10}), ConfigError);
  EXPECT_THROW(TmSolver(cell, 3).solve(0.1, 0.1, 0), ConfigError);
}
