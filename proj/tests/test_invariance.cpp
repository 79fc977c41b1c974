#include <gtest/gtest.h>

#include <map>
#include <set>

#include "sibcl/invariance/group.hpp"
#include "sibcl/phc/dos.hpp"

using namespace sibcl;
using namespace sibcl::inv;

namespace {

std::vector<double> random_image(std::uint64_t seed, std::size_t n, std::size_t dim) {
  Rng rng = Rng::stream(seed, "image");
  std::vector<double> x(tise::ipow(n, dim));
  for (auto& v : x) v = rng.uniform();
  return x;
}

GroupElement point_only(const PointOp& op) { return {op, {0, 0, 0}, 1.0}; }

std::size_t index_of(const std::vector<PointOp>& group, const PointOp& op) {
  for (std::size_t i = 0; i < group.size(); ++i)
    if (group[i] == op) return i;
  return group.size();
}

}  // namespace

TEST(PointGroup, OrdersAndNames) {
  const auto g2 = point_group(2);
  ASSERT_EQ(g2.size(), 8u);
  EXPECT_EQ(point_group(3).size(), 48u);
  EXPECT_TRUE(g2[0].is_identity());
  std::set<std::string> names;
  for (const auto& op : g2) names.insert(op.name());
  EXPECT_EQ(names, (std::set<std::string>{"1", "C2", "C4+", "C4-", "sigma_h", "sigma_v", "sigma_d", "sigma_d'"}));
}

// Closure, unique inverses and associativity over the full composition table.
TEST(PointGroup, CompositionTables) {
  for (std::size_t dim : {2u, 3u}) {
    const auto g = point_group(dim);
    std::vector<std::vector<std::size_t>> table(g.size(), std::vector<std::size_t>(g.size()));
    for (std::size_t a = 0; a < g.size(); ++a) {
      std::set<std::size_t> row;
      for (std::size_t b = 0; b < g.size(); ++b) {
        table[a][b] = index_of(g, g[a].compose(g[b]));
        ASSERT_LT(table[a][b], g.size());
        row.insert(table[a][b]);
      }
      EXPECT_EQ(row.size(), g.size());  // Latin square row
      EXPECT_TRUE(g[a].compose(g[a].inverse()).is_identity());
      EXPECT_TRUE(g[a].inverse().compose(g[a]).is_identity());
    }
    for (std::size_t a = 0; a < g.size(); a += 3)
      for (std::size_t b = 0; b < g.size(); b += 2)
        for (std::size_t c = 0; c < g.size(); c += 5)
          EXPECT_EQ(table[table[a][b]][c], table[a][table[b][c]]);
  }
}

TEST(PointGroup, ActionIsAHomomorphism) {
  for (std::size_t dim : {2u, 3u}) {
    const std::size_t n = dim == 2 ? 7 : 4;
    const auto x = random_image(dim, n, dim);
    const auto g = point_group(dim);
    for (std::size_t a = 0; a < g.size(); a += (dim == 2 ? 1 : 5))
      for (std::size_t b = 0; b < g.size(); b += (dim == 2 ? 1 : 7)) {
        const auto seq = apply_image(point_only(g[a]), n, apply_image(point_only(g[b]), n, x));
        EXPECT_EQ(seq, apply_image(point_only(g[a].compose(g[b])), n, x));
      }
  }
}

TEST(PointGroup, NamedOperationsActAsExpected) {
  const std::size_t n = 6;
  const auto x = random_image(1, n, 2);
  const auto c4 = point_only(point_op_by_name("C4+"));
  const auto twice = apply_image(c4, n, apply_image(c4, n, x));
  EXPECT_EQ(twice, apply_image(point_only(point_op_by_name("C2")), n, x));
  // Quarter turn (x, y) -> (-y, x) sends pixel (i, j) to (n-1-j, i).
  const auto r = apply_image(c4, n, x);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(r[(n - 1 - j) * n + i], x[i * n + j]);
  const auto d = apply_image(point_only(point_op_by_name("sigma_d")), n, x);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(d[j * n + i], x[i * n + j]);
  EXPECT_THROW(point_op_by_name("C3"), ConfigError);
}

TEST(Translation, CyclicAndAdditive) {
  const std::size_t n = 8;
  const auto x = random_image(2, n, 2);
  GroupElement id = GroupElement::identity(2);
  EXPECT_EQ(apply_image(id, n, x), x);
  GroupElement full = id;
  full.shift = {n, 0, 0};
  EXPECT_EQ(apply_image(full, n, x), x);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    GroupElement a = id, b = id, ab = id;
    for (std::size_t d = 0; d < 2; ++d) {
      a.shift[d] = rng.uniform_int(n);
      b.shift[d] = rng.uniform_int(n);
      ab.shift[d] = (a.shift[d] + b.shift[d]) % n;
    }
    EXPECT_EQ(apply_image(a, n, apply_image(b, n, x)), apply_image(ab, n, x));
    GroupElement inv = id;
    for (std::size_t d = 0; d < 2; ++d) inv.shift[d] = (n - a.shift[d]) % n;
    EXPECT_EQ(apply_image(inv, n, apply_image(a, n, x)), x);
  }
}

TEST(Apply, OrderIsTranslationThenPointThenScale) {
  const std::size_t n = 6;
  const auto x = random_image(4, n, 2);
  GroupElement g{point_op_by_name("C4+"), {2, 1, 0}, 1.5};
  GroupElement t = GroupElement::identity(2), p = t, s = t;
  t.shift = g.shift;
  p.point = g.point;
  s.scale = g.scale;
  EXPECT_EQ(apply_image(g, n, x), apply_image(s, n, apply_image(p, n, apply_image(t, n, x))));
}

TEST(Apply, CirclesAreFourMmInvariant) {
  for (std::size_t n : {16u, 17u, 32u}) {
    const auto c = phc::gen_circle_cell(n, 0.37, 9.0, 2.0);
    for (const auto& op : point_group(2)) EXPECT_EQ(apply(point_only(op), c).eps, c.eps) << op.name() << " n=" << n;
  }
}

TEST(Apply, PotentialsRejectShiftsAndScales) {
  tise::PotentialGrid pot{3, 4, tise::kBoxLength, random_image(5, 4, 3)};
  GroupElement g = GroupElement::identity(3);
  EXPECT_EQ(apply(g, pot).u, pot.u);
  g.shift = {1, 0, 0};
  EXPECT_THROW(apply(g, pot), ConfigError);
  g = GroupElement::identity(3);
  g.scale = 2;
  EXPECT_THROW(apply(g, pot), ConfigError);
  EXPECT_THROW(apply(GroupElement::identity(2), pot), ConfigError);
}

TEST(Scale, RangeArithmetic) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) EXPECT_EQ(sample_scale(rng, 1.0, 20.0), 1.0);
  double log_sum = 0;
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    const double s = sample_scale(rng, phc::uniform_cell(4, 4.0));
    EXPECT_GE(s * s, 0.25 - 1e-15);
    EXPECT_LE(s * s, 5.0 + 1e-15);
    log_sum += std::log(s * s);
  }
  // log s^2 is uniform on [log 0.25, log 5]; its mean sits at the midpoint.
  const double mid = 0.5 * (std::log(0.25) + std::log(5.0));
  const double sd = (std::log(5.0) - std::log(0.25)) / std::sqrt(12.0 * draws);
  EXPECT_NEAR(log_sum / draws, mid, 4 * sd);
}

TEST(Sampler, SampledElementsKeepCellsInRange) {
  Rng rng(7);
  const auto cfg = SamplerConfig::for_task("dos");
  for (int t = 0; t < 200; ++t) {
    const auto cell = phc::gen_levelset_cell(rng, 16);
    const auto g = sample_element(rng, cfg, InputInfo::of(cell));
    const auto out = apply(g, cell);
    std::set<double> tones(out.eps.begin(), out.eps.end());
    EXPECT_LE(tones.size(), 2u);
    for (double e : out.eps) {
      EXPECT_GE(e, phc::kEpsMin * (1 - 1e-12));
      EXPECT_LE(e, phc::kEpsMax * (1 + 1e-12));
    }
  }
}

TEST(Sampler, ZeroProbabilitiesGiveIdentity) {
  Rng rng(8);
  auto cfg = SamplerConfig::for_task("dos");
  cfg.p_translation = cfg.p_point = cfg.p_scale = 0;
  const InputInfo in{2, 32, 2.0, 9.0};
  for (int t = 0; t < 100; ++t) {
    const auto pairs = sample_pair(rng, cfg, in);
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_TRUE(pairs[0].a.is_identity());
    EXPECT_TRUE(pairs[0].b.is_identity());
  }
  const auto trivial = sample_pair(rng, SamplerConfig::trivial(), in);
  EXPECT_TRUE(trivial[0].a.is_identity() && trivial[0].b.is_identity());
}

TEST(Sampler, StochasticPointFrequencies) {
  Rng rng(9);
  SamplerConfig cfg;
  cfg.groups = {Subgroup::point};
  const InputInfo in{2, 32, 1, 1};
  std::map<std::string, int> counts;
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) ++counts[sample_element(rng, cfg, in).point.name()];
  ASSERT_EQ(counts.size(), 8u);
  const double p = 0.5 / 7, sd = std::sqrt(draws * p * (1 - p));
  for (const auto& [name, c] : counts) {
    if (name == "1") EXPECT_NEAR(c, draws * 0.5, 3 * std::sqrt(draws * 0.25));
    else EXPECT_NEAR(c, draws * p, 3 * sd) << name;
  }
}

TEST(Sampler, StandardModeNeverIdentityPerSubgroup) {
  Rng rng(10);
  auto cfg = SamplerConfig::for_task("dos");
  cfg.algorithm = Algorithm::standard;
  const InputInfo in{2, 8, 2.0, 9.0};
  for (int t = 0; t < 500; ++t) {
    const auto g = sample_element(rng, cfg, in);
    EXPECT_FALSE(g.point.is_identity());
    EXPECT_TRUE(g.has_shift());
    EXPECT_LT(g.shift[0], 8u);
    EXPECT_LT(g.shift[1], 8u);
  }
}

TEST(Sampler, IndependentModeGivesOnePairPerSubgroup) {
  Rng rng(11);
  auto cfg = SamplerConfig::for_task("dos");
  cfg.algorithm = Algorithm::independent;
  const auto pairs = sample_pair(rng, cfg, {2, 8, 2.0, 9.0});
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_TRUE(pairs[0].a.point.is_identity() && pairs[0].a.scale == 1.0 && pairs[0].a.has_shift());
  EXPECT_TRUE(!pairs[1].a.point.is_identity() && !pairs[1].a.has_shift() && pairs[1].a.scale == 1.0);
  EXPECT_TRUE(pairs[2].a.point.is_identity() && !pairs[2].a.has_shift());
}

TEST(Sampler, TaskMapAndValidation) {
  EXPECT_EQ(SamplerConfig::for_task("bands").groups, (std::vector<Subgroup>{Subgroup::translation, Subgroup::scale}));
  EXPECT_EQ(SamplerConfig::for_task("tise3d").groups, (std::vector<Subgroup>{Subgroup::point}));
  EXPECT_THROW(SamplerConfig::for_task("spin"), ConfigError);
  auto cfg = SamplerConfig::for_task("dos");
  cfg.p_point = 1.5;
  Rng rng(12);
  EXPECT_THROW(sample_element(rng, cfg, {}), ConfigError);
  EXPECT_EQ(algorithm_from_string("independent"), Algorithm::independent);
  EXPECT_THROW(algorithm_from_string("greedy"), ConfigError);
}

TEST(LabelInvariance, TiseEnergyUnderAll48Ops) {
  Rng rng = Rng::stream(0, "inv-tise");
  const auto pot = tise::gen_tise_potential(rng, 3, 7);
  const double e0 = tise::ground_state(pot).energy;
  for (const auto& op : point_group(3))
    EXPECT_NEAR(tise::ground_state(apply(point_only(op), pot)).energy, e0, 1e-8 * e0) << op.name();
}

TEST(LabelInvariance, BandsUnderTranslationAndScale) {
  Rng rng = Rng::stream(1, "inv-bands");
  const auto cell = phc::gen_levelset_cell(rng, 12);
  const phc::BandParams bp{9, 6, 6};
  const auto ref = phc::band_label(phc::solve_tm_bands(cell, bp, false), cell.n_avg());
  auto cfg = SamplerConfig::for_task("bands");
  cfg.algorithm = Algorithm::standard;
  for (int t = 0; t < 4; ++t) {
    const auto g = sample_element(rng, cfg, InputInfo::of(cell));
    const auto moved = apply(g, cell);
    const auto y = phc::band_label(phc::solve_tm_bands(moved, bp, false), moved.n_avg());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6 * std::max(ref[i], 1e-3)) << g.describe();
  }
}

TEST(LabelInvariance, DosUnderPointOps) {
  Rng rng = Rng::stream(2, "inv-dos");
  const auto cell = phc::gen_levelset_cell(rng, 10);
  phc::DosParams p;
  p.bands = {7, 8, 6};
  const auto ref = phc::dos_label(cell, p);
  for (const char* name : {"C4+", "sigma_d"}) {
    const auto y = phc::dos_label(apply(point_only(point_op_by_name(name)), cell), p);
    EXPECT_LT(phc::eval_dos_error(y.y, ref.y, p), 0.01) << name;
  }
}
