#pragma once

// Pixel-compatible invariance groups. Point operations are signed axis
// permutations about the cell center (the 4mm group in 2D, m-3m in 3D),
// translations are cyclic pixel shifts, and the scale acts on permittivity
// as eps -> s^2 eps (refractive index n -> s n).

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sibcl/core/error.hpp"
#include "sibcl/core/rng.hpp"
#include "sibcl/phc/geometry.hpp"
#include "sibcl/tise/tise.hpp"

namespace sibcl::inv {

// Output coordinate d equals sign[d] times input coordinate perm[d], with
// coordinates measured from the cell center.
struct PointOp {
  std::size_t dim = 2;
  std::array<std::size_t, 3> perm{0, 1, 2};
  std::array<int, 3> sign{1, 1, 1};

  static PointOp identity(std::size_t dim) { return PointOp{dim, {0, 1, 2}, {1, 1, 1}}; }

  bool is_identity() const {
    for (std::size_t d = 0; d < dim; ++d)
      if (perm[d] != d || sign[d] != 1) return false;
    return true;
  }

  bool operator==(const PointOp& o) const {
    if (dim != o.dim) return false;
    for (std::size_t d = 0; d < dim; ++d)
      if (perm[d] != o.perm[d] || sign[d] != o.sign[d]) return false;
    return true;
  }

  // (*this)(other(x)).
  PointOp compose(const PointOp& other) const {
    if (dim != other.dim) throw ConfigError("cannot compose point operations of different dimension");
    PointOp r{dim, {0, 1, 2}, {1, 1, 1}};
    for (std::size_t d = 0; d < dim; ++d) {
      r.perm[d] = other.perm[perm[d]];
      r.sign[d] = sign[d] * other.sign[perm[d]];
    }
    return r;
  }

  PointOp inverse() const {
    PointOp r{dim, {0, 1, 2}, {1, 1, 1}};
    for (std::size_t d = 0; d < dim; ++d) {
      r.perm[perm[d]] = d;
      r.sign[perm[d]] = sign[d];
    }
    return r;
  }

  std::string name() const {
    static const char* axes = "xyz";
    std::string s = "(";
    for (std::size_t d = 0; d < dim; ++d) {
      if (d) s += ",";
      if (sign[d] < 0) s += "-";
      s += axes[perm[d]];
    }
    s += ")";
    if (dim == 2) {
      static const std::pair<const char*, const char*> names[] = {
          {"(x,y)", "1"},       {"(-x,-y)", "C2"}, {"(-y,x)", "C4+"}, {"(y,-x)", "C4-"},
          {"(x,-y)", "sigma_h"}, {"(-x,y)", "sigma_v"}, {"(y,x)", "sigma_d"}, {"(-y,-x)", "sigma_d'"}};
      for (const auto& [formula, label] : names)
        if (s == formula) return label;
    }
    return s;
  }
};

// All signed permutations of `dim` axes, identity first: 8 in 2D, 48 in 3D.
inline std::vector<PointOp> point_group(std::size_t dim) {
  if (dim < 1 || dim > 3) throw ConfigError("point groups are defined for 1 to 3 dimensions");
  std::array<std::size_t, 3> p{0, 1, 2};
  std::vector<PointOp> ops;
  do {
    for (unsigned mask = 0; mask < (1u << dim); ++mask) {
      PointOp op{dim, {0, 1, 2}, {1, 1, 1}};
      for (std::size_t d = 0; d < dim; ++d) {
        op.perm[d] = p[d];
        op.sign[d] = (mask >> d) & 1u ? -1 : 1;
      }
      ops.push_back(op);
    }
  } while (std::next_permutation(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(dim)));
  return ops;
}

inline PointOp point_op_by_name(const std::string& name) {
  for (const auto& op : point_group(2))
    if (op.name() == name) return op;
  throw ConfigError("unknown point operation '" + name + "'");
}

struct GroupElement {
  PointOp point;
  std::array<std::size_t, 3> shift{0, 0, 0};  // pixels per axis
  double scale = 1.0;

  static GroupElement identity(std::size_t dim) { return {PointOp::identity(dim), {0, 0, 0}, 1.0}; }

  bool has_shift() const { return shift[0] || shift[1] || shift[2]; }
  bool is_identity() const { return point.is_identity() && !has_shift() && scale == 1.0; }

  std::string describe() const {
    std::string s = "t=(";
    for (std::size_t d = 0; d < point.dim; ++d) s += (d ? "," : "") + std::to_string(shift[d]);
    return s + ") g=" + point.name() + " s=" + std::to_string(scale);
  }
};

// Applies translation, then the point operation, then the scale to a
// row-major n^dim image.
inline std::vector<double> apply_image(const GroupElement& g, std::size_t n, std::span<const double> x) {
  const std::size_t dim = g.point.dim;
  if (x.size() != tise::ipow(n, dim)) throw ConfigError("image size does not match the group dimension");
  const double s2 = g.scale * g.scale;
  std::vector<double> out(x.size());
  std::array<std::size_t, 3> c{}, t{};
  for (std::size_t idx = 0; idx < x.size(); ++idx) {
    std::size_t rem = idx;
    for (std::size_t d = dim; d-- > 0;) {
      c[d] = (rem % n + g.shift[d] % n) % n;
      rem /= n;
    }
    // Centered coordinates 2c - (n - 1) stay integral under signed permutations.
    std::size_t o = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const long xc = 2 * static_cast<long>(c[g.point.perm[d]]) - static_cast<long>(n - 1);
      t[d] = static_cast<std::size_t>((g.point.sign[d] * xc + static_cast<long>(n - 1)) / 2);
      o = o * n + t[d];
    }
    out[o] = g.scale == 1.0 ? x[idx] : s2 * x[idx];
  }
  return out;
}

inline phc::PermittivityCell apply(const GroupElement& g, const phc::PermittivityCell& cell) {
  if (g.point.dim != 2) throw ConfigError("permittivity cells take 2D group elements");
  phc::PermittivityCell out = cell;
  out.eps = apply_image(g, cell.n, cell.eps);
  const double s2 = g.scale * g.scale;
  out.eps1 *= s2;
  out.eps2 *= s2;
  return out;
}

// Potentials sit in a hard-walled box: only point operations apply.
inline tise::PotentialGrid apply(const GroupElement& g, const tise::PotentialGrid& pot) {
  if (g.has_shift() || g.scale != 1.0) throw ConfigError("potentials admit point operations only");
  if (g.point.dim != pot.dim) throw ConfigError("group element dimension does not match the potential");
  tise::PotentialGrid out = pot;
  out.u = apply_image(g, pot.n, pot.u);
  return out;
}

enum class Subgroup { translation, point, scale };

inline std::string to_string(Subgroup s) {
  switch (s) {
    case Subgroup::translation: return "translation";
    case Subgroup::point: return "point";
    default: return "scale";
  }
}

inline Subgroup subgroup_from_string(const std::string& s) {
  if (s == "translation" || s == "t") return Subgroup::translation;
  if (s == "point" || s == "0") return Subgroup::point;
  if (s == "scale" || s == "s") return Subgroup::scale;
  throw ConfigError("unknown invariance subgroup '" + s + "'");
}

enum class Algorithm { standard, independent, stochastic };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::standard: return "standard";
    case Algorithm::independent: return "independent";
    default: return "stochastic";
  }
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "standard") return Algorithm::standard;
  if (s == "independent") return Algorithm::independent;
  if (s == "stochastic") return Algorithm::stochastic;
  throw ConfigError("unknown invariance algorithm '" + s + "'");
}

struct SamplerConfig {
  std::vector<Subgroup> groups;  // applied in the fixed order translation, point, scale
  double p_translation = 0.5, p_point = 0.5, p_scale = 0.5;
  Algorithm algorithm = Algorithm::stochastic;

  bool enabled(Subgroup s) const { return std::find(groups.begin(), groups.end(), s) != groups.end(); }

  double p(Subgroup s) const {
    switch (s) {
      case Subgroup::translation: return p_translation;
      case Subgroup::point: return p_point;
      default: return p_scale;
    }
  }

  void validate() const {
    for (double v : {p_translation, p_point, p_scale})
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("invariance probabilities must lie in [0, 1]");
  }

  // Task to subgroup map: DOS uses all three, bands drop the point group
  // (band labels along fixed k paths are not point invariant), TISE uses
  // only point operations.
  static SamplerConfig for_task(const std::string& task) {
    SamplerConfig c;
    if (task == "dos") c.groups = {Subgroup::translation, Subgroup::point, Subgroup::scale};
    else if (task == "bands") c.groups = {Subgroup::translation, Subgroup::scale};
    else if (task == "tise3d" || task == "tise2d-qho") c.groups = {Subgroup::point};
    else throw ConfigError("unknown task '" + task + "'");
    return c;
  }

  static SamplerConfig trivial() { return {}; }
};

// What the sampler needs to know about one input.
struct InputInfo {
  std::size_t dim = 2;
  std::size_t n = 32;
  double value_min = 1.0, value_max = 1.0;  // eps range of the cell, for the scale bound

  static InputInfo of(const phc::PermittivityCell& c) {
    const auto [lo, hi] = std::minmax_element(c.eps.begin(), c.eps.end());
    return {2, c.n, *lo, *hi};
  }
  static InputInfo of(const tise::PotentialGrid& p) { return {p.dim, p.n, 0.0, 0.0}; }
};

// s^2 log-uniform in [eps_lo / eps_min, eps_hi / eps_max] keeps the scaled
// cell inside the permittivity range.
inline double sample_scale(Rng& rng, double eps_min, double eps_max, double eps_lo = phc::kEpsMin,
                           double eps_hi = phc::kEpsMax) {
  if (!(eps_min > 0.0) || eps_max < eps_min) throw ConfigError("scale sampling needs 0 < eps_min <= eps_max");
  const double lo = std::log(eps_lo / eps_min), hi = std::log(eps_hi / eps_max);
  if (hi < lo) throw ConfigError("cell permittivities leave no admissible scale");
  const double u = rng.uniform();
  return hi > lo ? std::exp(0.5 * (lo + u * (hi - lo))) : std::exp(0.5 * lo);
}

inline double sample_scale(Rng& rng, const phc::PermittivityCell& c) {
  const auto info = InputInfo::of(c);
  return sample_scale(rng, info.value_min, info.value_max);
}

namespace detail {

// A uniformly drawn non-identity element of one subgroup, written into g.
inline void draw_nontrivial(Rng& rng, Subgroup s, const InputInfo& in, GroupElement& g) {
  switch (s) {
    case Subgroup::translation: {
      if (in.n < 2) return;
      const std::size_t total = tise::ipow(in.n, in.dim);
      std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(total - 1));
      for (std::size_t d = in.dim; d-- > 0;) {
        g.shift[d] = k % in.n;
        k /= in.n;
      }
      return;
    }
    case Subgroup::point: {
      static thread_local std::vector<PointOp> cache[4];
      auto& ops = cache[in.dim];
      if (ops.empty()) ops = point_group(in.dim);
      g.point = ops[1 + static_cast<std::size_t>(rng.uniform_int(ops.size() - 1))];
      return;
    }
    default:
      g.scale = sample_scale(rng, in.value_min, in.value_max);
  }
}

}  // namespace detail

// One element: per enabled subgroup, in the order translation, point,
// scale, a non-identity element with probability p (1 in standard mode),
// else the identity. Draw order per subgroup: Bernoulli, then the element.
inline GroupElement sample_element(Rng& rng, const SamplerConfig& cfg, const InputInfo& in) {
  cfg.validate();
  GroupElement g = GroupElement::identity(in.dim);
  for (Subgroup s : {Subgroup::translation, Subgroup::point, Subgroup::scale}) {
    if (!cfg.enabled(s)) continue;
    const double p = cfg.algorithm == Algorithm::stochastic ? cfg.p(s) : 1.0;
    if (p >= 1.0 || rng.bernoulli(p)) detail::draw_nontrivial(rng, s, in, g);
  }
  return g;
}

struct PositivePair {
  GroupElement a, b;
};

// Standard and stochastic modes give one pair; independent mode gives one
// pair per enabled subgroup, each differing only within that subgroup.
inline std::vector<PositivePair> sample_pair(Rng& rng, const SamplerConfig& cfg, const InputInfo& in) {
  cfg.validate();
  if (cfg.algorithm != Algorithm::independent) {
    GroupElement a = sample_element(rng, cfg, in);
    GroupElement b = sample_element(rng, cfg, in);
    return {{a, b}};
  }
  std::vector<PositivePair> pairs;
  for (Subgroup s : {Subgroup::translation, Subgroup::point, Subgroup::scale}) {
    if (!cfg.enabled(s)) continue;
    PositivePair pr{GroupElement::identity(in.dim), GroupElement::identity(in.dim)};
    detail::draw_nontrivial(rng, s, in, pr.a);
    detail::draw_nontrivial(rng, s, in, pr.b);
    pairs.push_back(pr);
  }
  if (pairs.empty()) pairs.push_back({GroupElement::identity(in.dim), GroupElement::identity(in.dim)});
  return pairs;
}

}  // namespace sibcl::inv
