#pragma once

// Dataset generation and labeling in the container format, and the in-memory
// view the trainer consumes. Record i of a generated set depends only on
// (seed, i), so sets can be extended or regenerated piecewise.

#include <functional>
#include <string>
#include <vector>

#include "sibcl/invariance/group.hpp"
#include "sibcl/io/datastore.hpp"
#include "sibcl/phc/dos.hpp"
#include "sibcl/tise/tise.hpp"
#include "sibcl/training/tasks.hpp"

namespace sibcl::train {

using io::Dataset;
using io::DatasetHeader;

inline constexpr const char* kCells = "phc-cells";
inline constexpr const char* kDosLabels = "dos-labels";
inline constexpr const char* kBandLabels = "band-labels";
inline constexpr const char* kBandStructures = "band-structures";
inline constexpr const char* kPotentials = "tise-potentials";
inline constexpr const char* kEnergies = "tise-energies";

using Progress = std::function<void(std::size_t done, std::size_t total)>;

inline void report(const Progress& p, std::size_t done, std::size_t total) {
  if (p) p(done, total);
}

// generator: "levelset" or "circle".
inline Dataset gen_phc(std::uint64_t seed, std::size_t count, std::size_t n, const std::string& generator) {
  if (generator != "levelset" && generator != "circle") throw ConfigError("unknown cell generator '" + generator + "'");
  Dataset ds;
  ds.header = {kCells, {n, n}, 0, seed, {{"generator", generator}, {"n", n}}, {{"eps", "relative permittivity"}}};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, "gen-phc-" + generator, i);
    const auto cell = generator == "levelset" ? phc::gen_levelset_cell(rng, n) : phc::gen_circle_cell(rng, n);
    ds.push(cell.eps);
  }
  ds.header.count = count;
  return ds;
}

inline phc::PermittivityCell cell_of(const Dataset& cells, std::size_t i) {
  const std::size_t n = cells.header.shape.at(0);
  const auto r = cells.record(i);
  phc::PermittivityCell c{n, std::vector<double>(r.begin(), r.end()), 0, 0, phc::CellKind::levelset};
  const auto [lo, hi] = std::minmax_element(c.eps.begin(), c.eps.end());
  c.eps1 = *lo;
  c.eps2 = *hi;
  return c;
}

inline void require_kind(const Dataset& ds, const std::string& kind) {
  if (ds.header.kind != kind)
    throw ConfigError("expected a '" + kind + "' dataset, got '" + ds.header.kind + "'");
}

inline nlohmann::json band_params_json(const phc::BandParams& p) {
  return {{"n_pw", p.n_pw}, {"nk", p.nk}, {"nbands", p.nbands}};
}

inline Dataset compute_dos_labels(const Dataset& cells, const phc::DosParams& p, std::vector<std::string>* warnings = nullptr,
                                  const Progress& progress = {}) {
  require_kind(cells, kCells);
  Dataset out;
  out.header = {kDosLabels, {p.label_size()}, 0, cells.header.seed,
                {{"bands", band_params_json(p.bands)}, {"width", p.width}, {"n_freq", p.n_freq}, {"x_max", p.x_max},
                 {"stride", p.stride}, {"omega0", "2 pi c / (a n_avg)"}},
                {{"x", "omega / omega0"}, {"y", "omega0 * (DOS_smoothed - DOS_empty_lattice)"}}};
  for (std::size_t i = 0; i < cells.count(); ++i) {
    const auto label = phc::dos_label(cell_of(cells, i), p);
    if (warnings)
      for (const auto& w : label.warnings) warnings->push_back("record " + std::to_string(i) + ": " + w);
    out.push(label.y);
    report(progress, i + 1, cells.count());
  }
  out.header.count = cells.count();
  return out;
}

// Full band solutions: per record n_avg, the long-wave speed, then omega,
// the velocity pairs and the degeneracy flags, each [band][kx][ky].
inline Dataset solve_bands(const Dataset& cells, const phc::BandParams& p, const Progress& progress = {}) {
  require_kind(cells, kCells);
  const std::size_t m = p.nbands * p.nk * p.nk;
  Dataset out;
  out.header = {kBandStructures, {2 + 4 * m}, 0, cells.header.seed,
                {{"bands", band_params_json(p)}, {"layout", "n_avg, long_wave_speed, omega[m], velocity[m][2], degenerate[m]"}},
                {{"omega", "2 pi c / a"}, {"velocity", "c"}}};
  for (std::size_t i = 0; i < cells.count(); ++i) {
    const auto cell = cell_of(cells, i);
    const auto bs = phc::solve_tm_bands(cell, p, true);
    std::vector<double> r{cell.n_avg(), bs.long_wave_speed};
    r.insert(r.end(), bs.omega.begin(), bs.omega.end());
    for (const auto& v : bs.velocity) r.insert(r.end(), {v[0], v[1]});
    for (auto d : bs.degenerate) r.push_back(d);
    out.push(r);
    report(progress, i + 1, cells.count());
  }
  out.header.count = cells.count();
  return out;
}

inline std::pair<phc::BandStructure, double> band_structure_of(const Dataset& ds, std::size_t i) {
  require_kind(ds, kBandStructures);
  const auto& bp = ds.header.params.at("bands");
  phc::BandStructure bs;
  bs.nbands = bp.at("nbands").get<std::size_t>();
  bs.nk = bp.at("nk").get<std::size_t>();
  bs.k = phc::kgrid(bs.nk);
  const std::size_t m = bs.nbands * bs.nk * bs.nk;
  const auto r = ds.record(i);
  if (r.size() != 2 + 4 * m) throw IntegrityError("band-structure record size does not match its header");
  bs.long_wave_speed = r[1];
  bs.omega.assign(r.begin() + 2, r.begin() + 2 + static_cast<long>(m));
  for (std::size_t j = 0; j < m; ++j) bs.velocity.push_back({r[2 + m + 2 * j], r[3 + m + 2 * j]});
  for (std::size_t j = 0; j < m; ++j) bs.degenerate.push_back(r[2 + 3 * m + j] != 0.0);
  return {std::move(bs), r[0]};
}

inline Dataset dos_labels_from_bands(const Dataset& bands, phc::DosParams p, std::vector<std::string>* warnings = nullptr,
                                     const Progress& progress = {}) {
  require_kind(bands, kBandStructures);
  const auto& bp = bands.header.params.at("bands");
  p.bands = {bp.at("n_pw").get<std::size_t>(), bp.at("nk").get<std::size_t>(), bp.at("nbands").get<std::size_t>()};
  Dataset out;
  out.header = {kDosLabels, {p.label_size()}, 0, bands.header.seed,
                {{"bands", band_params_json(p.bands)}, {"width", p.width}, {"n_freq", p.n_freq}, {"x_max", p.x_max},
                 {"stride", p.stride}, {"omega0", "2 pi c / (a n_avg)"}},
                {{"x", "omega / omega0"}, {"y", "omega0 * (DOS_smoothed - DOS_empty_lattice)"}}};
  for (std::size_t i = 0; i < bands.count(); ++i) {
    const auto [bs, n_avg] = band_structure_of(bands, i);
    const auto label = phc::make_label(bs, n_avg, p);
    if (warnings)
      for (const auto& w : label.warnings) warnings->push_back("record " + std::to_string(i) + ": " + w);
    out.push(label.y);
    report(progress, i + 1, bands.count());
  }
  out.header.count = bands.count();
  return out;
}

inline Dataset band_labels_from_structures(const Dataset& bands, std::size_t count = 6) {
  require_kind(bands, kBandStructures);
  const auto& bp = bands.header.params.at("bands");
  const std::size_t nk = bp.at("nk").get<std::size_t>();
  Dataset out;
  out.header = {kBandLabels, {count, nk, nk}, 0, bands.header.seed, {{"bands", bp}},
                {{"y", "omega / omega0, omega0 = 2 pi c / (a n_avg)"}}};
  for (std::size_t i = 0; i < bands.count(); ++i) {
    const auto [bs, n_avg] = band_structure_of(bands, i);
    out.push(phc::band_label(bs, n_avg, count));
  }
  out.header.count = bands.count();
  return out;
}

inline Dataset compute_band_labels(const Dataset& cells, const phc::BandParams& p, std::size_t bands = 6,
                                   const Progress& progress = {}) {
  require_kind(cells, kCells);
  if (p.nbands < bands) throw ConfigError("band labels need at least " + std::to_string(bands) + " solved bands");
  Dataset out;
  out.header = {kBandLabels, {bands, p.nk, p.nk}, 0, cells.header.seed, {{"bands", band_params_json(p)}},
                {{"y", "omega / omega0, omega0 = 2 pi c / (a n_avg)"}}};
  for (std::size_t i = 0; i < cells.count(); ++i) {
    const auto cell = cell_of(cells, i);
    out.push(phc::band_label(phc::solve_tm_bands(cell, p, false), cell.n_avg(), bands));
    report(progress, i + 1, cells.count());
  }
  out.header.count = cells.count();
  return out;
}

// generator: "random" (level-set potentials) or "qho".
inline Dataset gen_tise(std::uint64_t seed, std::size_t count, std::size_t dim, std::size_t n, const std::string& generator) {
  if (generator != "random" && generator != "qho") throw ConfigError("unknown potential generator '" + generator + "'");
  Dataset ds;
  std::vector<std::size_t> shape(dim, n);
  ds.header = {kPotentials, shape, 0, seed,
               {{"generator", generator}, {"dim", dim}, {"n", n}, {"length", tise::kBoxLength}},
               {{"u", "Hartree"}, {"length", "Bohr"}}};
  nlohmann::json qho = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, "gen-tise-" + generator, i);
    if (generator == "random") {
      ds.push(tise::gen_tise_potential(rng, dim, n).u);
    } else {
      const auto q = tise::sample_qho(rng, dim);
      ds.push(tise::qho_potential(q, n).u);
      qho.push_back({{"omega", q.omega}, {"center", q.center}});
    }
  }
  if (generator == "qho") ds.header.params["qho"] = qho;
  ds.header.count = count;
  return ds;
}

inline tise::PotentialGrid potential_of(const Dataset& pots, std::size_t i) {
  const auto r = pots.record(i);
  return {pots.header.shape.size(), pots.header.shape.at(0), pots.header.params.value("length", tise::kBoxLength),
          std::vector<double>(r.begin(), r.end())};
}

// Ground energies at solver resolution `res`. Coarser grids come from
// multilinear downsampling, finer ones from multilinear upsampling of the
// stored grid. method "qho_analytic" reads the stored frequencies instead.
inline Dataset solve_tise(const Dataset& pots, std::size_t res, const std::string& method = "",
                          const Progress& progress = {}) {
  require_kind(pots, kPotentials);
  Dataset out;
  const std::string tag = method.empty() ? "fd_N" + std::to_string(res) : method;
  out.header = {kEnergies, {1}, 0, pots.header.seed, {{"method", tag}, {"res", res}}, {{"e0", "Hartree"}}};
  for (std::size_t i = 0; i < pots.count(); ++i) {
    double e;
    if (tag == "qho_analytic") {
      const auto& q = pots.header.params.at("qho").at(i);
      e = tise::QhoSample{q.at("omega").get<std::vector<double>>(), q.at("center").get<std::vector<double>>()}.analytic_energy();
    } else {
      auto g = potential_of(pots, i);
      if (res != g.n) g = tise::resample(g, res);
      e = tise::ground_state(g).energy;
    }
    out.push(std::vector<double>{e});
    report(progress, i + 1, pots.count());
  }
  out.header.count = pots.count();
  return out;
}

// Inputs and labels held in memory; inputs stay in physical units so the
// invariance maps act on them before normalization.
struct TaskData {
  Task task = Task::dos;
  std::size_t n = 0;           // pixels per axis
  std::size_t rank = 2;        // spatial dimensions
  std::size_t label_size = 0;  // 0 for unlabeled data
  std::vector<double> x;
  std::vector<double> y;

  std::size_t input_size() const { return tise::ipow(n, rank); }
  std::size_t count() const { return input_size() ? x.size() / input_size() : 0; }
  std::span<const double> input(std::size_t i) const { return std::span<const double>(x).subspan(i * input_size(), input_size()); }
  std::span<const double> label(std::size_t i) const { return std::span<const double>(y).subspan(i * label_size, label_size); }

  TaskData subset(const std::vector<std::size_t>& idx) const {
    TaskData s{task, n, rank, label_size, {}, {}};
    for (std::size_t i : idx) {
      if (i >= count()) throw ConfigError("subset index out of range");
      const auto in = input(i);
      s.x.insert(s.x.end(), in.begin(), in.end());
      if (label_size) {
        const auto l = label(i);
        s.y.insert(s.y.end(), l.begin(), l.end());
      }
    }
    return s;
  }

  inv::InputInfo info(std::size_t i) const {
    const auto in = input(i);
    const auto [lo, hi] = std::minmax_element(in.begin(), in.end());
    return {rank, n, *lo, *hi};
  }
};

inline TaskData make_task_data(Task t, const Dataset& inputs, const Dataset* labels = nullptr) {
  const bool phc_task = t == Task::dos || t == Task::bands;
  require_kind(inputs, phc_task ? kCells : kPotentials);
  const std::size_t rank = inputs.header.shape.size();
  if (rank != spatial_rank(t)) throw ConfigError("input dimension does not match task '" + to_string(t) + "'");
  TaskData d{t, inputs.header.shape.at(0), rank, 0, inputs.data, {}};
  if (labels) {
    const char* kind = t == Task::dos ? kDosLabels : (t == Task::bands ? kBandLabels : kEnergies);
    require_kind(*labels, kind);
    if (labels->count() != inputs.count())
      throw ConfigError("label count " + std::to_string(labels->count()) + " does not match input count " +
                        std::to_string(inputs.count()));
    d.label_size = labels->header.record_size();
    d.y = labels->data;
  }
  return d;
}

}  // namespace sibcl::train
