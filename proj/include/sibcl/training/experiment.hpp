#pragma once

// Experiment configuration, data assembly and the method x N_t plan runner.
// Reports hold no timestamps or host details, so equal configs give equal
// bytes.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "sibcl/training/trainer.hpp"

namespace sibcl::train {

using nlohmann::json;

struct GenerateConfig {
  std::uint64_t seed = 0;
  std::size_t n = 32;          // input resolution
  std::size_t n_pool = 256;    // target pool to draw D_t from
  std::size_t n_test = 64;
  std::size_t n_surrogate = 512;
  std::size_t n_unlabeled = 1024;
  std::size_t label_res = 0;      // TISE target solver resolution, 0 = n
  std::size_t surrogate_res = 5;  // TISE surrogate solver resolution
};

struct PathConfig {
  std::string target, target_labels, test, test_labels, surrogate, surrogate_labels, unlabeled;
};

struct ExperimentConfig {
  Task task = Task::dos;
  std::vector<Method> methods{Method::sl};
  std::vector<std::size_t> n_t{50};
  std::size_t repeats = 3;
  std::vector<std::uint64_t> seeds{0};
  std::optional<GenerateConfig> generate;
  std::optional<PathConfig> paths;
  inv::SamplerConfig invariance;
  ArchConfig arch;
  Hyper hyper;
  std::vector<std::size_t> sibcl_checkpoints{100, 200, 400};
  std::vector<std::size_t> tl_checkpoints{40, 100, 200};
  phc::DosParams dos;
  std::string out_dir;
  bool svg = false;

  const std::vector<std::size_t>& checkpoints_for(Method m) const {
    return traits(m).contrastive ? sibcl_checkpoints : tl_checkpoints;
  }
};

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& dst) {
  if (j.contains(key)) {
    try {
      dst = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::check_keys;
  using detail::read_opt;
  check_keys(j, {"task", "methods", "n_t", "repeats", "seeds", "seed", "data", "invariance", "arch", "hyper",
                 "checkpoints", "dos", "output"},
             "config");
  ExperimentConfig c;
  if (!j.contains("task")) throw ConfigError("config needs a 'task'");
  c.task = task_from_string(j.at("task").get<std::string>());
  c.hyper = Hyper::defaults(c.task);
  if (c.task == Task::bands) c.arch.kernel = 7;
  c.invariance = inv::SamplerConfig::for_task(to_string(c.task));
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  read_opt(j, "n_t", c.n_t);
  read_opt(j, "repeats", c.repeats);
  if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
  read_opt(j, "seeds", c.seeds);
  if (!j.contains("seed") && !j.contains("seeds")) throw ConfigError("config needs 'seed' or 'seeds'");
  if (c.seeds.empty() || c.methods.empty() || c.n_t.empty() || c.repeats == 0)
    throw ConfigError("seeds, methods, n_t and repeats must be non-empty");

  if (!j.contains("data")) throw ConfigError("config needs a 'data' block");
  const auto& d = j.at("data");
  check_keys(d, {"generate", "paths"}, "data");
  if (d.contains("generate") == d.contains("paths")) throw ConfigError("data needs exactly one of 'generate' and 'paths'");
  if (d.contains("generate")) {
    const auto& g = d.at("generate");
    check_keys(g, {"seed", "n", "n_pool", "n_test", "n_surrogate", "n_unlabeled", "label_res", "surrogate_res"}, "data.generate");
    GenerateConfig gc;
    read_opt(g, "seed", gc.seed);
    read_opt(g, "n", gc.n);
    read_opt(g, "n_pool", gc.n_pool);
    read_opt(g, "n_test", gc.n_test);
    read_opt(g, "n_surrogate", gc.n_surrogate);
    read_opt(g, "n_unlabeled", gc.n_unlabeled);
    read_opt(g, "label_res", gc.label_res);
    read_opt(g, "surrogate_res", gc.surrogate_res);
    c.generate = gc;
  } else {
    const auto& p = d.at("paths");
    check_keys(p, {"target", "target_labels", "test", "test_labels", "surrogate", "surrogate_labels", "unlabeled"}, "data.paths");
    PathConfig pc;
    read_opt(p, "target", pc.target);
    read_opt(p, "target_labels", pc.target_labels);
    read_opt(p, "test", pc.test);
    read_opt(p, "test_labels", pc.test_labels);
    read_opt(p, "surrogate", pc.surrogate);
    read_opt(p, "surrogate_labels", pc.surrogate_labels);
    read_opt(p, "unlabeled", pc.unlabeled);
    for (const auto* s : {&pc.target, &pc.target_labels, &pc.test, &pc.test_labels})
      if (s->empty()) throw ConfigError("data.paths needs target, target_labels, test and test_labels");
    c.paths = pc;
  }

  if (j.contains("invariance")) {
    const auto& iv = j.at("invariance");
    check_keys(iv, {"groups", "algorithm", "p_translation", "p_point", "p_scale"}, "invariance");
    if (iv.contains("groups")) {
      c.invariance.groups.clear();
      std::vector<inv::Subgroup> want;
      for (const auto& g : iv.at("groups")) want.push_back(inv::subgroup_from_string(g.get<std::string>()));
      // Stored in the fixed application order.
      for (auto s : {inv::Subgroup::translation, inv::Subgroup::point, inv::Subgroup::scale})
        if (std::find(want.begin(), want.end(), s) != want.end()) c.invariance.groups.push_back(s);
    }
    if (iv.contains("algorithm")) c.invariance.algorithm = inv::algorithm_from_string(iv.at("algorithm").get<std::string>());
    read_opt(iv, "p_translation", c.invariance.p_translation);
    read_opt(iv, "p_point", c.invariance.p_point);
    read_opt(iv, "p_scale", c.invariance.p_scale);
    c.invariance.validate();
  }
  if (j.contains("arch")) {
    const auto& a = j.at("arch");
    check_keys(a, {"kernel", "width", "projector_hidden", "embedding"}, "arch");
    read_opt(a, "kernel", c.arch.kernel);
    read_opt(a, "width", c.arch.width);
    read_opt(a, "projector_hidden", c.arch.projector_hidden);
    read_opt(a, "embedding", c.arch.embedding);
    if (c.arch.kernel % 2 == 0 || !(c.arch.width > 0)) throw ConfigError("arch needs an odd kernel and a positive width");
  }
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    check_keys(h, {"cl_batch", "pt_batch", "ft_batch", "cl_lr", "pt_lr", "ft_lr", "temperature", "ema_decay", "ft_epochs",
                   "plateau", "contrastive", "skip_contrastive"},
               "hyper");
    read_opt(h, "cl_batch", c.hyper.cl_batch);
    read_opt(h, "pt_batch", c.hyper.pt_batch);
    read_opt(h, "ft_batch", c.hyper.ft_batch);
    read_opt(h, "cl_lr", c.hyper.cl_lr);
    read_opt(h, "pt_lr", c.hyper.pt_lr);
    read_opt(h, "ft_lr", c.hyper.ft_lr);
    read_opt(h, "temperature", c.hyper.temperature);
    read_opt(h, "ema_decay", c.hyper.ema_decay);
    read_opt(h, "ft_epochs", c.hyper.ft_epochs);
    read_opt(h, "skip_contrastive", c.hyper.skip_contrastive);
    if (h.contains("contrastive")) {
      const auto k = h.at("contrastive").get<std::string>();
      if (k != "simclr" && k != "byol") throw ConfigError("hyper.contrastive must be 'simclr' or 'byol'");
      c.hyper.contrastive = k == "byol" ? ContrastiveKind::byol : ContrastiveKind::simclr;
    }
    if (h.contains("plateau")) {
      const auto& p = h.at("plateau");
      check_keys(p, {"factor", "patience", "threshold", "min_lr"}, "hyper.plateau");
      read_opt(p, "factor", c.hyper.plateau.factor);
      read_opt(p, "patience", c.hyper.plateau.patience);
      read_opt(p, "threshold", c.hyper.plateau.threshold);
      read_opt(p, "min_lr", c.hyper.plateau.min_lr);
    }
    if (c.hyper.cl_batch < 2 || c.hyper.pt_batch < 2 || c.hyper.ft_batch < 2) throw ConfigError("batch sizes must be at least 2");
  }
  if (j.contains("checkpoints")) {
    const auto& k = j.at("checkpoints");
    check_keys(k, {"sibcl", "tl"}, "checkpoints");
    read_opt(k, "sibcl", c.sibcl_checkpoints);
    read_opt(k, "tl", c.tl_checkpoints);
    for (const auto* v : {&c.sibcl_checkpoints, &c.tl_checkpoints})
      if (v->empty() || std::find(v->begin(), v->end(), 0u) != v->end())
        throw ConfigError("checkpoint epochs must be non-empty and positive");
  }
  if (j.contains("dos")) {
    const auto& p = j.at("dos");
    check_keys(p, {"n_pw", "nk", "nbands", "n_freq", "width", "stride"}, "dos");
    read_opt(p, "n_pw", c.dos.bands.n_pw);
    read_opt(p, "nk", c.dos.bands.nk);
    read_opt(p, "nbands", c.dos.bands.nbands);
    read_opt(p, "n_freq", c.dos.n_freq);
    read_opt(p, "width", c.dos.width);
    read_opt(p, "stride", c.dos.stride);
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    check_keys(o, {"dir", "svg"}, "output");
    read_opt(o, "dir", c.out_dir);
    read_opt(o, "svg", c.svg);
  }
  return c;
}

// Normalized echo of every setting that affects results, defaults included.
// The output location is left out so reports do not depend on it.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["methods"] = json::array();
  for (Method m : c.methods) j["methods"].push_back(to_string(m));
  j["n_t"] = c.n_t;
  j["repeats"] = c.repeats;
  j["seeds"] = c.seeds;
  if (c.generate) {
    const auto& g = *c.generate;
    j["data"]["generate"] = {{"seed", g.seed},           {"n", g.n},
                             {"n_pool", g.n_pool},       {"n_test", g.n_test},
                             {"n_surrogate", g.n_surrogate}, {"n_unlabeled", g.n_unlabeled},
                             {"label_res", g.label_res}, {"surrogate_res", g.surrogate_res}};
  } else {
    const auto& p = *c.paths;
    j["data"]["paths"] = {{"target", p.target},       {"target_labels", p.target_labels},
                          {"test", p.test},           {"test_labels", p.test_labels},
                          {"surrogate", p.surrogate}, {"surrogate_labels", p.surrogate_labels},
                          {"unlabeled", p.unlabeled}};
  }
  json groups = json::array();
  for (auto g : c.invariance.groups) groups.push_back(inv::to_string(g));
  j["invariance"] = {{"groups", groups},
                     {"algorithm", inv::to_string(c.invariance.algorithm)},
                     {"p_translation", c.invariance.p_translation},
                     {"p_point", c.invariance.p_point},
                     {"p_scale", c.invariance.p_scale}};
  j["arch"] = {{"kernel", c.arch.kernel}, {"width", c.arch.width}, {"projector_hidden", c.arch.projector_hidden},
               {"embedding", c.arch.embedding}};
  const auto& h = c.hyper;
  j["hyper"] = {{"cl_batch", h.cl_batch},
                {"pt_batch", h.pt_batch},
                {"ft_batch", h.ft_batch},
                {"cl_lr", h.cl_lr},
                {"pt_lr", h.pt_lr},
                {"ft_lr", h.ft_lr},
                {"temperature", h.temperature},
                {"ema_decay", h.ema_decay},
                {"ft_epochs", h.ft_epochs},
                {"contrastive", h.contrastive == ContrastiveKind::byol ? "byol" : "simclr"},
                {"skip_contrastive", h.skip_contrastive},
                {"plateau",
                 {{"factor", h.plateau.factor},
                  {"patience", h.plateau.patience},
                  {"threshold", h.plateau.threshold},
                  {"min_lr", h.plateau.min_lr}}}};
  j["checkpoints"] = {{"sibcl", c.sibcl_checkpoints}, {"tl", c.tl_checkpoints}};
  j["dos"] = {{"n_pw", c.dos.bands.n_pw}, {"nk", c.dos.bands.nk},   {"nbands", c.dos.bands.nbands},
              {"n_freq", c.dos.n_freq},   {"width", c.dos.width}, {"stride", c.dos.stride}};
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

// Rethrows library errors with the failing stage and seed prepended, keeping
// the error family (and so the exit code).
template <class F>
auto in_stage(const std::string& stage, std::uint64_t seed, F&& f) -> decltype(f()) {
  const std::string where = "stage '" + stage + "' (seed " + std::to_string(seed) + "): ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(where + e.what());
  } catch (const IntegrityError& e) {
    throw IntegrityError(where + e.what());
  }
}

struct ExperimentData {
  TaskData pool, test, surrogate, unlabeled;
  EvalContext ctx;
  json provenance = json::object();
};

using Log = std::function<void(const std::string&)>;

namespace detail {

inline std::uint64_t sub_seed(std::uint64_t seed, const char* purpose) { return Rng::stream(seed, purpose).next_u64(); }

inline Dataset split_records(const Dataset& ds, std::size_t begin, std::size_t end) {
  Dataset out;
  out.header = ds.header;
  const std::size_t r = ds.header.record_size();
  out.data.assign(ds.data.begin() + static_cast<long>(begin * r), ds.data.begin() + static_cast<long>(end * r));
  out.header.count = end - begin;
  return out;
}

inline Dataset read_labels_for(Task t, const std::string& path) {
  Dataset ds = io::read_dataset(path);
  if (t == Task::bands && ds.header.kind == kBandStructures) return band_labels_from_structures(ds);
  return ds;
}

}  // namespace detail

// Generated sets: target cells or random potentials (pool and test from one
// stream), a surrogate set (circle cells, coarse-grid energies, or harmonic
// wells) and unlabeled target-type inputs.
inline ExperimentData generate_data(const ExperimentConfig& c, const Log& log = {}) {
  const auto& g = *c.generate;
  ExperimentData d;
  d.ctx.dos = c.dos;
  const std::uint64_t s_target = detail::sub_seed(g.seed, "data-target");
  const std::uint64_t s_sur = detail::sub_seed(g.seed, "data-surrogate");
  const std::uint64_t s_unl = detail::sub_seed(g.seed, "data-unlabeled");
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  Dataset target, target_labels, sur, sur_labels, unl;
  if (c.task == Task::dos || c.task == Task::bands) {
    target = gen_phc(s_target, g.n_pool + g.n_test, g.n, "levelset");
    sur = gen_phc(s_sur, g.n_surrogate, g.n, "circle");
    unl = gen_phc(s_unl, g.n_unlabeled, g.n, "levelset");
    if (c.task == Task::dos) {
      note("labeling " + std::to_string(target.count() + sur.count()) + " cells (DOS)");
      target_labels = compute_dos_labels(target, c.dos);
      sur_labels = compute_dos_labels(sur, c.dos);
    } else {
      note("labeling " + std::to_string(target.count() + sur.count()) + " cells (bands)");
      target_labels = compute_band_labels(target, c.dos.bands);
      sur_labels = compute_band_labels(sur, c.dos.bands);
    }
  } else {
    const std::size_t dim = spatial_rank(c.task);
    const std::size_t res = g.label_res ? g.label_res : g.n;
    target = gen_tise(s_target, g.n_pool + g.n_test, dim, g.n, "random");
    unl = gen_tise(s_unl, g.n_unlabeled, dim, g.n, "random");
    note("solving " + std::to_string(target.count()) + " target potentials at N=" + std::to_string(res));
    target_labels = solve_tise(target, res);
    if (c.task == Task::tise3d) {
      sur = gen_tise(s_sur, g.n_surrogate, dim, g.n, "random");
      note("solving " + std::to_string(sur.count()) + " surrogate potentials at N=" + std::to_string(g.surrogate_res));
      sur_labels = solve_tise(sur, g.surrogate_res);
    } else {
      sur = gen_tise(s_sur, g.n_surrogate, dim, g.n, "qho");
      sur_labels = solve_tise(sur, g.n, "qho_analytic");
    }
  }
  const auto test_in = detail::split_records(target, 0, g.n_test);
  const auto test_lab = detail::split_records(target_labels, 0, g.n_test);
  const auto pool_in = detail::split_records(target, g.n_test, target.count());
  const auto pool_lab = detail::split_records(target_labels, g.n_test, target.count());
  d.test = make_task_data(c.task, test_in, &test_lab);
  d.pool = make_task_data(c.task, pool_in, &pool_lab);
  d.surrogate = make_task_data(c.task, sur, &sur_labels);
  d.unlabeled = make_task_data(c.task, unl);
  d.provenance = {{"target_seed", s_target}, {"surrogate_seed", s_sur}, {"unlabeled_seed", s_unl},
                  {"target_label_params", target_labels.header.params}, {"surrogate_label_params", sur_labels.header.params}};
  return d;
}

inline ExperimentData read_data(const ExperimentConfig& c) {
  const auto& p = *c.paths;
  ExperimentData d;
  d.ctx.dos = c.dos;
  auto load = [&](const std::string& in, const std::string& lab) {
    const Dataset x = io::read_dataset(in);
    if (lab.empty()) return make_task_data(c.task, x);
    const Dataset y = detail::read_labels_for(c.task, lab);
    return make_task_data(c.task, x, &y);
  };
  d.pool = load(p.target, p.target_labels);
  d.test = load(p.test, p.test_labels);
  if (!p.surrogate.empty()) d.surrogate = load(p.surrogate, p.surrogate_labels);
  if (!p.unlabeled.empty()) d.unlabeled = load(p.unlabeled, "");
  if (d.test.n != d.pool.n || (d.surrogate.count() && d.surrogate.n != d.pool.n) || (d.unlabeled.count() && d.unlabeled.n != d.pool.n))
    throw ConfigError("all datasets must share one input resolution");
  if (c.task == Task::dos && d.pool.label_size != c.dos.label_size())
    throw ConfigError("DOS labels have " + std::to_string(d.pool.label_size) + " points, config expects " +
                      std::to_string(c.dos.label_size()));
  d.provenance = {{"paths", to_json(c)["data"]["paths"]}};
  return d;
}

inline ExperimentData load_data(const ExperimentConfig& c, const Log& log = {}) {
  return c.generate ? generate_data(c, log) : read_data(c);
}

inline Model make_model(const ExperimentConfig& c, const ExperimentData& d, Method m, std::uint64_t seed) {
  Rng init = Rng::stream(seed, "init");
  return build_model(c.task, d.pool.n, d.pool.label_size, c.arch, init, m == Method::sibcl_byol || (m == Method::sibcl_rt && c.hyper.contrastive == ContrastiveKind::byol));
}

// Checkpoint with enough metadata to rebuild the model.
inline nn::Checkpoint tagged_checkpoint(Model& m, const ExperimentConfig& c, const ExperimentData& d, Method method,
                                        std::size_t epoch) {
  auto ck = m.checkpoint();
  ck.meta["method"] = to_string(method);
  ck.meta["epoch"] = epoch;
  ck.meta["n"] = d.pool.n;
  ck.meta["label_size"] = d.pool.label_size;
  ck.meta["arch"] = to_json(c)["arch"];
  return ck;
}

inline Model model_from_checkpoint(const nn::Checkpoint& ck) {
  const auto& m = ck.meta;
  for (const char* k : {"task", "n", "label_size", "arch"})
    if (!m.contains(k)) throw ConfigError(std::string("checkpoint metadata lacks '") + k + "'");
  ArchConfig a;
  a.kernel = m.at("arch").at("kernel").get<std::size_t>();
  a.width = m.at("arch").at("width").get<double>();
  a.projector_hidden = m.at("arch").at("projector_hidden").get<std::size_t>();
  a.embedding = m.at("arch").at("embedding").get<std::size_t>();
  Rng init(0);
  Model model = build_model(task_from_string(m.at("task").get<std::string>()), m.at("n").get<std::size_t>(),
                            m.at("label_size").get<std::size_t>(), a, init);
  model.load(ck);
  return model;
}

struct MetricRow {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t n_t = 0;         // 0 for pre-training rows
  std::size_t checkpoint = 0;  // pre-training epoch the fine-tune started from
  std::size_t repeat = 0;
  LogRow row;
};

struct SummaryRow {
  std::string method;
  std::size_t n_t = 0;
  double mean = 0, stddev = 0;
  std::vector<double> values;  // best-checkpoint eval per (seed, repeat)
  json best_checkpoint = json::object();  // seed -> epoch
};

struct Report {
  json summary;
  std::vector<MetricRow> metrics;
  std::vector<SummaryRow> rows;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

// Indices of D_t for one repeat: a prefix of a per-repeat permutation of the
// pool, so the draws for different N_t are nested.
inline std::vector<std::size_t> draw_target(std::size_t pool, std::size_t n_t, std::uint64_t seed, std::size_t repeat) {
  if (n_t > pool) throw ConfigError("N_t=" + std::to_string(n_t) + " exceeds the target pool of " + std::to_string(pool));
  Rng rng = Rng::stream(seed, "target-draw", repeat);
  auto perm = permutation(pool, rng);
  perm.resize(n_t);
  return perm;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "method,seed,n_t,checkpoint,repeat,phase,epoch,split,loss,eval\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.seed << ',' << r.n_t << ',' << r.checkpoint << ',' << r.repeat << ',' << r.row.phase << ','
       << r.row.epoch << ',' << r.row.split << ',' << format_number(r.row.loss) << ','
       << (r.row.eval ? format_number(*r.row.eval) : "") << '\n';
  return os.str();
}

// Mean test error against N_t per method on log-log axes, with 1 sigma bars.
inline std::string summary_svg(const std::vector<SummaryRow>& rows) {
  const double w = 640, h = 420, l = 70, r = 160, t = 20, b = 50;
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : rows) {
    xlo = std::min(xlo, std::log10(static_cast<double>(s.n_t)));
    xhi = std::max(xhi, std::log10(static_cast<double>(s.n_t)));
    ylo = std::min(ylo, std::log10(std::max(1e-12, s.mean - s.stddev > 0 ? s.mean - s.stddev : s.mean / 2)));
    yhi = std::max(yhi, std::log10(std::max(1e-12, s.mean + s.stddev)));
  }
  if (xhi <= xlo) xhi = xlo + 1;
  if (yhi <= ylo) yhi = ylo + 1;
  auto X = [&](double n) { return l + (std::log10(n) - xlo) / (xhi - xlo) * (w - l - r); };
  auto Y = [&](double v) { return h - b - (std::log10(std::max(v, 1e-12)) - ylo) / (yhi - ylo) * (h - t - b); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << l << "\" y1=\"" << h - b << "\" x2=\"" << w - r << "\" y2=\"" << h - b << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << l << "\" y1=\"" << t << "\" x2=\"" << l << "\" y2=\"" << h - b << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (l + w - r) / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">N_t</text>\n";
  os << "<text x=\"15\" y=\"" << (t + h - b) / 2 << "\" transform=\"rotate(-90 15 " << (t + h - b) / 2
     << ")\" text-anchor=\"middle\">test error</text>\n";
  std::vector<std::string> methods;
  for (const auto& s : rows)
    if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const char* col = colors[mi % 8];
    std::ostringstream pts;
    for (const auto& s : rows) {
      if (s.method != methods[mi]) continue;
      const double x = X(static_cast<double>(s.n_t));
      pts << x << ',' << Y(s.mean) << ' ';
      os << "<line x1=\"" << x << "\" y1=\"" << Y(s.mean - s.stddev) << "\" x2=\"" << x << "\" y2=\"" << Y(s.mean + s.stddev)
         << "\" stroke=\"" << col << "\"/>\n";
      os << "<circle cx=\"" << x << "\" cy=\"" << Y(s.mean) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" points=\"" << pts.str() << "\"/>\n";
    os << "<text x=\"" << w - r + 10 << "\" y=\"" << t + 20 + 18 * static_cast<double>(mi) << "\" fill=\"" << col << "\">"
       << methods[mi] << "</text>\n";
  }
  std::set<std::size_t> ticks;
  for (const auto& s : rows) ticks.insert(s.n_t);
  for (std::size_t nt : ticks)
    os << "<text x=\"" << X(static_cast<double>(nt)) << "\" y=\"" << h - b + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << nt << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

// Runs every method on every seed and N_t. Pre-training happens once per
// (method, seed); each saved checkpoint is fine-tuned `repeats` times on
// distinct D_t draws and the checkpoint with the lowest mean error is kept.
inline Report run_experiment(const ExperimentConfig& c, const ExperimentData& d, const Log& log = {}) {
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  Report rep;
  struct Cell {
    std::vector<double> values;
    json best = json::object();
  };
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;  // (method index, n_t index)
  for (std::uint64_t seed : c.seeds) {
    for (std::size_t mi = 0; mi < c.methods.size(); ++mi) {
      const Method method = c.methods[mi];
      const MethodTraits tr = traits(method);
      const std::string name = to_string(method);
      Model base = in_stage("init " + name, seed, [&] { return make_model(c, d, method, seed); });
      Checkpoints ck;
      if (tr.supervised_pretrain) {
        note(name + " seed " + std::to_string(seed) + ": pre-training");
        const auto pr = in_stage("pretrain " + name, seed, [&] {
          return pretrain(base, method, d.surrogate, d.unlabeled, c.invariance, c.hyper, c.checkpoints_for(method), seed);
        });
        for (const auto& r : pr.log) rep.metrics.push_back({name, seed, 0, 0, 0, r});
        ck = pr.checkpoints;
      } else {
        ck.epochs = {0};
        ck.saved = {base.checkpoint()};
      }
      for (std::size_t ni = 0; ni < c.n_t.size(); ++ni) {
        const std::size_t n_t = c.n_t[ni];
        double best_mean = std::numeric_limits<double>::infinity();
        std::vector<double> best_vals;
        std::size_t best_epoch = 0;
        for (std::size_t ci = 0; ci < ck.saved.size(); ++ci) {
          std::vector<double> vals;
          for (std::size_t r = 0; r < c.repeats; ++r) {
            const auto res = in_stage("finetune " + name + " N_t=" + std::to_string(n_t), seed, [&] {
              const TaskData train = d.pool.subset(draw_target(d.pool.count(), n_t, seed, r));
              Model m = base.clone();
              m.load(ck.saved[ci]);
              return finetune(m, train, d.test, tr.finetune_augment, c.invariance, c.hyper, seed, r, d.ctx);
            });
            for (const auto& row : res.log) rep.metrics.push_back({name, seed, n_t, ck.epochs[ci], r, row});
            vals.push_back(res.test_eval);
          }
          const double m = mean_std(vals).first;
          note(name + " seed " + std::to_string(seed) + " N_t=" + std::to_string(n_t) + " checkpoint " +
               std::to_string(ck.epochs[ci]) + ": " + format_number(m));
          if (m < best_mean) {
            best_mean = m;
            best_vals = vals;
            best_epoch = ck.epochs[ci];
          }
        }
        auto& cell = cells[{mi, ni}];
        cell.values.insert(cell.values.end(), best_vals.begin(), best_vals.end());
        cell.best[std::to_string(seed)] = best_epoch;
      }
    }
  }
  json rows = json::array();
  for (std::size_t mi = 0; mi < c.methods.size(); ++mi)
    for (std::size_t ni = 0; ni < c.n_t.size(); ++ni) {
      const auto& cell = cells.at({mi, ni});
      const auto [m, s] = mean_std(cell.values);
      rep.rows.push_back({to_string(c.methods[mi]), c.n_t[ni], m, s, cell.values, cell.best});
      rows.push_back({{"method", to_string(c.methods[mi])},
                      {"n_t", c.n_t[ni]},
                      {"mean", m},
                      {"std", s},
                      {"values", cell.values},
                      {"best_checkpoint", cell.best}});
    }
  rep.summary = {{"config", to_json(c)},
                 {"data", d.provenance},
                 {"deviations", c.hyper.menu_deviations(c.task)},
                 {"metric", c.task == Task::dos ? "relative L1 of the smoothed DOS over the evaluation window"
                                                : (c.task == Task::bands ? "mean relative band error" : "relative energy error")},
                 {"rows", rows}};
  return rep;
}

inline void write_report(const Report& r, const std::string& dir, bool svg) {
  std::filesystem::create_directories(dir);
  io::write_file(dir + "/summary.json", r.summary.dump(2) + "\n");
  io::write_file(dir + "/metrics.csv", metrics_csv(r.metrics));
  if (svg) io::write_file(dir + "/summary.svg", summary_svg(r.rows));
}

}  // namespace sibcl::train
