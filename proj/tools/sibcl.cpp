// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 3 numerical failure, 4 integrity error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sibcl/sibcl.hpp"

using namespace sibcl;
using namespace sibcl::train;

namespace {

void progress_line(const std::string& what, std::size_t done, std::size_t total) {
  if (done == total || done % 50 == 0) std::cerr << what << ": " << done << "/" << total << "\n";
}

Log stderr_log() {
  return [](const std::string& m) { std::cerr << m << "\n"; };
}

ExperimentConfig config_with_overrides(const std::string& path, const std::optional<std::uint64_t>& seed,
                                       const std::string& out) {
  auto c = load_config(path);
  if (seed) c.seeds = {*seed};
  if (!out.empty()) c.out_dir = out;
  return c;
}

std::string require_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required (here or as output.dir in the config)");
  std::filesystem::create_directories(out);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pre-training workbench for photonic-crystal and Schrodinger-equation regression"};
  app.require_subcommand(1);

  std::string out, config, in_path, kind, method_name, checkpoint, labels_path, bands_path, cells_path, solver;
  std::optional<std::uint64_t> seed;
  std::uint64_t gen_seed = 0;
  std::size_t count = 0, n = 32, dim = 3, npw = 25, nk = 25, nbands = 10, res = 32, label_bands = 0, repeats = 3;
  std::vector<std::size_t> n_t;
  bool svg = false;
  phc::DosParams dos;

  auto* gen_phc_cmd = app.add_subcommand("gen-phc", "Generate unit cells");
  gen_phc_cmd->add_option("--kind", kind, "levelset or circle")->required()->check(CLI::IsMember({"levelset", "circle"}));
  gen_phc_cmd->add_option("--count", count)->required();
  gen_phc_cmd->add_option("--seed", gen_seed)->required();
  gen_phc_cmd->add_option("--n", n, "pixels per side")->capture_default_str();
  gen_phc_cmd->add_option("--out", out)->required();

  auto* gen_tise_cmd = app.add_subcommand("gen-tise", "Generate potentials");
  gen_tise_cmd->add_option("--kind", kind, "random or qho")->required()->check(CLI::IsMember({"random", "qho"}));
  gen_tise_cmd->add_option("--count", count)->required();
  gen_tise_cmd->add_option("--seed", gen_seed)->required();
  gen_tise_cmd->add_option("--dim", dim)->capture_default_str()->check(CLI::Range(1, 3));
  gen_tise_cmd->add_option("--n", n, "grid points per axis")->capture_default_str();
  gen_tise_cmd->add_option("--out", out)->required();

  auto* bands_cmd = app.add_subcommand("solve-bands", "Solve TM band structures of a cell set");
  bands_cmd->add_option("--in", in_path)->required();
  bands_cmd->add_option("--npw", npw)->capture_default_str();
  bands_cmd->add_option("--nk", nk)->capture_default_str();
  bands_cmd->add_option("--nbands", nbands)->capture_default_str();
  bands_cmd->add_option("--labels", label_bands, "write omega/omega0 labels for this many bands instead of full solutions");
  bands_cmd->add_option("--out", out)->required();

  auto* dos_cmd = app.add_subcommand("compute-dos", "DOS labels from band solutions or directly from cells");
  auto* dos_bands = dos_cmd->add_option("--bands", bands_path, "band-structures dataset");
  dos_cmd->add_option("--cells", cells_path, "cell dataset (solves bands internally)")->excludes(dos_bands);
  dos_cmd->add_option("--npw", dos.bands.n_pw, "with --cells")->capture_default_str();
  dos_cmd->add_option("--nk", dos.bands.nk, "with --cells")->capture_default_str();
  dos_cmd->add_option("--width", dos.width, "Gaussian width in omega0")->capture_default_str();
  dos_cmd->add_option("--n-freq", dos.n_freq)->capture_default_str();
  dos_cmd->add_option("--stride", dos.stride)->capture_default_str();
  dos_cmd->add_option("--out", out)->required();

  auto* tise_cmd = app.add_subcommand("solve-tise", "Ground-state energies of a potential set");
  tise_cmd->add_option("--in", in_path)->required();
  tise_cmd->add_option("--res", res, "solver grid points per axis")->capture_default_str();
  tise_cmd->add_option("--method", solver, "qho_analytic for harmonic wells");
  tise_cmd->add_option("--out", out)->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Pre-train one method and save its checkpoints");
  pretrain_cmd->add_option("--config", config)->required();
  pretrain_cmd->add_option("--method", method_name, "sibcl-simclr, sibcl-byol, tl, tl-i, ...")->required();
  pretrain_cmd->add_option("--seed", seed);
  pretrain_cmd->add_option("--out", out);

  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune from a checkpoint (or from scratch) on the target data");
  finetune_cmd->add_option("--config", config)->required();
  finetune_cmd->add_option("--checkpoint", checkpoint, "omit for random initialization");
  finetune_cmd->add_option("--method", method_name, "decides fine-tuning augmentation; default from the checkpoint");
  finetune_cmd->add_option("--nt", n_t, "target set sizes")->required();
  finetune_cmd->add_option("--repeats", repeats)->capture_default_str();
  finetune_cmd->add_option("--seed", seed);
  finetune_cmd->add_option("--out", out);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a labeled set");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--inputs", in_path)->required();
  eval_cmd->add_option("--labels", labels_path)->required();
  eval_cmd->add_option("--config", config, "for DOS label parameters");

  auto* run_cmd = app.add_subcommand("run", "Run a full experiment plan");
  run_cmd->add_option("--config", config)->required();
  run_cmd->add_option("--seed", seed, "replaces the config's seed list");
  run_cmd->add_option("--out", out);
  run_cmd->add_flag("--svg", svg, "also write summary.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen_phc_cmd) {
      io::write_dataset(out, gen_phc(gen_seed, count, n, kind));
    } else if (*gen_tise_cmd) {
      io::write_dataset(out, gen_tise(gen_seed, count, dim, n, kind));
    } else if (*bands_cmd) {
      const auto cells = io::read_dataset(in_path, kCells);
      const phc::BandParams p{npw, nk, nbands};
      if (label_bands)
        io::write_dataset(out, compute_band_labels(cells, p, label_bands, [](auto d, auto t) { progress_line("bands", d, t); }));
      else
        io::write_dataset(out, solve_bands(cells, p, [](auto d, auto t) { progress_line("bands", d, t); }));
    } else if (*dos_cmd) {
      if (bands_path.empty() == cells_path.empty()) throw ConfigError("compute-dos needs exactly one of --bands and --cells");
      std::vector<std::string> warnings;
      const auto prog = [](auto d, auto t) { progress_line("dos", d, t); };
      const auto labels = bands_path.empty()
                              ? compute_dos_labels(io::read_dataset(cells_path, kCells), dos, &warnings, prog)
                              : dos_labels_from_bands(io::read_dataset(bands_path, kBandStructures), dos, &warnings, prog);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      io::write_dataset(out, labels);
    } else if (*tise_cmd) {
      io::write_dataset(out, solve_tise(io::read_dataset(in_path, kPotentials), res, solver,
                                        [](auto d, auto t) { progress_line("tise", d, t); }));
    } else if (*pretrain_cmd) {
      auto c = config_with_overrides(config, seed, out);
      const std::string dir = require_out(c.out_dir);
      const Method method = method_from_string(method_name);
      const auto data = load_data(c, stderr_log());
      Report rep;
      for (std::uint64_t s : c.seeds) {
        Model m = make_model(c, data, method, s);
        Pretrainer p(m, method, data.surrogate, data.unlabeled, c.invariance, c.hyper, s);
        const auto& save_at = c.checkpoints_for(method);
        const std::size_t last = *std::max_element(save_at.begin(), save_at.end());
        for (std::size_t e = 1; e <= last; ++e) {
          const auto r = in_stage("pretrain " + to_string(method), s, [&] {
            PretrainResult one;
            if (traits(method).contrastive && !c.hyper.skip_contrastive)
              one.log.push_back({"pretrain-cl", e, "train", p.contrastive_epoch(e), {}});
            one.log.push_back({"pretrain-sup", e, "train", p.supervised_epoch(e), {}});
            return one;
          });
          for (const auto& row : r.log) {
            rep.metrics.push_back({to_string(method), s, 0, 0, 0, row});
            std::cerr << row.phase << " epoch " << e << ": " << row.loss << "\n";
          }
          if (std::find(save_at.begin(), save_at.end(), e) != save_at.end()) {
            const std::string path = dir + "/pretrain_s" + std::to_string(s) + "_e" + std::to_string(e) + ".sibw";
            tagged_checkpoint(m, c, data, method, e).save(path);
            std::cout << path << "\n";
          }
        }
      }
      io::write_file(dir + "/metrics.csv", metrics_csv(rep.metrics));
    } else if (*finetune_cmd) {
      auto c = config_with_overrides(config, seed, out);
      const std::string dir = require_out(c.out_dir);
      const auto data = load_data(c, stderr_log());
      std::optional<nn::Checkpoint> ck;
      if (!checkpoint.empty()) ck = nn::Checkpoint::load(checkpoint);
      const Method method = !method_name.empty() ? method_from_string(method_name)
                            : (ck && ck->meta.contains("method")) ? method_from_string(ck->meta.at("method").get<std::string>())
                                                                  : Method::sl;
      std::vector<MetricRow> metrics;
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t nt : n_t) {
        std::vector<double> vals;
        for (std::uint64_t s : c.seeds)
          for (std::size_t r = 0; r < repeats; ++r) {
            Model m = ck ? model_from_checkpoint(*ck) : make_model(c, data, method, s);
            if (m.G.front().output_shape()[0] * m.G.size() != data.pool.label_size || m.H.input_shape()[1] != data.pool.n)
              throw ConfigError("checkpoint does not match the configured data");
            const auto res = in_stage("finetune " + to_string(method) + " N_t=" + std::to_string(nt), s, [&] {
              const TaskData train = data.pool.subset(draw_target(data.pool.count(), nt, s, r));
              return finetune(m, train, data.test, traits(method).finetune_augment, c.invariance, c.hyper, s, r, data.ctx);
            });
            const std::size_t epoch = ck ? ck->meta.value("epoch", std::size_t{0}) : 0;
            for (const auto& row : res.log) metrics.push_back({to_string(method), s, nt, epoch, r, row});
            vals.push_back(res.test_eval);
            tagged_checkpoint(m, c, data, method, epoch)
                .save(dir + "/finetuned_nt" + std::to_string(nt) + "_s" + std::to_string(s) + "_r" + std::to_string(r) + ".sibw");
          }
        const auto [mean, sd] = mean_std(vals);
        rows.push_back({{"method", to_string(method)}, {"n_t", nt}, {"mean", mean}, {"std", sd}, {"values", vals}});
      }
      nlohmann::json summary{{"config", to_json(c)}, {"checkpoint", checkpoint}, {"rows", rows},
                             {"deviations", c.hyper.menu_deviations(c.task)}};
      io::write_file(dir + "/summary.json", summary.dump(2) + "\n");
      io::write_file(dir + "/metrics.csv", metrics_csv(metrics));
      std::cout << rows.dump(2) << "\n";
    } else if (*eval_cmd) {
      const auto ck = nn::Checkpoint::load(checkpoint);
      Model m = model_from_checkpoint(ck);
      const Task task = m.task;
      EvalContext ctx;
      if (!config.empty()) ctx.dos = load_config(config).dos;
      const auto inputs = io::read_dataset(in_path);
      const auto labels = detail::read_labels_for(task, labels_path);
      const auto d = make_task_data(task, inputs, &labels);
      const nlohmann::json r{{"task", to_string(task)}, {"count", d.count()}, {"eval", evaluate(m, d, ctx)},
                             {"loss", dataset_loss(m, d)}};
      std::cout << r.dump(2) << "\n";
    } else if (*run_cmd) {
      auto c = config_with_overrides(config, seed, out);
      if (svg) c.svg = true;
      const std::string dir = require_out(c.out_dir);
      const auto data = load_data(c, stderr_log());
      const auto rep = run_experiment(c, data, stderr_log());
      write_report(rep, dir, c.svg);
      std::cout << rep.summary.at("rows").dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
