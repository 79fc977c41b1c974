#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "sibcl/training/experiment.hpp"

using namespace sibcl;
using namespace sibcl::train;

namespace {

Tensor random_matrix(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t(Shape{n, d});
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
  return t;
}

// Plain softmax cross-entropy over cosine similarities, written per anchor.
double ntxent_oracle(const Tensor& z, double tau) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  auto cosine = [&](std::size_t i, std::size_t j) {
    double ij = 0, ii = 0, jj = 0;
    for (std::size_t k = 0; k < d; ++k) {
      ij += z[i * d + k] * z[j * d + k];
      ii += z[i * d + k] * z[i * d + k];
      jj += z[j * d + k] * z[j * d + k];
    }
    return ij / std::sqrt(ii * jj);
  };
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i < n / 2 ? i + n / 2 : i - n / 2;
    double den = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) den += std::exp(cosine(i, j) / tau);
    total += -std::log(std::exp(cosine(i, pos) / tau) / den);
  }
  return total;
}

double gradient_error(const std::function<Var(const Var&)>& f, const Tensor& x0, double h = 1e-6) {
  Var leaf(x0, true);
  backward(f(leaf));
  double worst = 0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    auto eval = [&](double delta) {
      Tensor t = x0;
      t[i] = static_cast<Scalar>(t[i] + delta);
      return static_cast<double>(f(Var(t, false)).value().item());
    };
    const double num = (eval(h) - eval(-h)) / (2 * h);
    const double ana = leaf.grad()[i];
    worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-3}));
  }
  return worst;
}

// Synthetic 2D potentials with smooth scalar labels, enough to exercise the
// training loops quickly.
TaskData toy_data(std::size_t count, std::uint64_t seed, bool labeled = true, std::size_t n = 8) {
  TaskData d{Task::tise2d_qho, n, 2, labeled ? 1u : 0u, {}, {}};
  Rng rng = Rng::stream(seed, "toy");
  for (std::size_t i = 0; i < count; ++i) {
    double mean = 0;
    for (std::size_t k = 0; k < n * n; ++k) {
      const double v = rng.uniform();
      d.x.push_back(v);
      mean += v;
    }
    if (labeled) d.y.push_back(0.5 + mean / static_cast<double>(n * n));
  }
  return d;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.width = 1.0 / 16;
  return a;
}

Hyper tiny_hyper() {
  Hyper h = Hyper::defaults(Task::tise2d_qho);
  h.cl_batch = 12;
  h.pt_batch = h.ft_batch = 8;
  h.cl_lr = 1e-3;
  h.pt_lr = h.ft_lr = 1e-3;
  h.ft_epochs = 5;
  return h;
}

Model tiny_model(std::uint64_t seed, bool byol = false) {
  Rng init = Rng::stream(seed, "init");
  return build_model(Task::tise2d_qho, 8, 1, tiny_arch(), init, byol);
}

bool same_checkpoint(const nn::Checkpoint& a, const nn::Checkpoint& b) { return a.encode() == b.encode(); }

}  // namespace

TEST(NtXent, MatchesOracle) {
  Rng rng(11);
  for (std::size_t b : {2u, 3u, 8u}) {
    const Tensor z = random_matrix(2 * b, 5, rng);
    EXPECT_NEAR(ntxent_loss(Var(z), 0.1).value().item(), ntxent_oracle(z, 0.1), 1e-9 * ntxent_oracle(z, 0.1));
    EXPECT_NEAR(ntxent_loss(Var(z), 0.5).value().item(), ntxent_oracle(z, 0.5), 1e-9);
  }
}

TEST(NtXent, SinglePairIsZero) {
  Rng rng(3);
  EXPECT_NEAR(ntxent_loss(Var(random_matrix(2, 4, rng))).value().item(), 0.0, 1e-12);
}

TEST(NtXent, HandExample) {
  // Two orthogonal inputs, each view identical to its partner: every anchor
  // sees one positive with s = 1 and two negatives with s = 0.
  const Tensor z(Shape{4, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  EXPECT_NEAR(ntxent_loss(Var(z), 0.1).value().item(), 4.0 * std::log1p(2.0 * std::exp(-10.0)), 1e-12);
}

TEST(NtXent, PairOrderAndScaleInvariance) {
  Rng rng(5);
  const std::size_t b = 4, d = 3;
  const Tensor z = random_matrix(2 * b, d, rng);
  const std::vector<std::size_t> order{2, 0, 3, 1};
  Tensor p(z.shape());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      p[i * d + k] = z[order[i] * d + k];
      p[(i + b) * d + k] = z[(order[i] + b) * d + k];
    }
  const double base = ntxent_loss(Var(z)).value().item();
  EXPECT_NEAR(ntxent_loss(Var(p)).value().item(), base, 1e-10 * base);
  Tensor scaled = z;
  for (std::size_t k = 0; k < d; ++k) scaled[k] = static_cast<Scalar>(scaled[k] * 7.5);
  EXPECT_NEAR(ntxent_loss(Var(scaled)).value().item(), base, 1e-10 * base);
}

TEST(NtXent, Gradient) {
  Rng rng(7);
  const Tensor z = random_matrix(6, 4, rng);
  EXPECT_LT(gradient_error([](const Var& v) { return ntxent_loss(v, 0.1); }, z), 1e-5);
  EXPECT_LT(gradient_error([](const Var& v) { return ntxent_loss(v, 0.7); }, z), 1e-5);
}

TEST(NtXent, RejectsBadInput) {
  Rng rng(1);
  EXPECT_THROW(ntxent_loss(Var(random_matrix(3, 2, rng))), ConfigError);
  EXPECT_THROW(ntxent_loss(Var(Tensor(Shape{2, 2}))), NumericalError);
  EXPECT_THROW(ntxent_loss(Var(random_matrix(2, 2, rng)), 0.0), ConfigError);
}

TEST(Byol, ReferenceValues) {
  const Tensor p(Shape{1, 2}, {1, 0});
  EXPECT_NEAR(byol_loss(Var(p), Tensor(Shape{1, 2}, {3, 0})).value().item(), 0.0, 1e-12);
  EXPECT_NEAR(byol_loss(Var(p), Tensor(Shape{1, 2}, {0, 2})).value().item(), 2.0, 1e-12);
  EXPECT_NEAR(byol_loss(Var(p), Tensor(Shape{1, 2}, {-1, 0})).value().item(), 4.0, 1e-12);
  // Mean over rows.
  const Tensor p2(Shape{2, 2}, {1, 0, 1, 0});
  EXPECT_NEAR(byol_loss(Var(p2), Tensor(Shape{2, 2}, {1, 0, 0, 1})).value().item(), 1.0, 1e-12);
}

TEST(Byol, GradientAndSymmetry) {
  Rng rng(9);
  const Tensor p = random_matrix(4, 3, rng), t = random_matrix(4, 3, rng);
  EXPECT_LT(gradient_error([&](const Var& v) { return byol_loss(v, t); }, p), 1e-5);
  const Tensor q = random_matrix(4, 3, rng), u = random_matrix(4, 3, rng);
  const double sym = byol_symmetric_loss(Var(p), Var(q), t, u).value().item();
  EXPECT_NEAR(sym, 0.5 * (byol_loss(Var(p), u).value().item() + byol_loss(Var(q), t).value().item()), 1e-12);
}

TEST(Byol, EmaUpdate) {
  Rng r1(1), r2(2);
  const std::vector<nn::LayerSpec> specs{nn::LayerSpec::fc(3)};
  Network online(specs, Shape{2}, r1);
  auto run = [&](double tau) {
    Network target(specs, Shape{2}, r2);
    const Tensor before = target.parameters()[0].var.value();
    ema_update(target, online, tau);
    const Tensor& after = target.parameters()[0].var.value();
    const Tensor& th = online.parameters()[0].var.value();
    double err = 0;
    for (std::size_t k = 0; k < after.numel(); ++k) err = std::max(err, std::abs(after[k] - (tau * before[k] + (1 - tau) * th[k])));
    return err;
  };
  EXPECT_LT(run(1.0), 1e-15);
  EXPECT_LT(run(0.0), 1e-15);
  EXPECT_LT(run(0.996), 1e-12);
  Network other(std::vector<nn::LayerSpec>{nn::LayerSpec::fc(4)}, Shape{2}, r1);
  EXPECT_THROW(ema_update(other, online, 0.5), ConfigError);
  EXPECT_THROW(ema_update(online, online, 1.5), ConfigError);
}

TEST(TaskLosses, ReferenceValues) {
  const Tensor y(Shape{1, 2}, {0.5, -1.0});
  const Tensor p(Shape{1, 2}, {0.5 + (std::exp(1.0) - 1), -1.0 - (std::exp(1.0) - 1)});
  EXPECT_NEAR(pretrain_loss(Task::dos, Var(p), y).value().item(), 1.0, 1e-12);
  EXPECT_NEAR(finetune_loss(Task::dos, Var(p), y).value().item(), std::exp(1.0) - 1, 1e-12);
  EXPECT_NEAR(pretrain_loss(Task::bands, Var(p), y).value().item(), std::pow(std::exp(1.0) - 1, 2), 1e-12);

  std::vector<double> truth(12, 2.0), pred(12, 2.0 + 2.0 / 6);
  EXPECT_NEAR(band_eval(pred, truth), 1.0 / 6, 1e-12);
  truth[0] = 0.0;  // zero truth contributes nothing, count unchanged
  EXPECT_NEAR(band_eval(pred, truth), 11.0 / 12 / 6, 1e-12);
  EXPECT_NEAR(energy_eval(1.1, 1.0), 0.1, 1e-12);
  EXPECT_THROW(energy_eval(1.0, 0.0), ConfigError);
}

TEST(Models, FullDosEncoderRepresentation) {
  Rng init(1);
  Model m = build_model(Task::dos, 32, 400, ArchConfig{}, init);
  EXPECT_EQ(m.representation(), 1024u);
  EXPECT_EQ(m.G.size(), 1u);
  EXPECT_EQ(m.J.output_shape()[0], 256u);
}

TEST(Models, BandBlocksConcatenate) {
  Rng init(2);
  Model m = build_model(Task::bands, 8, 6 * 9, tiny_arch(), init);
  ASSERT_EQ(m.G.size(), 6u);
  const auto y = m.predict(Var(Tensor(Shape{2, 1, 8, 8}, Scalar(0.1))), false).value();
  EXPECT_EQ(y.shape(), (Shape{2, 54}));
  EXPECT_THROW(build_model(Task::bands, 8, 50, tiny_arch(), init), ConfigError);
}

TEST(Methods, TraitsAndNames) {
  for (Method m : all_methods()) EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_EQ(method_from_string("sibcl"), Method::sibcl_simclr);
  EXPECT_THROW(method_from_string("foo"), ConfigError);
  EXPECT_TRUE(traits(Method::sibcl_byol).contrastive);
  EXPECT_FALSE(traits(Method::sibcl_rt).finetune_augment);
  EXPECT_FALSE(traits(Method::tl).pretrain_augment);
  EXPECT_TRUE(traits(Method::tl_i).pretrain_augment && traits(Method::tl_i).finetune_augment);
  EXPECT_TRUE(traits(Method::sl_i).finetune_augment && !traits(Method::sl_i).supervised_pretrain);
}

TEST(Batching, SplitAndTail) {
  EXPECT_EQ(contrastive_split(192, true), (std::pair<std::size_t, std::size_t>{64, 128}));
  EXPECT_EQ(contrastive_split(384, true), (std::pair<std::size_t, std::size_t>{128, 256}));
  EXPECT_EQ(contrastive_split(10, false), (std::pair<std::size_t, std::size_t>{10, 0}));
  std::vector<std::size_t> perm(9);
  for (std::size_t i = 0; i < 9; ++i) perm[i] = i;
  const auto b = make_batches(perm, 4);
  ASSERT_EQ(b.size(), 2u);  // the trailing single sample is dropped
  EXPECT_EQ(b[1], (std::vector<std::size_t>{4, 5, 6, 7}));
}

TEST(Batching, InputNormalizationAndViews) {
  TaskData d = toy_data(2, 4);
  const auto t = input_batch(d, {1, 0});
  EXPECT_EQ(t.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_NEAR(t[0], 2 * d.input(1)[0] - 1, 1e-12);
  std::vector<inv::GroupElement> g{inv::GroupElement::identity(2), inv::GroupElement::identity(2)};
  g[0].point = inv::point_op_by_name("C2");
  const auto v = input_batch(d, {0, 1}, &g);
  EXPECT_NEAR(v[0], 2 * d.input(0)[63] - 1, 1e-12);  // corner maps to the opposite corner
  EXPECT_NEAR(v[64], t[0], 1e-12);
}

TEST(Pretrain, DeterministicAndCheckpointed) {
  const TaskData sur = toy_data(24, 1), unl = toy_data(24, 2, false);
  const auto cfg = inv::SamplerConfig::for_task("tise2d-qho");
  auto run = [&] {
    Model m = tiny_model(5);
    return pretrain(m, Method::sibcl_simclr, sur, unl, cfg, tiny_hyper(), {1, 3}, 42);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.checkpoints.epochs, (std::vector<std::size_t>{1, 3}));
  EXPECT_TRUE(same_checkpoint(a.checkpoints.saved[1], b.checkpoints.saved[1]));
  EXPECT_FALSE(same_checkpoint(a.checkpoints.saved[0], a.checkpoints.saved[1]));
  ASSERT_EQ(a.log.size(), 6u);
  EXPECT_EQ(a.log[0].phase, "pretrain-cl");
  for (const auto& r : a.log) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Pretrain, TrivialGroupWithoutContrastiveStepEqualsTransferLearning) {
  const TaskData sur = toy_data(24, 1), unl = toy_data(24, 2, false), tgt = toy_data(10, 3), test = toy_data(6, 4);
  const auto trivial = inv::SamplerConfig::trivial();
  Hyper h = tiny_hyper();
  h.skip_contrastive = true;
  Model sib = tiny_model(5), tl = tiny_model(5);
  const auto ps = pretrain(sib, Method::sibcl_simclr, sur, unl, trivial, h, {2}, 42);
  const auto pt = pretrain(tl, Method::tl, sur, unl, trivial, h, {2}, 42);
  EXPECT_TRUE(same_checkpoint(ps.checkpoints.saved[0], pt.checkpoints.saved[0]));
  const auto fs = finetune(sib, tgt, test, traits(Method::sibcl_simclr).finetune_augment, trivial, h, 42, 0);
  const auto ft = finetune(tl, tgt, test, traits(Method::tl).finetune_augment, trivial, h, 42, 0);
  EXPECT_EQ(fs.test_eval, ft.test_eval);
  EXPECT_EQ(fs.final_loss, ft.final_loss);
}

TEST(Pretrain, ByolLeavesTargetWithoutGradients) {
  const TaskData sur = toy_data(24, 1), unl = toy_data(24, 2, false);
  Model m = tiny_model(6, true);
  const auto before = m.H.clone();
  Pretrainer p(m, Method::sibcl_byol, sur, unl, inv::SamplerConfig::for_task("tise2d-qho"), tiny_hyper(), 7);
  const double loss = p.contrastive_epoch(1);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, 4.0);
  for (const auto& q : p.target_encoder().parameters()) EXPECT_FALSE(q.var.has_grad()) << q.name;
  for (const auto& q : p.target_projector().parameters()) EXPECT_FALSE(q.var.has_grad()) << q.name;
  // Target moved by (1 - tau) of the online step: strictly between the
  // initial and the updated online weights.
  const auto& t0 = before.parameters()[0].var.value();
  const auto& t1 = p.target_encoder().parameters()[0].var.value();
  const auto& on = m.H.parameters()[0].var.value();
  double moved = 0, online_moved = 0;
  for (std::size_t k = 0; k < t0.numel(); ++k) {
    moved += std::abs(t1[k] - t0[k]);
    online_moved += std::abs(on[k] - t0[k]);
  }
  EXPECT_GT(moved, 0.0);
  EXPECT_LT(moved, 0.05 * online_moved);
}

TEST(Pretrain, RejectsBadSetups) {
  const TaskData sur = toy_data(6, 1), unl = toy_data(6, 2, false);
  Model m = tiny_model(5);
  EXPECT_THROW(Pretrainer(m, Method::sl, sur, unl, inv::SamplerConfig::trivial(), tiny_hyper(), 1), ConfigError);
  EXPECT_THROW(Pretrainer(m, Method::sibcl_byol, sur, unl, inv::SamplerConfig::trivial(), tiny_hyper(), 1), ConfigError);
  Hyper h = tiny_hyper();
  h.cl_batch = 64;
  Pretrainer p(m, Method::sibcl_simclr, sur, unl, inv::SamplerConfig::trivial(), h, 1);
  EXPECT_THROW(p.contrastive_epoch(1), ConfigError);
}

TEST(Finetune, ReducesTrainingLoss) {
  const TaskData tgt = toy_data(32, 3), test = toy_data(8, 4);
  Model m = tiny_model(8);
  Hyper h = tiny_hyper();
  h.ft_epochs = 30;
  const auto r = finetune(m, tgt, test, false, inv::SamplerConfig::trivial(), h, 1, 0);
  EXPECT_LT(r.final_loss, 0.5 * r.initial_loss);
  EXPECT_TRUE(std::isfinite(r.test_eval));
  EXPECT_EQ(r.log.size(), 33u);
  EXPECT_EQ(r.log.front().split, "train-eval");
  EXPECT_EQ(r.log.front().loss, r.initial_loss);
  EXPECT_THROW(finetune(m, toy_data(1, 5), test, false, inv::SamplerConfig::trivial(), h, 1, 0), ConfigError);
}

TEST(TaskLosses, LogL1BoundedByL1) {
  Rng rng(12);
  const Tensor y = random_matrix(3, 10, rng), p = random_matrix(3, 10, rng);
  EXPECT_EQ(pretrain_loss(Task::dos, Var(y), y).value().item(), 0.0);
  EXPECT_LE(pretrain_loss(Task::dos, Var(p), y).value().item(), finetune_loss(Task::dos, Var(p), y).value().item());
}

TEST(Byol, EmaHalfwayAndFlattening) {
  Rng r(3);
  const std::vector<nn::LayerSpec> specs{nn::LayerSpec::fc(3), nn::LayerSpec::relu(), nn::LayerSpec::fc(2)};
  Network target(specs, Shape{4}, r), online(specs, Shape{4}, r);
  for (const auto& p : target.parameters())
    for (auto& v : p.var.node().value.data()) v = 0;
  for (const auto& p : online.parameters())
    for (auto& v : p.var.node().value.data()) v = 2;
  ema_update(target, online, 0.5);
  for (const auto& p : target.parameters())
    for (auto v : p.var.value().data()) EXPECT_EQ(v, 1.0);
  // Per-tensor update equals the update of the concatenated parameter vector.
  Network a(specs, Shape{4}, r), b(specs, Shape{4}, r);
  std::vector<double> xa, xb;
  for (const auto& p : a.parameters()) xa.insert(xa.end(), p.var.value().data().begin(), p.var.value().data().end());
  for (const auto& p : b.parameters()) xb.insert(xb.end(), p.var.value().data().begin(), p.var.value().data().end());
  ema_update(a, b, 0.9);
  std::size_t k = 0;
  for (const auto& p : a.parameters())
    for (auto v : p.var.value().data()) {
      EXPECT_EQ(v, static_cast<Scalar>(0.9 * xa[k] + (1.0 - 0.9) * xb[k]));
      ++k;
    }
}

TEST(Finetune, ErrorShrinksWithMoreTargetData) {
  const TaskData pool = toy_data(256, 21), test = toy_data(64, 22);
  Hyper h = tiny_hyper();
  h.ft_epochs = 40;
  std::vector<double> err;
  for (std::size_t nt : {16u, 64u, 256u}) {
    double acc = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      Model m = tiny_model(30 + r);
      acc += finetune(m, pool.subset(draw_target(pool.count(), nt, 9, r)), test, false, inv::SamplerConfig::trivial(), h, 9, r)
                 .test_eval;
    }
    err.push_back(acc / 3);
  }
  EXPECT_GE(err[0], err[1]);
  EXPECT_GE(err[1], err[2]);
}

TEST(Data, BandStructureRecordsRoundTrip) {
  const auto cells = gen_phc(4, 2, 8, "levelset");
  const phc::BandParams p{5, 6, 6};
  const auto full = solve_bands(cells, p);
  const auto back = io::decode_dataset(io::encode_dataset(full));
  const auto [bs, n_avg] = band_structure_of(back, 1);
  const auto direct = phc::solve_tm_bands(cell_of(cells, 1), p, true);
  EXPECT_EQ(bs.omega, direct.omega);
  EXPECT_EQ(bs.velocity, direct.velocity);
  EXPECT_EQ(n_avg, cell_of(cells, 1).n_avg());
  const auto from_full = band_labels_from_structures(back);
  const auto from_cells = compute_band_labels(cells, p);
  EXPECT_EQ(from_full.data, from_cells.data);
  EXPECT_EQ(from_full.header.shape, from_cells.header.shape);
  phc::DosParams dp;
  dp.bands = p;
  dp.n_freq = 400;
  dp.stride = 4;
  EXPECT_EQ(dos_labels_from_bands(back, dp).data, compute_dos_labels(cells, dp).data);
}

TEST(Data, TaskDataChecksKindsAndCounts) {
  const auto cells = gen_phc(1, 3, 8, "circle");
  const auto pots = gen_tise(1, 3, 2, 8, "qho");
  const auto energies = solve_tise(pots, 8, "qho_analytic");
  EXPECT_THROW(make_task_data(Task::dos, pots), ConfigError);
  EXPECT_THROW(make_task_data(Task::tise3d, pots), ConfigError);
  EXPECT_THROW(make_task_data(Task::dos, cells, &energies), ConfigError);
  const auto d = make_task_data(Task::tise2d_qho, pots, &energies);
  EXPECT_EQ(d.count(), 3u);
  EXPECT_EQ(d.label_size, 1u);
  const auto q = pots.header.params.at("qho").at(2);
  EXPECT_DOUBLE_EQ(d.label(2)[0], 0.5 * (q.at("omega")[0].get<double>() + q.at("omega")[1].get<double>()));
  const auto fewer = gen_tise(1, 2, 2, 8, "qho");
  EXPECT_THROW(make_task_data(Task::tise2d_qho, fewer, &energies), ConfigError);
}

namespace {

nlohmann::json tiny_plan() {
  return {{"task", "tise2d-qho"},
          {"seed", 4},
          {"methods", {"SL", "TL", "SIBCL-SimCLR", "SIBCL-BYOL"}},
          {"n_t", {8, 16}},
          {"repeats", 2},
          {"data", {{"generate", {{"seed", 1}, {"n", 8}, {"n_pool", 24}, {"n_test", 8}, {"n_surrogate", 24}, {"n_unlabeled", 24}}}}},
          {"arch", {{"width", 0.0625}}},
          {"hyper", {{"cl_batch", 12}, {"pt_batch", 8}, {"ft_batch", 8}, {"ft_epochs", 3}}},
          {"checkpoints", {{"sibcl", {1, 2}}, {"tl", {1}}}}};
}

}  // namespace

TEST(Experiment, ConfigValidation) {
  auto j = tiny_plan();
  EXPECT_NO_THROW(parse_config(j));
  auto bad = j;
  bad["typo"] = 1;
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = j;
  bad.erase("seed");
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = j;
  bad["data"]["paths"] = {{"target", "x"}};
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = j;
  bad["methods"] = {"SL", "bogus"};
  EXPECT_THROW(parse_config(bad), ConfigError);
  bad = j;
  bad["arch"]["kernel"] = 4;
  EXPECT_THROW(parse_config(bad), ConfigError);
  const auto c = parse_config(j);
  EXPECT_EQ(c.invariance.groups, std::vector<inv::Subgroup>{inv::Subgroup::point});
  EXPECT_EQ(to_json(parse_config(to_json(c))), to_json(c));
  EXPECT_FALSE(c.hyper.menu_deviations(c.task).empty());
  EXPECT_TRUE(Hyper::defaults(Task::dos).menu_deviations(Task::dos).empty());
}

TEST(Experiment, GridIsDeterministicWithOneRowPerPair) {
  const auto c = parse_config(tiny_plan());
  const auto data = load_data(c);
  const auto a = run_experiment(c, data);
  const auto b = run_experiment(c, load_data(c));
  EXPECT_EQ(a.summary.dump(), b.summary.dump());
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  ASSERT_EQ(a.rows.size(), 8u);
  EXPECT_EQ(a.rows[0].method, "SL");
  EXPECT_EQ(a.rows[1].n_t, 16u);
  for (const auto& r : a.rows) {
    EXPECT_EQ(r.values.size(), 2u);
    EXPECT_TRUE(std::isfinite(r.mean));
  }
  EXPECT_EQ(a.rows[4].best_checkpoint.size(), 1u);
  const auto svg = summary_svg(a.rows);
  EXPECT_NE(svg.find("SIBCL-BYOL"), std::string::npos);
}

TEST(Experiment, TargetDrawsAreNestedAndBounded) {
  const auto small = draw_target(100, 10, 3, 0), big = draw_target(100, 40, 3, 0);
  EXPECT_TRUE(std::equal(small.begin(), small.end(), big.begin()));
  EXPECT_NE(draw_target(100, 10, 3, 1), small);
  EXPECT_THROW(draw_target(10, 11, 3, 0), ConfigError);
}

TEST(Experiment, StageErrorsKeepTheirFamily) {
  try {
    in_stage("finetune SL", 7, []() -> int { throw NumericalError("diverged"); });
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'finetune SL' (seed 7)"), std::string::npos);
  }
}
