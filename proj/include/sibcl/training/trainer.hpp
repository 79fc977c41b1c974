#pragma once

// Pre-training (contrastive and supervised surrogate steps), fine-tuning and
// evaluation. Every random draw comes from a named stream under the run
// seed, so traces are reproducible bit for bit.

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sibcl/nn/optim.hpp"
#include "sibcl/training/contrastive.hpp"
#include "sibcl/training/data.hpp"

namespace sibcl::train {

enum class Method { sibcl_simclr, sibcl_byol, sl, tl, sl_i, tl_i, sibcl_rt, tl_i_rt };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::sibcl_simclr, Method::sibcl_byol, Method::sl,      Method::tl,
                                     Method::sl_i,         Method::tl_i,       Method::sibcl_rt, Method::tl_i_rt};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::sibcl_simclr: return "SIBCL-SimCLR";
    case Method::sibcl_byol: return "SIBCL-BYOL";
    case Method::sl: return "SL";
    case Method::tl: return "TL";
    case Method::sl_i: return "SL-I";
    case Method::tl_i: return "TL-I";
    case Method::sibcl_rt: return "SIBCL-rt";
    default: return "TL-I-rt";
  }
}

inline Method method_from_string(std::string s) {
  auto lower = [](std::string v) {
    for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return v;
  };
  s = lower(s);
  if (s == "sibcl") return Method::sibcl_simclr;
  for (Method m : all_methods())
    if (lower(to_string(m)) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

struct MethodTraits {
  bool contrastive = false;       // step a
  bool supervised_pretrain = false;  // step b
  bool pretrain_augment = false;  // invariance maps on surrogate inputs
  bool finetune_augment = false;  // invariance maps on target inputs
};

inline MethodTraits traits(Method m) {
  switch (m) {
    case Method::sibcl_simclr:
    case Method::sibcl_byol: return {true, true, true, true};
    case Method::sibcl_rt: return {true, true, true, false};
    case Method::sl: return {false, false, false, false};
    case Method::sl_i: return {false, false, false, true};
    case Method::tl: return {false, true, false, false};
    case Method::tl_i: return {false, true, true, true};
    default: return {false, true, true, false};
  }
}

enum class ContrastiveKind { simclr, byol };

struct Hyper {
  std::size_t cl_batch = 192, pt_batch = 32, ft_batch = 32;
  double cl_lr = 1e-4, pt_lr = 1e-4, ft_lr = 1e-4;
  double temperature = 0.1;
  double ema_decay = 0.996;
  std::size_t ft_epochs = 100;
  nn::PlateauConfig plateau;
  ContrastiveKind contrastive = ContrastiveKind::simclr;  // for SIBCL-rt; the other SIB-CL methods fix it
  bool skip_contrastive = false;                          // ablation: run only the supervised step

  // Settings outside the per-task batch-size and learning-rate menus. Desk
  // runs may shrink batches; reports carry the list.
  std::vector<std::string> menu_deviations(Task t) const {
    const bool tise = t == Task::tise3d || t == Task::tise2d_qho;
    const std::vector<std::size_t> cl_b = tise ? std::vector<std::size_t>{384} : std::vector<std::size_t>{192, 768};
    const std::vector<std::size_t> sup_b = tise ? std::vector<std::size_t>{32, 64, 128} : std::vector<std::size_t>{16, 32, 64};
    const std::vector<double> cl_a = tise ? std::vector<double>{1e-6, 1e-5} : std::vector<double>{1e-4, 1e-3};
    const std::vector<double> pt_a = tise ? std::vector<double>{1e-5, 1e-4} : std::vector<double>{1e-4, 1e-3};
    const std::vector<double> ft_a{1e-4, 1e-3};
    std::vector<std::string> out;
    auto check_b = [&](const char* name, std::size_t v, const std::vector<std::size_t>& menu) {
      if (std::find(menu.begin(), menu.end(), v) == menu.end()) out.push_back(std::string(name) + "=" + std::to_string(v));
    };
    auto check_a = [&](const char* name, double v, const std::vector<double>& menu) {
      for (double m : menu)
        if (std::abs(v - m) <= 1e-12 * m) return;
      std::ostringstream os;
      os << name << "=" << v;
      out.push_back(os.str());
    };
    check_b("cl_batch", cl_batch, cl_b);
    check_b("pt_batch", pt_batch, sup_b);
    check_b("ft_batch", ft_batch, sup_b);
    check_a("cl_lr", cl_lr, cl_a);
    check_a("pt_lr", pt_lr, pt_a);
    check_a("ft_lr", ft_lr, ft_a);
    return out;
  }

  static Hyper defaults(Task t) {
    Hyper h;
    if (t == Task::tise3d || t == Task::tise2d_qho) {
      h.cl_batch = 384;
      h.pt_batch = h.ft_batch = 64;
      h.cl_lr = 1e-5;
      h.pt_lr = 1e-4;
      h.ft_lr = 1e-3;
    }
    return h;
  }
};

struct LogRow {
  std::string phase;  // pretrain-cl, pretrain-sup, finetune
  std::size_t epoch = 0;
  std::string split;  // train (epoch mean), train-eval (inference mode, whole set) or test
  double loss = 0;
  std::optional<double> eval;
};

// [B, 1, n...] normalized input tensor; views[i] (if given) is applied to
// sample i first.
inline nn::Tensor input_batch(const TaskData& d, const std::vector<std::size_t>& idx,
                              const std::vector<inv::GroupElement>* views = nullptr) {
  nn::Shape s{idx.size(), 1};
  for (std::size_t r = 0; r < d.rank; ++r) s.push_back(d.n);
  nn::Tensor t(s);
  const std::size_t m = d.input_size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto raw = d.input(idx[b]);
    if (views && !(*views)[b].is_identity()) {
      const auto moved = inv::apply_image((*views)[b], d.n, raw);
      for (std::size_t k = 0; k < m; ++k) t[b * m + k] = static_cast<nn::Scalar>(normalize_input(d.task, moved[k]));
    } else {
      for (std::size_t k = 0; k < m; ++k) t[b * m + k] = static_cast<nn::Scalar>(normalize_input(d.task, raw[k]));
    }
  }
  return t;
}

inline nn::Tensor label_batch(const TaskData& d, const std::vector<std::size_t>& idx) {
  nn::Tensor t(nn::Shape{idx.size(), d.label_size});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto l = d.label(idx[b]);
    for (std::size_t k = 0; k < d.label_size; ++k) t[b * d.label_size + k] = static_cast<nn::Scalar>(l[k]);
  }
  return t;
}

// Stacks two [B, ...] tensors into [2B, ...].
inline nn::Tensor stack_views(const nn::Tensor& a, const nn::Tensor& b) {
  nn::Shape s = a.shape();
  s[0] *= 2;
  std::vector<nn::Scalar> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return nn::Tensor(s, std::move(v));
}

// Consecutive slices of a permutation; slices shorter than two are dropped
// because BatchNorm needs batch statistics.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& perm, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < perm.size(); i += batch) {
    const std::size_t end = std::min(perm.size(), i + batch);
    if (end - i >= 2) out.emplace_back(perm.begin() + static_cast<long>(i), perm.begin() + static_cast<long>(end));
  }
  return out;
}

inline std::vector<inv::GroupElement> sample_elements(Rng& rng, const inv::SamplerConfig& cfg, const TaskData& d,
                                                      const std::vector<std::size_t>& idx) {
  std::vector<inv::GroupElement> g;
  g.reserve(idx.size());
  for (std::size_t i : idx) g.push_back(inv::sample_element(rng, cfg, d.info(i)));
  return g;
}

struct Checkpoints {
  std::vector<std::size_t> epochs;
  std::vector<nn::Checkpoint> saved;
};

struct PretrainResult {
  Checkpoints checkpoints;
  std::vector<LogRow> log;
};

// Counts per contrastive batch: floor(B/3) surrogate inputs, the rest unlabeled.
inline std::pair<std::size_t, std::size_t> contrastive_split(std::size_t batch, bool have_unlabeled) {
  if (!have_unlabeled) return {batch, 0};
  return {batch / 3, batch - batch / 3};
}

class Pretrainer {
 public:
  Pretrainer(Model& m, Method method, const TaskData& surrogate, const TaskData& unlabeled,
             const inv::SamplerConfig& inv, const Hyper& h, std::uint64_t seed)
      : m_(m), tr_(traits(method)), sur_(surrogate), unl_(unlabeled), inv_(inv), h_(h), seed_(seed) {
    if (!tr_.supervised_pretrain && !tr_.contrastive) throw ConfigError(to_string(method) + " has no pre-training stage");
    if (sur_.count() == 0 || sur_.label_size == 0) throw ConfigError("pre-training needs a labeled surrogate set");
    byol_ = method == Method::sibcl_byol || (method == Method::sibcl_rt && h.contrastive == ContrastiveKind::byol);
    if (tr_.contrastive && !h_.skip_contrastive) {
      if (m_.J.empty()) throw ConfigError("contrastive pre-training needs a projector");
      if (byol_) {
        if (m_.K.empty()) throw ConfigError("BYOL needs the online predictor K");
        target_H_ = m_.H.clone();
        target_J_ = m_.J.clone();
      }
      cl_opt_ = nn::Adam(m_.contrastive_params(), {h_.cl_lr});
    }
    sup_opt_ = nn::Adam(m_.encoder_predictor_params(), {h_.pt_lr});
  }

  PretrainResult run(const std::vector<std::size_t>& save_at) {
    PretrainResult r;
    const std::size_t last = save_at.empty() ? 0 : *std::max_element(save_at.begin(), save_at.end());
    for (std::size_t epoch = 1; epoch <= last; ++epoch) {
      if (tr_.contrastive && !h_.skip_contrastive) r.log.push_back({"pretrain-cl", epoch, "train", contrastive_epoch(epoch), {}});
      r.log.push_back({"pretrain-sup", epoch, "train", supervised_epoch(epoch), {}});
      if (std::find(save_at.begin(), save_at.end(), epoch) != save_at.end()) {
        r.checkpoints.epochs.push_back(epoch);
        r.checkpoints.saved.push_back(m_.checkpoint());
      }
    }
    return r;
  }

  double contrastive_epoch(std::size_t epoch) {
    Rng batch_rng = Rng::stream(seed_, "cl-batch", epoch);
    Rng aug_rng = Rng::stream(seed_, "cl-augment", epoch);
    const auto [bs, bu] = contrastive_split(h_.cl_batch, unl_.count() > 0);
    const std::size_t nb = std::min(bs ? sur_.count() / bs : SIZE_MAX, bu ? unl_.count() / bu : SIZE_MAX);
    if (nb == 0 || nb == SIZE_MAX) throw ConfigError("contrastive batch size exceeds the available inputs");
    const auto ps = permutation(sur_.count(), batch_rng);
    const auto pu = permutation(unl_.count(), batch_rng);
    double total = 0;
    for (std::size_t k = 0; k < nb; ++k) {
      // Views from both sources, surrogate rows first.
      std::vector<std::vector<nn::Tensor>> a_parts, b_parts;
      std::size_t pairs_per_input = 0;
      auto add_source = [&](const TaskData& d, const std::vector<std::size_t>& perm, std::size_t count) {
        if (count == 0) return;
        std::vector<std::size_t> idx(perm.begin() + static_cast<long>(k * count), perm.begin() + static_cast<long>((k + 1) * count));
        std::vector<std::vector<inv::GroupElement>> ga, gb;
        for (std::size_t i : idx) {
          const auto pairs = inv::sample_pair(aug_rng, inv_, d.info(i));
          pairs_per_input = pairs.size();
          ga.resize(pairs.size());
          gb.resize(pairs.size());
          for (std::size_t p = 0; p < pairs.size(); ++p) {
            ga[p].push_back(pairs[p].a);
            gb[p].push_back(pairs[p].b);
          }
        }
        a_parts.resize(pairs_per_input);
        b_parts.resize(pairs_per_input);
        for (std::size_t p = 0; p < pairs_per_input; ++p) {
          a_parts[p].push_back(input_batch(d, idx, &ga[p]));
          b_parts[p].push_back(input_batch(d, idx, &gb[p]));
        }
      };
      add_source(sur_, ps, bs);
      add_source(unl_, pu, bu);
      std::vector<nn::Var> losses;
      for (std::size_t p = 0; p < pairs_per_input; ++p) {
        const nn::Tensor xa = concat_batches(a_parts[p]), xb = concat_batches(b_parts[p]);
        losses.push_back(byol_ ? byol_step_loss(xa, xb) : ntxent_loss(m_.embed(nn::Var(stack_views(xa, xb)), true), h_.temperature));
      }
      const nn::Var loss = nn::add_scalars(losses);
      cl_opt_.zero_grad();
      nn::backward(loss);
      cl_opt_.step();
      if (byol_) {
        ema_update(target_H_, m_.H, h_.ema_decay);
        ema_update(target_J_, m_.J, h_.ema_decay);
      }
      total += loss.value().item();
    }
    return total / static_cast<double>(nb);
  }

  double supervised_epoch(std::size_t epoch) {
    Rng batch_rng = Rng::stream(seed_, "sup-batch", epoch);
    Rng aug_rng = Rng::stream(seed_, "sup-augment", epoch);
    const auto batches = make_batches(permutation(sur_.count(), batch_rng), h_.pt_batch);
    if (batches.empty()) throw ConfigError("surrogate set too small for one batch");
    double total = 0;
    for (const auto& idx : batches) {
      std::vector<inv::GroupElement> g;
      if (tr_.pretrain_augment) g = sample_elements(aug_rng, inv_, sur_, idx);
      const nn::Var x(input_batch(sur_, idx, tr_.pretrain_augment ? &g : nullptr));
      const nn::Var loss = pretrain_loss(sur_.task, m_.predict(x, true), label_batch(sur_, idx));
      sup_opt_.zero_grad();
      nn::backward(loss);
      sup_opt_.step();
      total += loss.value().item();
    }
    return total / static_cast<double>(batches.size());
  }

  const nn::Network& target_encoder() const { return target_H_; }
  const nn::Network& target_projector() const { return target_J_; }

 private:
  static nn::Tensor concat_batches(const std::vector<nn::Tensor>& parts) {
    nn::Shape s = parts.front().shape();
    s[0] = 0;
    std::vector<nn::Scalar> v;
    for (const auto& p : parts) {
      s[0] += p.shape()[0];
      v.insert(v.end(), p.data().begin(), p.data().end());
    }
    return nn::Tensor(s, std::move(v));
  }

  nn::Var byol_step_loss(const nn::Tensor& xa, const nn::Tensor& xb) {
    const nn::Var pa = m_.K.forward(m_.embed(nn::Var(xa), true), true);
    const nn::Var pb = m_.K.forward(m_.embed(nn::Var(xb), true), true);
    const nn::Tensor ta = target_J_.forward(target_H_.forward(nn::Var(xa), true), true).value();
    const nn::Tensor tb = target_J_.forward(target_H_.forward(nn::Var(xb), true), true).value();
    return byol_symmetric_loss(pa, pb, ta, tb);
  }

  Model& m_;
  MethodTraits tr_;
  const TaskData& sur_;
  const TaskData& unl_;
  inv::SamplerConfig inv_;
  Hyper h_;
  std::uint64_t seed_;
  bool byol_ = false;
  nn::Network target_H_, target_J_;
  nn::Adam cl_opt_, sup_opt_;
};

inline PretrainResult pretrain(Model& m, Method method, const TaskData& surrogate, const TaskData& unlabeled,
                               const inv::SamplerConfig& inv, const Hyper& h, const std::vector<std::size_t>& save_at,
                               std::uint64_t seed) {
  return Pretrainer(m, method, surrogate, unlabeled, inv, h, seed).run(save_at);
}

// Predictions in inference mode, in chunks.
inline std::vector<double> predict_all(Model& m, const TaskData& d, std::size_t chunk = 64) {
  std::vector<double> out;
  for (std::size_t i = 0; i < d.count(); i += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t k = i; k < std::min(d.count(), i + chunk); ++k) idx.push_back(k);
    const auto y = m.predict(nn::Var(input_batch(d, idx)), false).value();
    out.insert(out.end(), y.data().begin(), y.data().end());
  }
  return out;
}

// Mean per-sample metric over a labeled set.
inline double evaluate(Model& m, const TaskData& d, const EvalContext& ctx = {}) {
  if (d.count() == 0 || d.label_size == 0) throw ConfigError("evaluation needs a labeled set");
  const auto pred = predict_all(m, d);
  double acc = 0;
  for (std::size_t i = 0; i < d.count(); ++i)
    acc += eval_metric(d.task, std::span<const double>(pred).subspan(i * d.label_size, d.label_size), d.label(i), ctx);
  return acc / static_cast<double>(d.count());
}

// Fine-tuning loss over a whole set in inference mode, unaugmented.
inline double dataset_loss(Model& m, const TaskData& d) {
  const auto pred = predict_all(m, d);
  nn::Tensor p(nn::Shape{d.count(), d.label_size}, std::vector<nn::Scalar>(pred.begin(), pred.end()));
  std::vector<std::size_t> all(d.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finetune_loss(d.task, nn::Var(p), label_batch(d, all)).value().item();
}

struct FinetuneResult {
  double initial_loss = 0;  // inference-mode loss on the training set before any update
  double final_loss = 0;
  double test_eval = 0;
  std::vector<LogRow> log;
};

inline FinetuneResult finetune(Model& m, const TaskData& train, const TaskData& test, bool augment,
                               const inv::SamplerConfig& inv, const Hyper& h, std::uint64_t seed,
                               std::uint64_t stream, const EvalContext& ctx = {}) {
  if (train.count() < 2) throw ConfigError("fine-tuning needs at least two target samples");
  FinetuneResult r;
  r.initial_loss = dataset_loss(m, train);
  r.log.push_back({"finetune", 0, "train-eval", r.initial_loss, {}});
  nn::Adam opt(m.encoder_predictor_params(), {h.ft_lr});
  nn::ReduceOnPlateau sched(h.plateau);
  Rng batch_rng = Rng::stream(seed, "ft-batch", stream);
  Rng aug_rng = Rng::stream(seed, "ft-augment", stream);
  for (std::size_t epoch = 1; epoch <= h.ft_epochs; ++epoch) {
    double total = 0;
    const auto batches = make_batches(permutation(train.count(), batch_rng), h.ft_batch);
    for (const auto& idx : batches) {
      std::vector<inv::GroupElement> g;
      if (augment) g = sample_elements(aug_rng, inv, train, idx);
      const nn::Var x(input_batch(train, idx, augment ? &g : nullptr));
      const nn::Var loss = finetune_loss(train.task, m.predict(x, true), label_batch(train, idx));
      opt.zero_grad();
      nn::backward(loss);
      opt.step();
      total += loss.value().item();
    }
    const double mean = total / static_cast<double>(batches.size());
    sched.step(mean, opt);
    r.log.push_back({"finetune", epoch, "train", mean, {}});
  }
  r.final_loss = dataset_loss(m, train);
  r.log.push_back({"finetune", h.ft_epochs, "train-eval", r.final_loss, {}});
  r.test_eval = evaluate(m, test, ctx);
  r.log.push_back({"finetune", h.ft_epochs, "test", dataset_loss(m, test), r.test_eval});
  return r;
}

}  // namespace sibcl::train
