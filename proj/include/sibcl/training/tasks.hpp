#pragma once

// Per-task losses, evaluation metrics and input normalization.

#include <cmath>
#include <span>

#include "sibcl/nn/ops.hpp"
#include "sibcl/phc/dos.hpp"
#include "sibcl/training/models.hpp"

namespace sibcl::train {

// Pre-training loss on the surrogate set: log(1 + |dy|) for the DOS, MSE otherwise.
inline nn::Var pretrain_loss(Task t, const nn::Var& pred, const nn::Tensor& y) {
  return t == Task::dos ? nn::log_l1_loss(pred, y) : nn::mse_loss(pred, y);
}

// Fine-tuning loss: L1 for the DOS, MSE otherwise.
inline nn::Var finetune_loss(Task t, const nn::Var& pred, const nn::Tensor& y) {
  return t == Task::dos ? nn::l1_loss(pred, y) : nn::mse_loss(pred, y);
}

// Band metric: mean over k of (1/bands) sum_n |pred - truth| / truth. Terms
// with truth exactly 0 (band 1 at Gamma) contribute nothing.
inline double band_eval(std::span<const double> pred, std::span<const double> truth, std::size_t bands = 6) {
  if (pred.size() != truth.size() || truth.empty() || truth.size() % bands != 0)
    throw ConfigError("band metric needs equal label lengths divisible by the band count");
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] != 0.0) acc += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
  return acc / static_cast<double>(truth.size());
}

inline double energy_eval(double pred, double truth) {
  if (!(truth > 0)) throw ConfigError("energy metric needs a positive reference energy");
  return std::abs(pred - truth) / truth;
}

struct EvalContext {
  phc::DosParams dos;
  std::size_t bands = 6;
};

inline double eval_metric(Task t, std::span<const double> pred, std::span<const double> truth,
                          const EvalContext& ctx = {}) {
  switch (t) {
    case Task::dos: return phc::eval_dos_error(pred, truth, ctx.dos);
    case Task::bands: return band_eval(pred, truth, ctx.bands);
    default:
      if (pred.size() != 1 || truth.size() != 1) throw ConfigError("energy labels are scalars");
      return energy_eval(pred[0], truth[0]);
  }
}

// Fixed affine maps of the physical input range onto about [-1, 1]: eps in
// [1, 20] for cells, U in [0, 1] Hartree for potentials. Harmonic wells
// exceed 1 near the walls and map above 1.
inline double normalize_input(Task t, double v) {
  return t == Task::dos || t == Task::bands ? (v - 10.5) / 9.5 : 2.0 * v - 1.0;
}

}  // namespace sibcl::train
