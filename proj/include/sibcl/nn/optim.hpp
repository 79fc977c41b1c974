#pragma once

#include <cmath>
#include <limits>

#include "sibcl/nn/network.hpp"

namespace sibcl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without a gradient buffer (not
// reached by the last backward pass) are skipped, moments included.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<NamedParam> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    first_.resize(params_.size());
    second_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      first_[i].assign(params_[i].var.value().numel(), 0.0);
      second_[i].assign(params_[i].var.value().numel(), 0.0);
    }
  }

  double lr() const noexcept { return cfg_.lr; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }
  std::size_t step_count() const noexcept { return steps_; }
  const std::vector<NamedParam>& params() const noexcept { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return first_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return second_.at(i); }

  void zero_grad() {
    for (auto& p : params_) p.var.node().grad = Tensor();
  }

  // Validates every gradient before touching any parameter.
  void step() {
    for (const auto& p : params_) {
      if (!p.var.has_grad()) continue;
      for (auto g : p.var.grad().data())
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericalError("non-finite gradient in parameter '" + p.name + "'; Adam step aborted");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.var.has_grad()) continue;
      auto& w = p.var.value();
      const auto& g = p.var.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w[j] = static_cast<Scalar>(static_cast<double>(w[j]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  std::vector<NamedParam> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t steps_ = 0;
};

struct PlateauConfig {
  double factor = 0.5;
  std::size_t patience = 10;
  double threshold = 1e-4;  // relative improvement
  double min_lr = 1e-6;
};

// Multiplies the learning rate by `factor` once the monitored loss has gone
// more than `patience` epochs without a relative improvement of `threshold`.
class ReduceOnPlateau {
 public:
  explicit ReduceOnPlateau(PlateauConfig cfg = {}) : cfg_(cfg) {}

  double step(double loss, double lr) {
    if (loss < best_ * (1.0 - cfg_.threshold) || !std::isfinite(best_)) {
      best_ = loss;
      bad_epochs_ = 0;
      return lr;
    }
    if (++bad_epochs_ > cfg_.patience) {
      bad_epochs_ = 0;
      return std::max(lr * cfg_.factor, std::min(lr, cfg_.min_lr));
    }
    return lr;
  }

  void step(double loss, Adam& opt) { opt.set_lr(step(loss, opt.lr())); }

  std::size_t bad_epochs() const noexcept { return bad_epochs_; }
  double best() const noexcept { return best_; }

 private:
  PlateauConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

}  // namespace sibcl::nn
