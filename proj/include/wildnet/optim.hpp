#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wildnet/netgraph.hpp"

namespace wildnet {

/// base * (1 - iter/total)^power.
inline double poly_lr(long iter, long total, double base, double power) {
  if (total <= 0 || iter < 0 || iter > total) {
    throw ParameterError("trainharness", "poly_lr requires 0 <= iter <= total and total > 0");
  }
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
};

/// SGD with momentum (coupled L2 decay) or Adam. Per-parameter state is held
/// in buffers parallel to the parameter list.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return steps_; }

  void step(std::vector<ParamView<Scalar>>& params, std::vector<ParamView<Scalar>>& grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("trainharness", "parameter/gradient lists differ");
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Vector<Scalar>::Zero(p.values.size()));
        if (cfg_.kind == OptimizerKind::Adam) second_.push_back(Vector<Scalar>::Zero(p.values.size()));
      }
    }
    ++steps_;
    const Scalar wd = static_cast<Scalar>(cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].values;
      const Vector<Scalar> g = grads[i].values + wd * w;
      if (cfg_.kind == OptimizerKind::Sgd) {
        first_[i] = static_cast<Scalar>(cfg_.momentum) * first_[i] + g;
        w -= static_cast<Scalar>(lr) * first_[i];
      } else {
        const Scalar b1 = static_cast<Scalar>(cfg_.beta1);
        const Scalar b2 = static_cast<Scalar>(cfg_.beta2);
        first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
        second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
        const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, static_cast<double>(steps_)));
        const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, static_cast<double>(steps_)));
        w.array() -= static_cast<Scalar>(lr) * (first_[i].array() / c1) /
                     ((second_[i].array() / c2).sqrt() + static_cast<Scalar>(cfg_.adam_eps));
      }
    }
  }

  /// State buffers for checkpointing: first moments, then second moments.
  std::vector<Vector<Scalar>>& first_moments() { return first_; }
  std::vector<Vector<Scalar>>& second_moments() { return second_; }
  const std::vector<Vector<Scalar>>& first_moments() const { return first_; }
  const std::vector<Vector<Scalar>>& second_moments() const { return second_; }
  void set_steps(long s) { steps_ = s; }

 private:
  OptimizerConfig cfg_;
  std::vector<Vector<Scalar>> first_;
  std::vector<Vector<Scalar>> second_;
  long steps_ = 0;
};

}  // namespace wildnet
