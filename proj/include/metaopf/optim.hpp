#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "metaopf/error.hpp"
#include "metaopf/mlp.hpp"

namespace metaopf {

enum class OptimKind { adam, sgd };

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double learning_rate = 0.001;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// SGD or Adam. Weight decay is coupled: it is added to the gradient before the update.
class Optimizer {
 public:
  explicit Optimizer(const OptimConfig& cfg) : cfg_(cfg) {
    if (!(cfg.learning_rate > 0.0)) throw InputError("learning rate must be positive");
    if (cfg.weight_decay < 0.0) throw InputError("weight decay must be non-negative");
  }

  void step(Params& w, const Params& grad) {
    if (grad.size() != w.size()) throw InputError("gradient and parameters differ in length");
    const Params g = grad + cfg_.weight_decay * w;
    if (cfg_.kind == OptimKind::sgd) {
      apply(w, cfg_.learning_rate * g);
      return;
    }
    if (m_.size() != w.size()) {
      m_ = Params::Zero(w.size());
      v_ = Params::Zero(w.size());
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    const Params upd = cfg_.learning_rate * (m_ / c1).array() / ((v_ / c2).array().sqrt() + cfg_.eps);
    apply(w, upd);
  }

  const OptimConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  const Params& first_moment() const { return m_; }
  const Params& second_moment() const { return v_; }

 private:
  static void apply(Params& w, const Params& upd) {
    if (!upd.allFinite()) throw NumericError("non-finite parameter update");
    w -= upd;
  }

  OptimConfig cfg_;
  Params m_, v_;
  long t_ = 0;
};

}  // namespace metaopf
