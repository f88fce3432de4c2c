#pragma once

#include <vector>

#include "mdg/nets.hpp"

namespace mdg {

/// Adaptive moment estimation. Parameters without a gradient are skipped.
class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad() { zero_grads(params_); }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// v ← μv + (g + λw); w ← w − lr·v.
class Sgd {
 public:
  Sgd(ParamList params, double lr, double momentum = 0.9, double weight_decay = 5e-4);

  void step();
  void zero_grad() { zero_grads(params_); }
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamList params_;
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace mdg
