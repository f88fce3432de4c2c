#include "mdg/optim.hpp"

#include <cmath>

namespace mdg {

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor w = params_[k].tensor;
    if (!w.has_grad()) continue;
    const auto g = w.grad();
    auto data = w.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Sgd::Sgd(ParamList params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor w = params_[k].tensor;
    if (!w.has_grad()) continue;
    const auto g = w.grad();
    auto data = w.mutable_data();
    auto& vel = velocity_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * data[i];
      data[i] -= lr_ * vel[i];
    }
  }
}

}  // namespace mdg
