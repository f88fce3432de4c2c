#include "mdg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdg {

double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("check_gradients: eps must be positive");
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  const Tensor y = f(probe);
  if (y.numel() != 1) throw ShapeError("check_gradients: function must be scalar-valued");
  backward(y);
  std::vector<double> analytic(probe.numel(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  NoGradGuard guard;
  Tensor point = x.detach();
  auto values = point.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double up = f(point).item();
    values[i] = orig - eps;
    const double down = f(point).item();
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace mdg
