#pragma once

#include <functional>

#include "mdg/tensor.hpp"

namespace mdg {

/// Max over elements of |analytic − numeric| / max(1, |analytic|), the
/// numeric gradient taken by central differences with step `eps`.
double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace mdg
