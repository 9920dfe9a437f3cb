#pragma once

#include <functional>

#include "advrep/numerics/tensor.hpp"

namespace advrep::nx {

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from dominating the ratio.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

/// ||a - b|| / max(||a||, ||b||), the per-group measure; 0 when both vanish.
double norm_relative_error(const Tensor& a, const Tensor& b);

}  // namespace advrep::nx
