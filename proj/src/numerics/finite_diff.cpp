#include "advrep/numerics/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advrep::nx {

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_difference_grad: step must be positive");
    Tensor grad = Tensor::zeros(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
    require_same_shape(a, b, "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

double norm_relative_error(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "norm_relative_error");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double scale = std::max(frobenius_norm(a.values()), frobenius_norm(b.values()));
    if (scale == 0.0) return 0.0;
    return std::sqrt(diff) / scale;
}

}  // namespace advrep::nx
