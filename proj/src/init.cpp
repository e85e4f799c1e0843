#include "iseg/init.hpp"

#include <cmath>
#include <vector>

namespace iseg {

namespace {

Tensor filled(Rng& rng, const Shape& shape, double scale, bool gaussian) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = gaussian ? rng.normal() * scale : rng.uniform(-scale, scale);
    Tensor t = Tensor::from_data(shape, v);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

Tensor conv_init(Rng& rng, std::int64_t c_out, std::int64_t c_in, std::int64_t k) {
    const double fan_in = static_cast<double>(c_in * k * k);
    return filled(rng, {c_out, c_in, k, k}, std::sqrt(2.0 / fan_in), true);
}

Tensor linear_init(Rng& rng, std::int64_t out, std::int64_t in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    return filled(rng, {out, in}, bound, false);
}

Tensor zeros_param(const Shape& shape) {
    Tensor t = Tensor::zeros(shape);
    t.set_requires_grad(true);
    return t;
}

Tensor normal_param(Rng& rng, const Shape& shape, double stddev) {
    return filled(rng, shape, stddev, true);
}

}  // namespace iseg
