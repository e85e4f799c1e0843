#pragma once

#include "iseg/tensor.hpp"

// Weight initializers. Every returned tensor requires gradients.

namespace iseg {

// He-normal fan-in init for conv kernels [c_out, c_in, k, k].
Tensor conv_init(Rng& rng, std::int64_t c_out, std::int64_t c_in, std::int64_t k);

// Xavier-uniform init for linear weights [out, in].
Tensor linear_init(Rng& rng, std::int64_t out, std::int64_t in);

// Zero-filled trainable tensor (biases, deliberately zeroed projections).
Tensor zeros_param(const Shape& shape);

// Normal(0, stddev) trainable tensor (embeddings).
Tensor normal_param(Rng& rng, const Shape& shape, double stddev);

}  // namespace iseg
