#pragma once

#include "iseg/tensor.hpp"

// 2D sinusoidal positional encodings. The d_model channels split into an
// x-half followed by a y-half; within a half, channel 2i carries
// sin(pos / T^{2i/half}) and channel 2i+1 the matching cosine. Positions are
// pixel indices of the target grid; the relative form encodes pos - pos_q
// where pos_q is a continuous (possibly off-grid) center in the same units.

namespace iseg {

struct EncodingConfig {
    std::int64_t d_model = 32;
    double temperature = 10000.0;
    // When set, positions are rescaled so a full grid extent spans 2*pi
    // before entering the sinusoids (off by default: raw pixel positions).
    bool normalize_to_2pi = false;
};

// Value of one axis-half channel at signed position p.
double pe_axis_value(double p, std::int64_t channel, std::int64_t half, double temperature);

// Map form [d_model, h, w].
Tensor absolute_pe_2d(std::int64_t h, std::int64_t w, const EncodingConfig& cfg);
Tensor relative_pe_2d(std::int64_t h, std::int64_t w, double center_x, double center_y,
                      const EncodingConfig& cfg);

// Token form [h*w, d_model], pixels row-major; matches ops::map_to_tokens.
Tensor absolute_pe_tokens(std::int64_t h, std::int64_t w, const EncodingConfig& cfg);

// Token form with a differentiable center: center is a 2-element tensor
// (x, y) in grid units, and gradients of the encoding flow back into it.
Tensor relative_pe_tokens(const Tensor& center, std::int64_t h, std::int64_t w,
                          const EncodingConfig& cfg);

}  // namespace iseg
