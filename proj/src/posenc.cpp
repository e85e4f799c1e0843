#include "iseg/posenc.hpp"

#include <cmath>

namespace iseg {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void validate(const EncodingConfig& cfg) {
    check(cfg.d_model >= 4 && cfg.d_model % 4 == 0,
          "positional encoding: d_model must be a positive multiple of 4, got " +
              std::to_string(cfg.d_model));
    check(cfg.temperature > 0.0, "positional encoding: temperature must be positive");
}

double axis_scale(const EncodingConfig& cfg, std::int64_t extent) {
    return cfg.normalize_to_2pi ? kTwoPi / static_cast<double>(extent) : 1.0;
}

// d(pe_axis_value)/d(position) at signed position p.
double pe_axis_deriv(double p, std::int64_t channel, std::int64_t half, double temperature) {
    const double omega = std::pow(temperature, -2.0 * static_cast<double>(channel / 2) /
                                                   static_cast<double>(half));
    const double a = p * omega;
    return (channel % 2 == 0 ? std::cos(a) : -std::sin(a)) * omega;
}

std::vector<double> pe_values(std::int64_t h, std::int64_t w, double cx, double cy,
                              const EncodingConfig& cfg, bool token_major) {
    const std::int64_t half = cfg.d_model / 2;
    const double sx = axis_scale(cfg, w), sy = axis_scale(cfg, h);
    std::vector<double> out(static_cast<std::size_t>(cfg.d_model * h * w));
    for (std::int64_t iy = 0; iy < h; ++iy) {
        for (std::int64_t ix = 0; ix < w; ++ix) {
            const double px = (static_cast<double>(ix) - cx) * sx;
            const double py = (static_cast<double>(iy) - cy) * sy;
            const std::int64_t p = iy * w + ix;
            for (std::int64_t ch = 0; ch < cfg.d_model; ++ch) {
                const double v = ch < half ? pe_axis_value(px, ch, half, cfg.temperature)
                                           : pe_axis_value(py, ch - half, half, cfg.temperature);
                const std::size_t at = token_major ? static_cast<std::size_t>(p * cfg.d_model + ch)
                                                   : static_cast<std::size_t>(ch * h * w + p);
                out[at] = v;
            }
        }
    }
    return out;
}

}  // namespace

double pe_axis_value(double p, std::int64_t channel, std::int64_t half, double temperature) {
    const double omega = std::pow(temperature, -2.0 * static_cast<double>(channel / 2) /
                                                   static_cast<double>(half));
    const double a = p * omega;
    return channel % 2 == 0 ? std::sin(a) : std::cos(a);
}

Tensor absolute_pe_2d(std::int64_t h, std::int64_t w, const EncodingConfig& cfg) {
    validate(cfg);
    check(h >= 1 && w >= 1, "absolute_pe_2d: empty grid");
    return Tensor::from_data({cfg.d_model, h, w}, pe_values(h, w, 0.0, 0.0, cfg, false));
}

Tensor relative_pe_2d(std::int64_t h, std::int64_t w, double center_x, double center_y,
                      const EncodingConfig& cfg) {
    validate(cfg);
    check(h >= 1 && w >= 1, "relative_pe_2d: empty grid");
    check(std::isfinite(center_x) && std::isfinite(center_y), "relative_pe_2d: non-finite center");
    return Tensor::from_data({cfg.d_model, h, w}, pe_values(h, w, center_x, center_y, cfg, false));
}

Tensor absolute_pe_tokens(std::int64_t h, std::int64_t w, const EncodingConfig& cfg) {
    validate(cfg);
    check(h >= 1 && w >= 1, "absolute_pe_tokens: empty grid");
    return Tensor::from_data({h * w, cfg.d_model}, pe_values(h, w, 0.0, 0.0, cfg, true));
}

Tensor relative_pe_tokens(const Tensor& center, std::int64_t h, std::int64_t w,
                          const EncodingConfig& cfg) {
    validate(cfg);
    check(h >= 1 && w >= 1, "relative_pe_tokens: empty grid");
    check(center.numel() == 2, "relative_pe_tokens: center must hold (x, y), got " +
                                   shape_str(center.shape()));
    const double cx = center.data()[0], cy = center.data()[1];
    Tensor t = Tensor::from_data({h * w, cfg.d_model}, pe_values(h, w, cx, cy, cfg, true), false,
                                 center.dtype());
    if (Tape::active() && center.requires_grad()) {
        t.set_requires_grad(true);
        auto ci = center.impl(), oi = t.impl();
        const std::int64_t d = cfg.d_model, half = d / 2;
        const double temp = cfg.temperature;
        const double sx = axis_scale(cfg, w), sy = axis_scale(cfg, h);
        Tape::active()->record([ci, oi, h, w, d, half, temp, sx, sy, cx, cy] {
            if (oi->grad.empty()) return;
            if (!ci->requires_grad) return;
            if (ci->grad.empty()) ci->grad.assign(2, 0.0);
            double gx = 0.0, gy = 0.0;
            for (std::int64_t iy = 0; iy < h; ++iy) {
                for (std::int64_t ix = 0; ix < w; ++ix) {
                    const double px = (static_cast<double>(ix) - cx) * sx;
                    const double py = (static_cast<double>(iy) - cy) * sy;
                    const std::int64_t p = iy * w + ix;
                    for (std::int64_t ch = 0; ch < d; ++ch) {
                        const double g = oi->grad[static_cast<std::size_t>(p * d + ch)];
                        if (g == 0.0) continue;
                        // d(arg)/d(center) = -scale
                        if (ch < half)
                            gx += g * pe_axis_deriv(px, ch, half, temp) * -sx;
                        else
                            gy += g * pe_axis_deriv(py, ch - half, half, temp) * -sy;
                    }
                }
            }
            ci->grad[0] += gx;
            ci->grad[1] += gy;
        });
    }
    return t;
}

}  // namespace iseg
