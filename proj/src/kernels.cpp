#include "iseg/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace iseg::kernels {

namespace {

// Work below this many output elements is not worth forking threads for.
constexpr std::int64_t kParallelCutoff = 2048;

inline void matmul_row(const double* a, const double* b, double* c, std::int64_t i, std::int64_t k,
                       std::int64_t n) {
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

inline double conv2d_cell(const double* x, const double* kr, const double* bias, std::int64_t co,
                          std::int64_t oy, std::int64_t ox, std::int64_t cin, std::int64_t h,
                          std::int64_t w, std::int64_t kh, std::int64_t kw, std::int64_t stride,
                          std::int64_t pad) {
    double acc = bias ? bias[co] : 0.0;
    const double* kbase = kr + co * cin * kh * kw;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        const double* xc = x + ci * h * w;
        const double* kc = kbase + ci * kh * kw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                acc += xc[iy * w + ix] * kc[ky * kw + kx];
            }
        }
    }
    return acc;
}

inline double conv2d_grad_input_cell(const double* gout, const double* kr, std::int64_t ci,
                                     std::int64_t iy, std::int64_t ix, std::int64_t cin,
                                     std::int64_t cout, std::int64_t kh, std::int64_t kw,
                                     std::int64_t stride, std::int64_t pad, std::int64_t oh,
                                     std::int64_t ow) {
    double acc = 0.0;
    for (std::int64_t co = 0; co < cout; ++co) {
        const double* gc = gout + co * oh * ow;
        const double* kc = kr + (co * cin + ci) * kh * kw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t num_y = iy + pad - ky;
            if (num_y < 0 || num_y % stride != 0) continue;
            const std::int64_t oy = num_y / stride;
            if (oy >= oh) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t num_x = ix + pad - kx;
                if (num_x < 0 || num_x % stride != 0) continue;
                const std::int64_t ox = num_x / stride;
                if (ox >= ow) continue;
                acc += gc[oy * ow + ox] * kc[ky * kw + kx];
            }
        }
    }
    return acc;
}

inline double conv2d_grad_kernel_cell(const double* gout, const double* x, std::int64_t co,
                                      std::int64_t ci, std::int64_t ky, std::int64_t kx,
                                      std::int64_t h, std::int64_t w, std::int64_t stride,
                                      std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    double acc = 0.0;
    const double* gc = gout + co * oh * ow;
    const double* xc = x + ci * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        const std::int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            acc += gc[oy * ow + ox] * xc[iy * w + ix];
        }
    }
    return acc;
}

struct Corners {
    std::int64_t x0, y0;
    double wx0, wx1, wy0, wy1;
};

inline Corners corners_of(double x, double y) {
    Corners c;
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    c.x0 = static_cast<std::int64_t>(fx);
    c.y0 = static_cast<std::int64_t>(fy);
    c.wx1 = x - fx;
    c.wx0 = 1.0 - c.wx1;
    c.wy1 = y - fy;
    c.wy0 = 1.0 - c.wy1;
    return c;
}

inline bool in_map(std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
    return y >= 0 && y < h && x >= 0 && x < w;
}

// Sample one channel plane [h,w] with zero padding.
inline double bilerp_plane(const double* plane, std::int64_t h, std::int64_t w, const Corners& c) {
    const std::int64_t x1 = c.x0 + 1, y1 = c.y0 + 1;
    double acc = 0.0;
    if (in_map(c.y0, c.x0, h, w)) acc += c.wy0 * c.wx0 * plane[c.y0 * w + c.x0];
    if (in_map(c.y0, x1, h, w)) acc += c.wy0 * c.wx1 * plane[c.y0 * w + x1];
    if (in_map(y1, c.x0, h, w)) acc += c.wy1 * c.wx0 * plane[y1 * w + c.x0];
    if (in_map(y1, x1, h, w)) acc += c.wy1 * c.wx1 * plane[y1 * w + x1];
    return acc;
}

// d(sample)/dx and /dy for one channel plane.
inline void bilerp_plane_dxy(const double* plane, std::int64_t h, std::int64_t w, const Corners& c,
                             double* dx, double* dy) {
    const std::int64_t x1 = c.x0 + 1, y1 = c.y0 + 1;
    const double v00 = in_map(c.y0, c.x0, h, w) ? plane[c.y0 * w + c.x0] : 0.0;
    const double v01 = in_map(c.y0, x1, h, w) ? plane[c.y0 * w + x1] : 0.0;
    const double v10 = in_map(y1, c.x0, h, w) ? plane[y1 * w + c.x0] : 0.0;
    const double v11 = in_map(y1, x1, h, w) ? plane[y1 * w + x1] : 0.0;
    *dx = c.wy0 * (v01 - v00) + c.wy1 * (v11 - v10);
    *dy = c.wx0 * (v10 - v00) + c.wx1 * (v11 - v01);
}

// Sample one channel c from token-major storage [t_total, ch] restricted to
// one level's rows.
inline double bilerp_tokens(const double* value, std::int64_t ch, std::int64_t start,
                            std::int64_t h, std::int64_t w, std::int64_t c, const Corners& cr) {
    const std::int64_t x1 = cr.x0 + 1, y1 = cr.y0 + 1;
    double acc = 0.0;
    if (in_map(cr.y0, cr.x0, h, w)) acc += cr.wy0 * cr.wx0 * value[(start + cr.y0 * w + cr.x0) * ch + c];
    if (in_map(cr.y0, x1, h, w)) acc += cr.wy0 * cr.wx1 * value[(start + cr.y0 * w + x1) * ch + c];
    if (in_map(y1, cr.x0, h, w)) acc += cr.wy1 * cr.wx0 * value[(start + y1 * w + cr.x0) * ch + c];
    if (in_map(y1, x1, h, w)) acc += cr.wy1 * cr.wx1 * value[(start + y1 * w + x1) * ch + c];
    return acc;
}

inline void bilerp_tokens_dxy(const double* value, std::int64_t ch, std::int64_t start,
                              std::int64_t h, std::int64_t w, std::int64_t c, const Corners& cr,
                              double* dx, double* dy) {
    const std::int64_t x1 = cr.x0 + 1, y1 = cr.y0 + 1;
    const double v00 = in_map(cr.y0, cr.x0, h, w) ? value[(start + cr.y0 * w + cr.x0) * ch + c] : 0.0;
    const double v01 = in_map(cr.y0, x1, h, w) ? value[(start + cr.y0 * w + x1) * ch + c] : 0.0;
    const double v10 = in_map(y1, cr.x0, h, w) ? value[(start + y1 * w + cr.x0) * ch + c] : 0.0;
    const double v11 = in_map(y1, x1, h, w) ? value[(start + y1 * w + x1) * ch + c] : 0.0;
    *dx = cr.wy0 * (v01 - v00) + cr.wy1 * (v11 - v10);
    *dy = cr.wx0 * (v10 - v00) + cr.wx1 * (v11 - v01);
}

// One query row of the deformable sample output.
inline void deform_sample_query(const double* value, const std::vector<LevelShape>& levels,
                                const std::vector<std::int64_t>& level_start, const double* locs,
                                const double* attn, std::int64_t qi, std::int64_t c,
                                std::int64_t m_heads, std::int64_t k_points, double* out) {
    const std::int64_t n_levels = static_cast<std::int64_t>(levels.size());
    const std::int64_t ch_per_head = c / m_heads;
    const std::int64_t samples = m_heads * n_levels * k_points;
    const double* qlocs = locs + qi * samples * 2;
    const double* qattn = attn + qi * samples;
    double* orow = out + qi * c;
    for (std::int64_t j = 0; j < c; ++j) orow[j] = 0.0;
    for (std::int64_t m = 0; m < m_heads; ++m) {
        const std::int64_t c0 = m * ch_per_head;
        for (std::int64_t l = 0; l < n_levels; ++l) {
            for (std::int64_t k = 0; k < k_points; ++k) {
                const std::int64_t s = (m * n_levels + l) * k_points + k;
                const double a = qattn[s];
                const Corners cr = corners_of(qlocs[s * 2 + 0], qlocs[s * 2 + 1]);
                for (std::int64_t j = 0; j < ch_per_head; ++j) {
                    orow[c0 + j] += a * bilerp_tokens(value, c, level_start[static_cast<std::size_t>(l)],
                                                      levels[static_cast<std::size_t>(l)].h,
                                                      levels[static_cast<std::size_t>(l)].w, c0 + j, cr);
                }
            }
        }
    }
}

// Per-query grads for attention weights and sampling locations.
inline void deform_sample_grad_query(const double* value, const std::vector<LevelShape>& levels,
                                     const std::vector<std::int64_t>& level_start,
                                     const double* locs, const double* attn, std::int64_t qi,
                                     std::int64_t c, std::int64_t m_heads, std::int64_t k_points,
                                     const double* gout, double* glocs, double* gattn) {
    const std::int64_t n_levels = static_cast<std::int64_t>(levels.size());
    const std::int64_t ch_per_head = c / m_heads;
    const std::int64_t samples = m_heads * n_levels * k_points;
    const double* qlocs = locs + qi * samples * 2;
    const double* qattn = attn + qi * samples;
    const double* grow = gout + qi * c;
    for (std::int64_t m = 0; m < m_heads; ++m) {
        const std::int64_t c0 = m * ch_per_head;
        for (std::int64_t l = 0; l < n_levels; ++l) {
            const std::int64_t start = level_start[static_cast<std::size_t>(l)];
            const std::int64_t h = levels[static_cast<std::size_t>(l)].h;
            const std::int64_t w = levels[static_cast<std::size_t>(l)].w;
            for (std::int64_t k = 0; k < k_points; ++k) {
                const std::int64_t s = (m * n_levels + l) * k_points + k;
                const double a = qattn[s];
                const Corners cr = corners_of(qlocs[s * 2 + 0], qlocs[s * 2 + 1]);
                double ga = 0.0, gx = 0.0, gy = 0.0;
                for (std::int64_t j = 0; j < ch_per_head; ++j) {
                    const double g = grow[c0 + j];
                    if (gattn) ga += g * bilerp_tokens(value, c, start, h, w, c0 + j, cr);
                    if (glocs) {
                        double dx, dy;
                        bilerp_tokens_dxy(value, c, start, h, w, c0 + j, cr, &dx, &dy);
                        gx += g * a * dx;
                        gy += g * a * dy;
                    }
                }
                if (gattn) gattn[qi * samples + s] += ga;
                if (glocs) {
                    glocs[(qi * samples + s) * 2 + 0] += gx;
                    glocs[(qi * samples + s) * 2 + 1] += gy;
                }
            }
        }
    }
}

// Value-grad scatter restricted to one channel, so parallelizing over
// channels keeps writes disjoint and the accumulation order fixed.
inline void deform_sample_grad_value_channel(const std::vector<LevelShape>& levels,
                                             const std::vector<std::int64_t>& level_start,
                                             const double* locs, const double* attn,
                                             std::int64_t q, std::int64_t c, std::int64_t m_heads,
                                             std::int64_t k_points, const double* gout,
                                             std::int64_t j, double* gvalue) {
    const std::int64_t n_levels = static_cast<std::int64_t>(levels.size());
    const std::int64_t ch_per_head = c / m_heads;
    const std::int64_t m = j / ch_per_head;
    const std::int64_t samples = m_heads * n_levels * k_points;
    for (std::int64_t qi = 0; qi < q; ++qi) {
        const double g = gout[qi * c + j];
        if (g == 0.0) continue;
        const double* qlocs = locs + qi * samples * 2;
        const double* qattn = attn + qi * samples;
        for (std::int64_t l = 0; l < n_levels; ++l) {
            const std::int64_t start = level_start[static_cast<std::size_t>(l)];
            const std::int64_t h = levels[static_cast<std::size_t>(l)].h;
            const std::int64_t w = levels[static_cast<std::size_t>(l)].w;
            for (std::int64_t k = 0; k < k_points; ++k) {
                const std::int64_t s = (m * n_levels + l) * k_points + k;
                const double ga = g * qattn[s];
                const Corners cr = corners_of(qlocs[s * 2 + 0], qlocs[s * 2 + 1]);
                const std::int64_t x1 = cr.x0 + 1, y1 = cr.y0 + 1;
                if (in_map(cr.y0, cr.x0, h, w))
                    gvalue[(start + cr.y0 * w + cr.x0) * c + j] += ga * cr.wy0 * cr.wx0;
                if (in_map(cr.y0, x1, h, w))
                    gvalue[(start + cr.y0 * w + x1) * c + j] += ga * cr.wy0 * cr.wx1;
                if (in_map(y1, cr.x0, h, w))
                    gvalue[(start + y1 * w + cr.x0) * c + j] += ga * cr.wy1 * cr.wx0;
                if (in_map(y1, x1, h, w))
                    gvalue[(start + y1 * w + x1) * c + j] += ga * cr.wy1 * cr.wx1;
            }
        }
    }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n) {
#pragma omp parallel for if (m * n >= kParallelCutoff) schedule(static)
    for (std::int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void conv2d_serial(const double* x, const double* k, const double* bias, double* out,
                   std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t cout,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                   std::int64_t oh, std::int64_t ow) {
    for (std::int64_t idx = 0; idx < cout * oh * ow; ++idx) {
        const std::int64_t co = idx / (oh * ow);
        const std::int64_t oy = (idx / ow) % oh;
        const std::int64_t ox = idx % ow;
        out[idx] = conv2d_cell(x, k, bias, co, oy, ox, cin, h, w, kh, kw, stride, pad);
    }
}

void conv2d(const double* x, const double* k, const double* bias, double* out, std::int64_t cin,
            std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow) {
    const std::int64_t total = cout * oh * ow;
#pragma omp parallel for if (total >= kParallelCutoff) schedule(static)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const std::int64_t co = idx / (oh * ow);
        const std::int64_t oy = (idx / ow) % oh;
        const std::int64_t ox = idx % ow;
        out[idx] = conv2d_cell(x, k, bias, co, oy, ox, cin, h, w, kh, kw, stride, pad);
    }
}

void conv2d_grad_input_serial(const double* gout, const double* k, double* gx, std::int64_t cin,
                              std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                              std::int64_t kw, std::int64_t stride, std::int64_t pad,
                              std::int64_t oh, std::int64_t ow) {
    for (std::int64_t idx = 0; idx < cin * h * w; ++idx) {
        const std::int64_t ci = idx / (h * w);
        const std::int64_t iy = (idx / w) % h;
        const std::int64_t ix = idx % w;
        gx[idx] += conv2d_grad_input_cell(gout, k, ci, iy, ix, cin, cout, kh, kw, stride, pad, oh, ow);
    }
}

void conv2d_grad_input(const double* gout, const double* k, double* gx, std::int64_t cin,
                       std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                       std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                       std::int64_t ow) {
    const std::int64_t total = cin * h * w;
#pragma omp parallel for if (total >= kParallelCutoff) schedule(static)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const std::int64_t ci = idx / (h * w);
        const std::int64_t iy = (idx / w) % h;
        const std::int64_t ix = idx % w;
        gx[idx] += conv2d_grad_input_cell(gout, k, ci, iy, ix, cin, cout, kh, kw, stride, pad, oh, ow);
    }
}

void conv2d_grad_kernel_serial(const double* gout, const double* x, double* gk, std::int64_t cin,
                               std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                               std::int64_t kw, std::int64_t stride, std::int64_t pad,
                               std::int64_t oh, std::int64_t ow) {
    for (std::int64_t idx = 0; idx < cout * cin * kh * kw; ++idx) {
        const std::int64_t co = idx / (cin * kh * kw);
        const std::int64_t ci = (idx / (kh * kw)) % cin;
        const std::int64_t ky = (idx / kw) % kh;
        const std::int64_t kx = idx % kw;
        gk[idx] += conv2d_grad_kernel_cell(gout, x, co, ci, ky, kx, h, w, stride, pad, oh, ow);
    }
}

void conv2d_grad_kernel(const double* gout, const double* x, double* gk, std::int64_t cin,
                        std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                        std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                        std::int64_t ow) {
    const std::int64_t total = cout * cin * kh * kw;
#pragma omp parallel for if (total >= kParallelCutoff) schedule(static)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const std::int64_t co = idx / (cin * kh * kw);
        const std::int64_t ci = (idx / (kh * kw)) % cin;
        const std::int64_t ky = (idx / kw) % kh;
        const std::int64_t kx = idx % kw;
        gk[idx] += conv2d_grad_kernel_cell(gout, x, co, ci, ky, kx, h, w, stride, pad, oh, ow);
    }
}

void bilinear_gather_serial(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                            const double* points, std::int64_t p, double* out) {
    for (std::int64_t pi = 0; pi < p; ++pi) {
        const Corners cr = corners_of(points[pi * 2 + 0], points[pi * 2 + 1]);
        for (std::int64_t ci = 0; ci < c; ++ci) out[ci * p + pi] = bilerp_plane(map + ci * h * w, h, w, cr);
    }
}

void bilinear_gather(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                     const double* points, std::int64_t p, double* out) {
#pragma omp parallel for if (c * p >= kParallelCutoff) schedule(static)
    for (std::int64_t pi = 0; pi < p; ++pi) {
        const Corners cr = corners_of(points[pi * 2 + 0], points[pi * 2 + 1]);
        for (std::int64_t ci = 0; ci < c; ++ci) out[ci * p + pi] = bilerp_plane(map + ci * h * w, h, w, cr);
    }
}

namespace {

inline void bilinear_grad_points_one(const double* map, std::int64_t c, std::int64_t h,
                                     std::int64_t w, const double* points, std::int64_t p,
                                     const double* gout, std::int64_t pi, double* gpoints) {
    const Corners cr = corners_of(points[pi * 2 + 0], points[pi * 2 + 1]);
    double gx = 0.0, gy = 0.0;
    for (std::int64_t ci = 0; ci < c; ++ci) {
        double dx, dy;
        bilerp_plane_dxy(map + ci * h * w, h, w, cr, &dx, &dy);
        gx += gout[ci * p + pi] * dx;
        gy += gout[ci * p + pi] * dy;
    }
    gpoints[pi * 2 + 0] += gx;
    gpoints[pi * 2 + 1] += gy;
}

inline void bilinear_grad_map_channel(std::int64_t h, std::int64_t w, const double* points,
                                      std::int64_t p, const double* gout, std::int64_t c,
                                      std::int64_t ci, double* gmap) {
    double* plane = gmap + ci * h * w;
    for (std::int64_t pi = 0; pi < p; ++pi) {
        const double g = gout[ci * p + pi];
        if (g == 0.0) continue;
        const Corners cr = corners_of(points[pi * 2 + 0], points[pi * 2 + 1]);
        const std::int64_t x1 = cr.x0 + 1, y1 = cr.y0 + 1;
        if (in_map(cr.y0, cr.x0, h, w)) plane[cr.y0 * w + cr.x0] += g * cr.wy0 * cr.wx0;
        if (in_map(cr.y0, x1, h, w)) plane[cr.y0 * w + x1] += g * cr.wy0 * cr.wx1;
        if (in_map(y1, cr.x0, h, w)) plane[y1 * w + cr.x0] += g * cr.wy1 * cr.wx0;
        if (in_map(y1, x1, h, w)) plane[y1 * w + x1] += g * cr.wy1 * cr.wx1;
    }
}

}  // namespace

void bilinear_gather_grad_serial(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                                 const double* points, std::int64_t p, const double* gout,
                                 double* gmap, double* gpoints) {
    if (gpoints) {
        for (std::int64_t pi = 0; pi < p; ++pi)
            bilinear_grad_points_one(map, c, h, w, points, p, gout, pi, gpoints);
    }
    if (gmap) {
        for (std::int64_t ci = 0; ci < c; ++ci)
            bilinear_grad_map_channel(h, w, points, p, gout, c, ci, gmap);
    }
}

void bilinear_gather_grad(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                          const double* points, std::int64_t p, const double* gout, double* gmap,
                          double* gpoints) {
    if (gpoints) {
#pragma omp parallel for if (c * p >= kParallelCutoff) schedule(static)
        for (std::int64_t pi = 0; pi < p; ++pi)
            bilinear_grad_points_one(map, c, h, w, points, p, gout, pi, gpoints);
    }
    if (gmap) {
#pragma omp parallel for if (c * p >= kParallelCutoff) schedule(static)
        for (std::int64_t ci = 0; ci < c; ++ci)
            bilinear_grad_map_channel(h, w, points, p, gout, c, ci, gmap);
    }
}

void deform_sample_serial(const double* value, const std::vector<LevelShape>& levels,
                          const std::vector<std::int64_t>& level_start, const double* locs,
                          const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                          std::int64_t k_points, double* out) {
    for (std::int64_t qi = 0; qi < q; ++qi)
        deform_sample_query(value, levels, level_start, locs, attn, qi, c, m_heads, k_points, out);
}

void deform_sample(const double* value, const std::vector<LevelShape>& levels,
                   const std::vector<std::int64_t>& level_start, const double* locs,
                   const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                   std::int64_t k_points, double* out) {
#pragma omp parallel for if (q * c >= kParallelCutoff) schedule(static)
    for (std::int64_t qi = 0; qi < q; ++qi)
        deform_sample_query(value, levels, level_start, locs, attn, qi, c, m_heads, k_points, out);
}

void deform_sample_grad_serial(const double* value, const std::vector<LevelShape>& levels,
                               const std::vector<std::int64_t>& level_start, const double* locs,
                               const double* attn, std::int64_t q, std::int64_t c,
                               std::int64_t m_heads, std::int64_t k_points, const double* gout,
                               double* gvalue, double* glocs, double* gattn) {
    if (glocs || gattn) {
        for (std::int64_t qi = 0; qi < q; ++qi)
            deform_sample_grad_query(value, levels, level_start, locs, attn, qi, c, m_heads,
                                     k_points, gout, glocs, gattn);
    }
    if (gvalue) {
        for (std::int64_t j = 0; j < c; ++j)
            deform_sample_grad_value_channel(levels, level_start, locs, attn, q, c, m_heads,
                                             k_points, gout, j, gvalue);
    }
}

void deform_sample_grad(const double* value, const std::vector<LevelShape>& levels,
                        const std::vector<std::int64_t>& level_start, const double* locs,
                        const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                        std::int64_t k_points, const double* gout, double* gvalue, double* glocs,
                        double* gattn) {
    if (glocs || gattn) {
#pragma omp parallel for if (q * c >= kParallelCutoff) schedule(static)
        for (std::int64_t qi = 0; qi < q; ++qi)
            deform_sample_grad_query(value, levels, level_start, locs, attn, qi, c, m_heads,
                                     k_points, gout, glocs, gattn);
    }
    if (gvalue) {
#pragma omp parallel for if (q * c >= kParallelCutoff) schedule(static)
        for (std::int64_t j = 0; j < c; ++j)
            deform_sample_grad_value_channel(levels, level_start, locs, attn, q, c, m_heads,
                                             k_points, gout, j, gvalue);
    }
}

}  // namespace iseg::kernels
