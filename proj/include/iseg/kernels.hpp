#pragma once

#include <cstdint>
#include <vector>

// Raw numeric kernels. Each heavy kernel has a serial reference and an
// OpenMP variant; both call the same per-element routine, so outputs are
// bit-identical for any thread count. The autodiff ops dispatch to the
// parallel variants; tests compare against the serial ones.

namespace iseg::kernels {

struct LevelShape {
    std::int64_t h = 0;
    std::int64_t w = 0;
};

// c[m,n] = sum_k a[m,k] * b[k,n]
void matmul_serial(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n);
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n);

// out[co,y,x] over input [ci,h,w], kernels [co,ci,kh,kw]; bias may be null.
void conv2d_serial(const double* x, const double* k, const double* bias, double* out,
                   std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t cout,
                   std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                   std::int64_t oh, std::int64_t ow);
void conv2d(const double* x, const double* k, const double* bias, double* out, std::int64_t cin,
            std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh, std::int64_t kw,
            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow);

// Gather-form gradients; each output element is owned by one iteration.
void conv2d_grad_input_serial(const double* gout, const double* k, double* gx, std::int64_t cin,
                              std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                              std::int64_t kw, std::int64_t stride, std::int64_t pad,
                              std::int64_t oh, std::int64_t ow);
void conv2d_grad_input(const double* gout, const double* k, double* gx, std::int64_t cin,
                       std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                       std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                       std::int64_t ow);

void conv2d_grad_kernel_serial(const double* gout, const double* x, double* gk, std::int64_t cin,
                               std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                               std::int64_t kw, std::int64_t stride, std::int64_t pad,
                               std::int64_t oh, std::int64_t ow);
void conv2d_grad_kernel(const double* gout, const double* x, double* gk, std::int64_t cin,
                        std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t kh,
                        std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                        std::int64_t ow);

// Bilinear gather on a channel-first map [c,h,w] at continuous pixel
// coordinates (x horizontal, origin at the top-left cell center). Corners
// outside [0,h-1]x[0,w-1] contribute zero. points is [p][2] = (x,y),
// out is [c][p].
void bilinear_gather_serial(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                            const double* points, std::int64_t p, double* out);
void bilinear_gather(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                     const double* points, std::int64_t p, double* out);

// Accumulates into gmap [c,h,w] and gpoints [p][2]; either may be null.
void bilinear_gather_grad_serial(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                                 const double* points, std::int64_t p, const double* gout,
                                 double* gmap, double* gpoints);
void bilinear_gather_grad(const double* map, std::int64_t c, std::int64_t h, std::int64_t w,
                          const double* points, std::int64_t p, const double* gout, double* gmap,
                          double* gpoints);

// Deformable attention sampling over a level-concatenated token buffer.
//   value: [t_total, c] rows in level order, level l spans rows
//          [level_start[l], level_start[l] + h_l*w_l)
//   locs:  [q][m][l][k][2] pixel coordinates in level l's own grid
//   attn:  [q][m][l][k] already normalized
//   out:   [q][c], head m owns channels [m*c/m_heads, (m+1)*c/m_heads)
void deform_sample_serial(const double* value, const std::vector<LevelShape>& levels,
                          const std::vector<std::int64_t>& level_start, const double* locs,
                          const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                          std::int64_t k_points, double* out);
void deform_sample(const double* value, const std::vector<LevelShape>& levels,
                   const std::vector<std::int64_t>& level_start, const double* locs,
                   const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                   std::int64_t k_points, double* out);

// Accumulates into gvalue/glocs/gattn; any of them may be null.
void deform_sample_grad_serial(const double* value, const std::vector<LevelShape>& levels,
                               const std::vector<std::int64_t>& level_start, const double* locs,
                               const double* attn, std::int64_t q, std::int64_t c,
                               std::int64_t m_heads, std::int64_t k_points, const double* gout,
                               double* gvalue, double* glocs, double* gattn);
void deform_sample_grad(const double* value, const std::vector<LevelShape>& levels,
                        const std::vector<std::int64_t>& level_start, const double* locs,
                        const double* attn, std::int64_t q, std::int64_t c, std::int64_t m_heads,
                        std::int64_t k_points, const double* gout, double* gvalue, double* glocs,
                        double* gattn);

int max_threads();

}  // namespace iseg::kernels
