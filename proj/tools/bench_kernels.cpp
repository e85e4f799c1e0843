#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iseg/kernels.hpp"
#include "iseg/tensor.hpp"

// Times each heavy kernel in its serial and OpenMP form on a representative
// problem size and checks the outputs stay bit-identical. Exits nonzero if
// any pair diverges, so the table doubles as a parity harness.

using namespace iseg;
namespace k = iseg::kernels;

namespace {

struct Row {
    std::string name;
    std::string size;
    double serial_ms = 0.0;
    double parallel_ms = 0.0;
    double max_diff = 0.0;
};

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

template <typename F>
double time_best_ms(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Row bench_matmul(Rng& rng, int reps) {
    const std::int64_t m = 256, kk = 256, n = 256;
    std::vector<double> a = random_vec(rng, static_cast<std::size_t>(m * kk));
    std::vector<double> b = random_vec(rng, static_cast<std::size_t>(kk * n));
    std::vector<double> cs(static_cast<std::size_t>(m * n)), cp(cs.size());
    Row row{"matmul", "256x256 * 256x256"};
    row.serial_ms = time_best_ms(reps, [&] { k::matmul_serial(a.data(), b.data(), cs.data(), m, kk, n); });
    row.parallel_ms = time_best_ms(reps, [&] { k::matmul(a.data(), b.data(), cp.data(), m, kk, n); });
    row.max_diff = max_abs_diff(cs, cp);
    return row;
}

Row bench_conv2d(Rng& rng, int reps) {
    const std::int64_t cin = 16, h = 96, w = 96, cout = 32, kh = 3, kw = 3, stride = 1, pad = 1;
    const std::int64_t oh = h, ow = w;
    std::vector<double> x = random_vec(rng, static_cast<std::size_t>(cin * h * w));
    std::vector<double> kern = random_vec(rng, static_cast<std::size_t>(cout * cin * kh * kw));
    std::vector<double> bias = random_vec(rng, static_cast<std::size_t>(cout));
    std::vector<double> os(static_cast<std::size_t>(cout * oh * ow)), op(os.size());
    Row row{"conv2d", "16x96x96 -> 32, 3x3"};
    row.serial_ms = time_best_ms(reps, [&] {
        k::conv2d_serial(x.data(), kern.data(), bias.data(), os.data(), cin, h, w, cout, kh, kw,
                         stride, pad, oh, ow);
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        k::conv2d(x.data(), kern.data(), bias.data(), op.data(), cin, h, w, cout, kh, kw, stride,
                  pad, oh, ow);
    });
    row.max_diff = max_abs_diff(os, op);
    return row;
}

Row bench_conv2d_grad_input(Rng& rng, int reps) {
    const std::int64_t cin = 16, h = 96, w = 96, cout = 32, kh = 3, kw = 3, stride = 1, pad = 1;
    const std::int64_t oh = h, ow = w;
    std::vector<double> gout = random_vec(rng, static_cast<std::size_t>(cout * oh * ow));
    std::vector<double> kern = random_vec(rng, static_cast<std::size_t>(cout * cin * kh * kw));
    std::vector<double> gs(static_cast<std::size_t>(cin * h * w)), gp(gs.size());
    Row row{"conv2d_grad_input", "16x96x96 -> 32, 3x3"};
    row.serial_ms = time_best_ms(reps, [&] {
        std::fill(gs.begin(), gs.end(), 0.0);
        k::conv2d_grad_input_serial(gout.data(), kern.data(), gs.data(), cin, h, w, cout, kh, kw,
                                    stride, pad, oh, ow);
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        std::fill(gp.begin(), gp.end(), 0.0);
        k::conv2d_grad_input(gout.data(), kern.data(), gp.data(), cin, h, w, cout, kh, kw, stride,
                             pad, oh, ow);
    });
    row.max_diff = max_abs_diff(gs, gp);
    return row;
}

Row bench_conv2d_grad_kernel(Rng& rng, int reps) {
    const std::int64_t cin = 16, h = 96, w = 96, cout = 32, kh = 3, kw = 3, stride = 1, pad = 1;
    const std::int64_t oh = h, ow = w;
    std::vector<double> gout = random_vec(rng, static_cast<std::size_t>(cout * oh * ow));
    std::vector<double> x = random_vec(rng, static_cast<std::size_t>(cin * h * w));
    std::vector<double> gs(static_cast<std::size_t>(cout * cin * kh * kw)), gp(gs.size());
    Row row{"conv2d_grad_kernel", "16x96x96 -> 32, 3x3"};
    row.serial_ms = time_best_ms(reps, [&] {
        std::fill(gs.begin(), gs.end(), 0.0);
        k::conv2d_grad_kernel_serial(gout.data(), x.data(), gs.data(), cin, h, w, cout, kh, kw,
                                     stride, pad, oh, ow);
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        std::fill(gp.begin(), gp.end(), 0.0);
        k::conv2d_grad_kernel(gout.data(), x.data(), gp.data(), cin, h, w, cout, kh, kw, stride,
                              pad, oh, ow);
    });
    row.max_diff = max_abs_diff(gs, gp);
    return row;
}

Row bench_bilinear_gather(Rng& rng, int reps) {
    const std::int64_t c = 32, h = 64, w = 64, p = 50000;
    std::vector<double> map = random_vec(rng, static_cast<std::size_t>(c * h * w));
    std::vector<double> points(static_cast<std::size_t>(p * 2));
    for (std::int64_t i = 0; i < p; ++i) {
        points[static_cast<std::size_t>(2 * i)] = rng.uniform(-1.0, static_cast<double>(w));
        points[static_cast<std::size_t>(2 * i + 1)] = rng.uniform(-1.0, static_cast<double>(h));
    }
    std::vector<double> os(static_cast<std::size_t>(c * p)), op(os.size());
    Row row{"bilinear_gather", "32x64x64, 50k points"};
    row.serial_ms = time_best_ms(
        reps, [&] { k::bilinear_gather_serial(map.data(), c, h, w, points.data(), p, os.data()); });
    row.parallel_ms = time_best_ms(
        reps, [&] { k::bilinear_gather(map.data(), c, h, w, points.data(), p, op.data()); });
    row.max_diff = max_abs_diff(os, op);
    return row;
}

Row bench_bilinear_gather_grad(Rng& rng, int reps) {
    const std::int64_t c = 32, h = 64, w = 64, p = 50000;
    std::vector<double> map = random_vec(rng, static_cast<std::size_t>(c * h * w));
    std::vector<double> points(static_cast<std::size_t>(p * 2));
    for (std::int64_t i = 0; i < p; ++i) {
        points[static_cast<std::size_t>(2 * i)] = rng.uniform(-1.0, static_cast<double>(w));
        points[static_cast<std::size_t>(2 * i + 1)] = rng.uniform(-1.0, static_cast<double>(h));
    }
    std::vector<double> gout = random_vec(rng, static_cast<std::size_t>(c * p));
    std::vector<double> gms(map.size()), gmp(map.size());
    std::vector<double> gps(points.size()), gpp(points.size());
    Row row{"bilinear_gather_grad", "32x64x64, 50k points"};
    row.serial_ms = time_best_ms(reps, [&] {
        std::fill(gms.begin(), gms.end(), 0.0);
        std::fill(gps.begin(), gps.end(), 0.0);
        k::bilinear_gather_grad_serial(map.data(), c, h, w, points.data(), p, gout.data(),
                                       gms.data(), gps.data());
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        std::fill(gmp.begin(), gmp.end(), 0.0);
        std::fill(gpp.begin(), gpp.end(), 0.0);
        k::bilinear_gather_grad(map.data(), c, h, w, points.data(), p, gout.data(), gmp.data(),
                                gpp.data());
    });
    row.max_diff = std::max(max_abs_diff(gms, gmp), max_abs_diff(gps, gpp));
    return row;
}

struct DeformProblem {
    std::vector<k::LevelShape> levels;
    std::vector<std::int64_t> level_start;
    std::int64_t t_total = 0, q = 0, c = 32, m = 8, kp = 4;
    std::vector<double> value, locs, attn, gout;
};

DeformProblem make_deform_problem(Rng& rng) {
    DeformProblem pb;
    pb.levels = {{64, 64}, {32, 32}, {16, 16}, {8, 8}};
    for (const k::LevelShape& ls : pb.levels) {
        pb.level_start.push_back(pb.t_total);
        pb.t_total += ls.h * ls.w;
    }
    pb.q = pb.t_total;
    pb.value = random_vec(rng, static_cast<std::size_t>(pb.t_total * pb.c));
    const std::int64_t l = static_cast<std::int64_t>(pb.levels.size());
    pb.locs.resize(static_cast<std::size_t>(pb.q * pb.m * l * pb.kp * 2));
    pb.attn.resize(static_cast<std::size_t>(pb.q * pb.m * l * pb.kp));
    std::size_t li = 0, ai = 0;
    for (std::int64_t qq = 0; qq < pb.q; ++qq)
        for (std::int64_t mm = 0; mm < pb.m; ++mm) {
            double sum = 0.0;
            std::size_t a0 = ai;
            for (std::int64_t ll = 0; ll < l; ++ll)
                for (std::int64_t kk = 0; kk < pb.kp; ++kk) {
                    pb.locs[li++] = rng.uniform(0.0, static_cast<double>(pb.levels[ll].w - 1));
                    pb.locs[li++] = rng.uniform(0.0, static_cast<double>(pb.levels[ll].h - 1));
                    double a = rng.uniform(0.0, 1.0);
                    pb.attn[ai++] = a;
                    sum += a;
                }
            for (std::size_t i = a0; i < ai; ++i) pb.attn[i] /= sum;
        }
    pb.gout = random_vec(rng, static_cast<std::size_t>(pb.q * pb.c));
    return pb;
}

Row bench_deform_sample(Rng& rng, int reps) {
    DeformProblem pb = make_deform_problem(rng);
    std::vector<double> os(static_cast<std::size_t>(pb.q * pb.c)), op(os.size());
    Row row{"deform_sample", "4 levels 64..8, q=5440"};
    row.serial_ms = time_best_ms(reps, [&] {
        k::deform_sample_serial(pb.value.data(), pb.levels, pb.level_start, pb.locs.data(),
                                pb.attn.data(), pb.q, pb.c, pb.m, pb.kp, os.data());
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        k::deform_sample(pb.value.data(), pb.levels, pb.level_start, pb.locs.data(),
                         pb.attn.data(), pb.q, pb.c, pb.m, pb.kp, op.data());
    });
    row.max_diff = max_abs_diff(os, op);
    return row;
}

Row bench_deform_sample_grad(Rng& rng, int reps) {
    DeformProblem pb = make_deform_problem(rng);
    std::vector<double> gvs(pb.value.size()), gvp(pb.value.size());
    std::vector<double> gls(pb.locs.size()), glp(pb.locs.size());
    std::vector<double> gas(pb.attn.size()), gap(pb.attn.size());
    Row row{"deform_sample_grad", "4 levels 64..8, q=5440"};
    row.serial_ms = time_best_ms(reps, [&] {
        std::fill(gvs.begin(), gvs.end(), 0.0);
        std::fill(gls.begin(), gls.end(), 0.0);
        std::fill(gas.begin(), gas.end(), 0.0);
        k::deform_sample_grad_serial(pb.value.data(), pb.levels, pb.level_start, pb.locs.data(),
                                     pb.attn.data(), pb.q, pb.c, pb.m, pb.kp, pb.gout.data(),
                                     gvs.data(), gls.data(), gas.data());
    });
    row.parallel_ms = time_best_ms(reps, [&] {
        std::fill(gvp.begin(), gvp.end(), 0.0);
        std::fill(glp.begin(), glp.end(), 0.0);
        std::fill(gap.begin(), gap.end(), 0.0);
        k::deform_sample_grad(pb.value.data(), pb.levels, pb.level_start, pb.locs.data(),
                              pb.attn.data(), pb.q, pb.c, pb.m, pb.kp, pb.gout.data(), gvp.data(),
                              glp.data(), gap.data());
    });
    row.max_diff = std::max(max_abs_diff(gvs, gvp),
                            std::max(max_abs_diff(gls, glp), max_abs_diff(gas, gap)));
    return row;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    int reps = 5;
    std::uint64_t seed = 21;
    app.add_option("--reps", reps, "timed repetitions per variant (best is reported)");
    app.add_option("--seed", seed, "input seed");
    CLI11_PARSE(app, argc, argv);

    Rng rng(seed);
    std::vector<Row> rows = {
        bench_matmul(rng, reps),
        bench_conv2d(rng, reps),
        bench_conv2d_grad_input(rng, reps),
        bench_conv2d_grad_kernel(rng, reps),
        bench_bilinear_gather(rng, reps),
        bench_bilinear_gather_grad(rng, reps),
        bench_deform_sample(rng, reps),
        bench_deform_sample_grad(rng, reps),
    };

    std::printf("threads: %d, reps: %d (best of)\n", k::max_threads(), reps);
    std::printf("%-22s %-24s %12s %12s %9s %10s\n", "kernel", "size", "serial ms", "openmp ms",
                "speedup", "max diff");
    bool ok = true;
    for (const Row& r : rows) {
        std::printf("%-22s %-24s %12.3f %12.3f %8.2fx %10.2e\n", r.name.c_str(), r.size.c_str(),
                    r.serial_ms, r.parallel_ms, r.serial_ms / r.parallel_ms, r.max_diff);
        if (r.max_diff != 0.0) ok = false;
    }
    if (!ok) {
        std::printf("FAIL: serial and OpenMP outputs differ\n");
        return 1;
    }
    return 0;
}
