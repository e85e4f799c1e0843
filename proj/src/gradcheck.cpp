#include "iseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace iseg {

double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h,
                               std::int64_t max_coords, std::uint64_t seed) {
    check(x.defined() && x.requires_grad(), "finite_difference_check: x must require grad");
    check(h > 0.0, "finite_difference_check: h must be positive");
    check(x.dtype() == Dtype::f64, "finite_difference_check: 64-bit tensors only");

    const double probe0 = f().item();
    check(f().item() == probe0, "finite_difference_check: f non-deterministic between probes");

    x.grad_buffer();
    x.zero_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
    }
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(x.numel()), 0.0);

    std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < x.numel()) {
        // Partial Fisher-Yates: the first max_coords entries become a
        // uniform sample without replacement.
        Rng rng(seed);
        for (std::int64_t i = 0; i < max_coords; ++i) {
            const std::int64_t j = rng.uniform_int(i, x.numel() - 1);
            std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
        }
        coords.resize(static_cast<std::size_t>(max_coords));
    }

    double max_rel = 0.0;
    for (std::int64_t ci : coords) {
        const std::size_t i = static_cast<std::size_t>(ci);
        const double saved = x.mutable_data()[i];
        x.mutable_data()[i] = saved + h;
        const double fp = f().item();
        x.mutable_data()[i] = saved - h;
        const double fm = f().item();
        x.mutable_data()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace iseg
