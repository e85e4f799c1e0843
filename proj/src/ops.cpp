#include "iseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace iseg::ops {

namespace {

using ImplPtr = std::shared_ptr<Tensor::Impl>;

Dtype join(const Tensor& a) { return a.dtype(); }

Dtype join(const Tensor& a, const Tensor& b) {
    return (a.dtype() == Dtype::f32 && b.dtype() == Dtype::f32) ? Dtype::f32 : Dtype::f64;
}

std::vector<double>& gbuf(const ImplPtr& i) {
    if (i->grad.empty()) i->grad.assign(i->data.size(), 0.0);
    return i->grad;
}

// Null when the output never received a gradient (dead branch).
const std::vector<double>* gout(const ImplPtr& i) { return i->grad.empty() ? nullptr : &i->grad; }

bool want_grad(const Tensor& a) { return Tape::active() != nullptr && a.requires_grad(); }

bool want_grad(const Tensor& a, const Tensor& b) {
    return Tape::active() != nullptr && (a.requires_grad() || b.requires_grad());
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a, b));
    if (want_grad(a, b)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = t.impl();
        Tape::active()->record([ai, bi, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
            }
            if (bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
            }
        });
    }
    return t;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a, b));
    if (want_grad(a, b)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = t.impl();
        Tape::active()->record([ai, bi, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
            }
            if (bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
            }
        });
    }
    return t;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a, b));
    if (want_grad(a, b)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = t.impl();
        Tape::active()->record([ai, bi, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * ai->data[i];
            }
        });
    }
    return t;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a, b));
    if (want_grad(a, b)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = t.impl();
        Tape::active()->record([ai, bi, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] / bi->data[i];
            }
            if (bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::size_t i = 0; i < g->size(); ++i)
                    gb[i] -= (*g)[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
            }
        });
    }
    return t;
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
        });
    }
    return t;
}

Tensor scalar_mul(const Tensor& a, double s) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, s] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * s;
        });
    }
    return t;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i)
                if (ai->data[i] > 0.0) ga[i] += (*g)[i];
        });
    }
    return t;
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.data()[i]);
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double y = oi->data[i];
                ga[i] += (*g)[i] * y * (1.0 - y);
            }
        });
    }
    return t;
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * oi->data[i];
        });
    }
    return t;
}

Tensor log(const Tensor& a) {
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.data()[i]);
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] / ai->data[i];
        });
    }
    return t;
}

Tensor reshape(const Tensor& a, Shape shape) {
    check(shape_numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " to " +
                                               shape_str(shape) + " changes element count");
    Tensor t = Tensor::from_data(std::move(shape), a.data(), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
        });
    }
    return t;
}

Tensor transpose2d(const Tensor& a) {
    check(a.rank() == 2, "transpose2d: expected rank 2, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(j * m + i)] = a.data()[static_cast<std::size_t>(i * n + j)];
    Tensor t = Tensor::from_data({n, m}, std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, m, n] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>(i * n + j)] += (*g)[static_cast<std::size_t>(j * m + i)];
        });
    }
    return t;
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len) {
    check(a.rank() >= 1, "slice_rows: scalar input");
    check(start >= 0 && len >= 1 && start + len <= a.dim(0),
          "slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of " + std::to_string(a.dim(0)) + " rows");
    const std::int64_t rs = a.numel() / a.dim(0);
    std::vector<double> out(static_cast<std::size_t>(len * rs));
    std::copy_n(a.data().begin() + start * rs, len * rs, out.begin());
    Shape shape = a.shape();
    shape[0] = len;
    Tensor t = Tensor::from_data(std::move(shape), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, start, rs] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < g->size(); ++i)
                ga[static_cast<std::size_t>(start * rs) + i] += (*g)[i];
        });
    }
    return t;
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len) {
    check(a.rank() == 2, "slice_cols: expected rank 2, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    check(start >= 0 && len >= 1 && start + len <= n,
          "slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of " + std::to_string(n) + " cols");
    std::vector<double> out(static_cast<std::size_t>(m * len));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < len; ++j)
            out[static_cast<std::size_t>(i * len + j)] = a.data()[static_cast<std::size_t>(i * n + start + j)];
    Tensor t = Tensor::from_data({m, len}, std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, m, n, start, len] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < len; ++j)
                    ga[static_cast<std::size_t>(i * n + start + j)] += (*g)[static_cast<std::size_t>(i * len + j)];
        });
    }
    return t;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_rows: no parts");
    Shape shape = parts[0].shape();
    check(!shape.empty(), "concat_rows: scalar part");
    std::int64_t rows = 0;
    bool all_f32 = true, any_grad = false;
    for (const Tensor& p : parts) {
        Shape tail = p.shape();
        check(!tail.empty(), "concat_rows: scalar part");
        tail[0] = shape[0];
        check(tail == shape, "concat_rows: trailing dims differ: " + shape_str(p.shape()) +
                                 " vs " + shape_str(parts[0].shape()));
        rows += p.dim(0);
        all_f32 = all_f32 && p.dtype() == Dtype::f32;
        any_grad = any_grad || p.requires_grad();
    }
    const std::int64_t rs = parts[0].numel() / parts[0].dim(0);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows * rs));
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    shape[0] = rows;
    Tensor t = Tensor::from_data(std::move(shape), std::move(out), false,
                                 all_f32 ? Dtype::f32 : Dtype::f64);
    if (Tape::active() && any_grad) {
        t.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = t.impl();
        Tape::active()->record([impls, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            std::size_t off = 0;
            for (const auto& pi : impls) {
                if (pi->requires_grad) {
                    auto& gp = gbuf(pi);
                    for (std::size_t i = 0; i < pi->data.size(); ++i) gp[i] += (*g)[off + i];
                }
                off += pi->data.size();
            }
        });
    }
    return t;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_cols: no parts");
    const std::int64_t m = parts[0].dim(0);
    std::int64_t cols = 0;
    bool all_f32 = true, any_grad = false;
    for (const Tensor& p : parts) {
        check(p.rank() == 2 && p.dim(0) == m,
              "concat_cols: expected [" + std::to_string(m) + ",*], got " + shape_str(p.shape()));
        cols += p.dim(1);
        all_f32 = all_f32 && p.dtype() == Dtype::f32;
        any_grad = any_grad || p.requires_grad();
    }
    std::vector<double> out(static_cast<std::size_t>(m * cols));
    std::int64_t at = 0;
    for (const Tensor& p : parts) {
        const std::int64_t n = p.dim(1);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i * cols + at + j)] = p.data()[static_cast<std::size_t>(i * n + j)];
        at += n;
    }
    Tensor t = Tensor::from_data({m, cols}, std::move(out), false, all_f32 ? Dtype::f32 : Dtype::f64);
    if (Tape::active() && any_grad) {
        t.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        std::vector<std::int64_t> widths;
        for (const Tensor& p : parts) {
            impls.push_back(p.impl());
            widths.push_back(p.dim(1));
        }
        auto oi = t.impl();
        Tape::active()->record([impls, widths, oi, m, cols] {
            const auto* g = gout(oi);
            if (!g) return;
            std::int64_t at2 = 0;
            for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                const std::int64_t n = widths[pi];
                if (impls[pi]->requires_grad) {
                    auto& gp = gbuf(impls[pi]);
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j)
                            gp[static_cast<std::size_t>(i * n + j)] +=
                                (*g)[static_cast<std::size_t>(i * cols + at2 + j)];
                }
                at2 += n;
            }
        });
    }
    return t;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows) {
    check(a.rank() >= 1, "gather_rows: scalar input");
    check(!rows.empty(), "gather_rows: empty index list");
    const std::int64_t rs = a.numel() / a.dim(0);
    std::vector<double> out(rows.size() * static_cast<std::size_t>(rs));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        check(rows[r] >= 0 && rows[r] < a.dim(0),
              "gather_rows: index " + std::to_string(rows[r]) + " out of " + std::to_string(a.dim(0)));
        std::copy_n(a.data().begin() + rows[r] * rs, rs, out.begin() + static_cast<std::int64_t>(r) * rs);
    }
    Shape shape = a.shape();
    shape[0] = static_cast<std::int64_t>(rows.size());
    Tensor t = Tensor::from_data(std::move(shape), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, rows, rs] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::int64_t j = 0; j < rs; ++j)
                    ga[static_cast<std::size_t>(rows[r] * rs + j)] +=
                        (*g)[r * static_cast<std::size_t>(rs) + static_cast<std::size_t>(j)];
        });
    }
    return t;
}

Tensor map_to_tokens(const Tensor& map) {
    check(map.rank() == 3, "map_to_tokens: expected [c,h,w], got " + shape_str(map.shape()));
    const std::int64_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
    std::vector<double> out(static_cast<std::size_t>(c * hw));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t p = 0; p < hw; ++p)
            out[static_cast<std::size_t>(p * c + ci)] = map.data()[static_cast<std::size_t>(ci * hw + p)];
    Tensor t = Tensor::from_data({hw, c}, std::move(out), false, join(map));
    if (want_grad(map)) {
        t.set_requires_grad(true);
        auto ai = map.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, c, hw] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::int64_t ci = 0; ci < c; ++ci)
                for (std::int64_t p = 0; p < hw; ++p)
                    ga[static_cast<std::size_t>(ci * hw + p)] += (*g)[static_cast<std::size_t>(p * c + ci)];
        });
    }
    return t;
}

Tensor tokens_to_map(const Tensor& tokens, std::int64_t h, std::int64_t w) {
    check(tokens.rank() == 2, "tokens_to_map: expected [t,c], got " + shape_str(tokens.shape()));
    check(tokens.dim(0) == h * w, "tokens_to_map: " + std::to_string(tokens.dim(0)) +
                                      " tokens but grid is " + std::to_string(h) + "x" + std::to_string(w));
    const std::int64_t c = tokens.dim(1), hw = h * w;
    std::vector<double> out(static_cast<std::size_t>(c * hw));
    for (std::int64_t p = 0; p < hw; ++p)
        for (std::int64_t ci = 0; ci < c; ++ci)
            out[static_cast<std::size_t>(ci * hw + p)] = tokens.data()[static_cast<std::size_t>(p * c + ci)];
    Tensor t = Tensor::from_data({c, h, w}, std::move(out), false, join(tokens));
    if (want_grad(tokens)) {
        t.set_requires_grad(true);
        auto ai = tokens.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, c, hw] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::int64_t p = 0; p < hw; ++p)
                for (std::int64_t ci = 0; ci < c; ++ci)
                    ga[static_cast<std::size_t>(p * c + ci)] += (*g)[static_cast<std::size_t>(ci * hw + p)];
        });
    }
    return t;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
    check(a.rank() == 2, "add_row_broadcast: expected [n,c], got " + shape_str(a.shape()));
    check(row.rank() == 1 && row.dim(0) == a.dim(1),
          "add_row_broadcast: row " + shape_str(row.shape()) + " vs cols " + std::to_string(a.dim(1)));
    const std::int64_t n = a.dim(0), c = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i * c + j)] = a.data()[static_cast<std::size_t>(i * c + j)] + row.data()[static_cast<std::size_t>(j)];
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a, row));
    if (want_grad(a, row)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), ri = row.impl(), oi = t.impl();
        Tape::active()->record([ai, ri, oi, n, c] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
            }
            if (ri->requires_grad) {
                auto& gr = gbuf(ri);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < c; ++j) gr[static_cast<std::size_t>(j)] += (*g)[static_cast<std::size_t>(i * c + j)];
            }
        });
    }
    return t;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor t = Tensor::from_data({1}, {s}, false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[0];
        });
    }
    return t;
}

Tensor mean_all(const Tensor& a) {
    check(a.numel() > 0, "mean_all: empty tensor");
    return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, std::int64_t axis) {
    check(axis >= 0 && axis < a.rank(), "softmax: axis " + std::to_string(axis) + " out of rank " +
                                            std::to_string(a.rank()));
    const std::int64_t n = a.dim(axis);
    check(n >= 1, "softmax: empty axis");
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::vector<double> out(static_cast<std::size_t>(a.numel()));
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            double m = a.data()[static_cast<std::size_t>(base)];
            for (std::int64_t i = 1; i < n; ++i) m = std::max(m, a.data()[static_cast<std::size_t>(base + i * inner)]);
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double e = std::exp(a.data()[static_cast<std::size_t>(base + i * inner)] - m);
                out[static_cast<std::size_t>(base + i * inner)] = e;
                s += e;
            }
            for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(base + i * inner)] /= s;
        }
    }
    Tensor t = Tensor::from_data(a.shape(), std::move(out), false, join(a));
    if (want_grad(a)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), oi = t.impl();
        Tape::active()->record([ai, oi, outer, inner, n] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& ga = gbuf(ai);
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        const std::size_t idx = static_cast<std::size_t>(base + i * inner);
                        dot += (*g)[idx] * oi->data[idx];
                    }
                    for (std::int64_t i = 0; i < n; ++i) {
                        const std::size_t idx = static_cast<std::size_t>(base + i * inner);
                        ga[idx] += oi->data[idx] * ((*g)[idx] - dot);
                    }
                }
            }
        });
    }
    return t;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check(x.rank() >= 1, "layer_norm: scalar input");
    const std::int64_t n = x.dim(x.rank() - 1);
    check(n >= 1, "layer_norm: empty normalization axis");
    check(gamma.rank() == 1 && gamma.dim(0) == n && beta.rank() == 1 && beta.dim(0) == n,
          "layer_norm: gamma/beta must be [" + std::to_string(n) + "]");
    const std::int64_t rows = x.numel() / n;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* v = x.data().data() + r * n;
        double mu = 0.0;
        for (std::int64_t j = 0; j < n; ++j) mu += v[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t j = 0; j < n; ++j) var += (v[j] - mu) * (v[j] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(r * n + j)] = gamma.data()[static_cast<std::size_t>(j)] * (v[j] - mu) * inv + beta.data()[static_cast<std::size_t>(j)];
    }
    Tensor t = Tensor::from_data(x.shape(), std::move(out), false, join(x));
    if (Tape::active() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        t.set_requires_grad(true);
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = t.impl();
        Tape::active()->record([xi, gi, bi, oi, rows, n, eps] {
            const auto* g = gout(oi);
            if (!g) return;
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* v = xi->data.data() + r * n;
                const double* gr = g->data() + r * n;
                double mu = 0.0;
                for (std::int64_t j = 0; j < n; ++j) mu += v[j];
                mu /= static_cast<double>(n);
                double var = 0.0;
                for (std::int64_t j = 0; j < n; ++j) var += (v[j] - mu) * (v[j] - mu);
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + eps);
                if (gi->requires_grad || bi->requires_grad) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double xh = (v[j] - mu) * inv;
                        if (gi->requires_grad) gbuf(gi)[static_cast<std::size_t>(j)] += gr[j] * xh;
                        if (bi->requires_grad) gbuf(bi)[static_cast<std::size_t>(j)] += gr[j];
                    }
                }
                if (xi->requires_grad) {
                    double ma = 0.0, max_ = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double a = gr[j] * gi->data[static_cast<std::size_t>(j)];
                        const double xh = (v[j] - mu) * inv;
                        ma += a;
                        max_ += a * xh;
                    }
                    ma /= static_cast<double>(n);
                    max_ /= static_cast<double>(n);
                    auto& gx = gbuf(xi);
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double a = gr[j] * gi->data[static_cast<std::size_t>(j)];
                        const double xh = (v[j] - mu) * inv;
                        gx[static_cast<std::size_t>(r * n + j)] += inv * (a - ma - xh * max_);
                    }
                }
            }
        });
    }
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 inputs, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
    check(a.dim(1) == b.dim(0), "matmul: inner dims differ: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
    Tensor t = Tensor::from_data({m, n}, std::move(out), false, join(a, b));
    if (want_grad(a, b)) {
        t.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = t.impl();
        Tape::active()->record([ai, bi, oi, m, k, n] {
            const auto* g = gout(oi);
            if (!g) return;
            if (ai->requires_grad) {
                auto& ga = gbuf(ai);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < n; ++j)
                            acc += (*g)[static_cast<std::size_t>(i * n + j)] * bi->data[static_cast<std::size_t>(p * n + j)];
                        ga[static_cast<std::size_t>(i * k + p)] += acc;
                    }
            }
            if (bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::int64_t p = 0; p < k; ++p)
                    for (std::int64_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < m; ++i)
                            acc += ai->data[static_cast<std::size_t>(i * k + p)] * (*g)[static_cast<std::size_t>(i * n + j)];
                        gb[static_cast<std::size_t>(p * n + j)] += acc;
                    }
            }
        });
    }
    return t;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.rank() == 2 && w.rank() == 2, "linear: expected [n,in] and [out,in], got " +
                                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
    check(x.dim(1) == w.dim(1), "linear: in dims differ: " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    const std::int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    const bool has_bias = b.defined();
    if (has_bias)
        check(b.rank() == 1 && b.dim(0) == out_dim, "linear: bias must be [" + std::to_string(out_dim) + "]");
    std::vector<double> wt(static_cast<std::size_t>(in * out_dim));
    for (std::int64_t o = 0; o < out_dim; ++o)
        for (std::int64_t j = 0; j < in; ++j) wt[static_cast<std::size_t>(j * out_dim + o)] = w.data()[static_cast<std::size_t>(o * in + j)];
    std::vector<double> out(static_cast<std::size_t>(n * out_dim));
    kernels::matmul(x.data().data(), wt.data(), out.data(), n, in, out_dim);
    if (has_bias) {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t o = 0; o < out_dim; ++o) out[static_cast<std::size_t>(i * out_dim + o)] += b.data()[static_cast<std::size_t>(o)];
    }
    const Dtype dt = has_bias ? ((join(x, w) == Dtype::f32 && b.dtype() == Dtype::f32) ? Dtype::f32 : Dtype::f64)
                              : join(x, w);
    Tensor t = Tensor::from_data({n, out_dim}, std::move(out), false, dt);
    const bool needs = Tape::active() &&
                       (x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()));
    if (needs) {
        t.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), oi = t.impl();
        auto bi = has_bias ? b.impl() : ImplPtr{};
        Tape::active()->record([xi, wi, bi, oi, n, in, out_dim] {
            const auto* g = gout(oi);
            if (!g) return;
            if (xi->requires_grad) {
                auto& gx = gbuf(xi);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < in; ++j) {
                        double acc = 0.0;
                        for (std::int64_t o = 0; o < out_dim; ++o)
                            acc += (*g)[static_cast<std::size_t>(i * out_dim + o)] * wi->data[static_cast<std::size_t>(o * in + j)];
                        gx[static_cast<std::size_t>(i * in + j)] += acc;
                    }
            }
            if (wi->requires_grad) {
                auto& gw = gbuf(wi);
                for (std::int64_t o = 0; o < out_dim; ++o)
                    for (std::int64_t j = 0; j < in; ++j) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < n; ++i)
                            acc += (*g)[static_cast<std::size_t>(i * out_dim + o)] * xi->data[static_cast<std::size_t>(i * in + j)];
                        gw[static_cast<std::size_t>(o * in + j)] += acc;
                    }
            }
            if (bi && bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t o = 0; o < out_dim; ++o) gb[static_cast<std::size_t>(o)] += (*g)[static_cast<std::size_t>(i * out_dim + o)];
            }
        });
    }
    return t;
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, std::int64_t stride,
              std::int64_t pad) {
    check(x.rank() == 3 && k.rank() == 4, "conv2d: expected [cin,h,w] and [cout,cin,kh,kw], got " +
                                              shape_str(x.shape()) + " and " + shape_str(k.shape()));
    check(x.dim(0) == k.dim(1), "conv2d: input channels " + std::to_string(x.dim(0)) +
                                    " vs kernel " + std::to_string(k.dim(1)));
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/padding");
    const std::int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    check(kh <= h + 2 * pad && kw <= w + 2 * pad, "conv2d: kernel exceeds padded input");
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: degenerate output extent");
    const bool has_bias = bias.defined();
    if (has_bias)
        check(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bias must be [" + std::to_string(cout) + "]");
    std::vector<double> out(static_cast<std::size_t>(cout * oh * ow));
    kernels::conv2d(x.data().data(), k.data().data(), has_bias ? bias.data().data() : nullptr,
                    out.data(), cin, h, w, cout, kh, kw, stride, pad, oh, ow);
    const Dtype dt = has_bias ? ((join(x, k) == Dtype::f32 && bias.dtype() == Dtype::f32) ? Dtype::f32 : Dtype::f64)
                              : join(x, k);
    Tensor t = Tensor::from_data({cout, oh, ow}, std::move(out), false, dt);
    const bool needs = Tape::active() && (x.requires_grad() || k.requires_grad() ||
                                          (has_bias && bias.requires_grad()));
    if (needs) {
        t.set_requires_grad(true);
        auto xi = x.impl(), ki = k.impl(), oi = t.impl();
        auto bi = has_bias ? bias.impl() : ImplPtr{};
        Tape::active()->record([xi, ki, bi, oi, cin, h, w, cout, kh, kw, stride, pad, oh, ow] {
            const auto* g = gout(oi);
            if (!g) return;
            if (xi->requires_grad)
                kernels::conv2d_grad_input(g->data(), ki->data.data(), gbuf(xi).data(), cin, h, w,
                                           cout, kh, kw, stride, pad, oh, ow);
            if (ki->requires_grad)
                kernels::conv2d_grad_kernel(g->data(), xi->data.data(), gbuf(ki).data(), cin, h, w,
                                            cout, kh, kw, stride, pad, oh, ow);
            if (bi && bi->requires_grad) {
                auto& gb = gbuf(bi);
                for (std::int64_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < oh * ow; ++i) acc += (*g)[static_cast<std::size_t>(co * oh * ow + i)];
                    gb[static_cast<std::size_t>(co)] += acc;
                }
            }
        });
    }
    return t;
}

Tensor bilinear_sample(const Tensor& map, const Tensor& points) {
    check(map.rank() == 3, "bilinear_sample: expected [c,h,w] map, got " + shape_str(map.shape()));
    check(points.rank() == 2 && points.dim(1) == 2,
          "bilinear_sample: expected [p,2] points, got " + shape_str(points.shape()));
    const std::int64_t c = map.dim(0), h = map.dim(1), w = map.dim(2), p = points.dim(0);
    std::vector<double> out(static_cast<std::size_t>(c * p));
    kernels::bilinear_gather(map.data().data(), c, h, w, points.data().data(), p, out.data());
    Tensor t = Tensor::from_data({c, p}, std::move(out), false, join(map, points));
    if (want_grad(map, points)) {
        t.set_requires_grad(true);
        auto mi = map.impl(), pi = points.impl(), oi = t.impl();
        Tape::active()->record([mi, pi, oi, c, h, w, p] {
            const auto* g = gout(oi);
            if (!g) return;
            kernels::bilinear_gather_grad(mi->data.data(), c, h, w, pi->data.data(), p, g->data(),
                                          mi->requires_grad ? gbuf(mi).data() : nullptr,
                                          pi->requires_grad ? gbuf(pi).data() : nullptr);
        });
    }
    return t;
}

Tensor compose_sampling_locations(const Tensor& ref, const Tensor& offsets,
                                  const std::vector<kernels::LevelShape>& levels) {
    check(ref.rank() == 2 && ref.dim(1) == 2,
          "compose_sampling_locations: expected [q,2] refs, got " + shape_str(ref.shape()));
    check(offsets.rank() == 5 && offsets.dim(4) == 2,
          "compose_sampling_locations: expected [q,m,l,k,2] offsets, got " + shape_str(offsets.shape()));
    check(offsets.dim(0) == ref.dim(0), "compose_sampling_locations: query counts differ");
    check(offsets.dim(2) == static_cast<std::int64_t>(levels.size()),
          "compose_sampling_locations: offsets carry " + std::to_string(offsets.dim(2)) +
              " levels, got " + std::to_string(levels.size()));
    const std::int64_t q = offsets.dim(0), m = offsets.dim(1), l = offsets.dim(2), k = offsets.dim(3);
    std::vector<double> out(static_cast<std::size_t>(offsets.numel()));
    for (std::int64_t qi = 0; qi < q; ++qi) {
        const double rx = ref.data()[static_cast<std::size_t>(qi * 2 + 0)];
        const double ry = ref.data()[static_cast<std::size_t>(qi * 2 + 1)];
        for (std::int64_t mi = 0; mi < m; ++mi)
            for (std::int64_t li = 0; li < l; ++li) {
                const double px = rx * static_cast<double>(levels[static_cast<std::size_t>(li)].w) - 0.5;
                const double py = ry * static_cast<double>(levels[static_cast<std::size_t>(li)].h) - 0.5;
                for (std::int64_t ki = 0; ki < k; ++ki) {
                    const std::size_t at = static_cast<std::size_t>((((qi * m + mi) * l + li) * k + ki) * 2);
                    out[at + 0] = px + offsets.data()[at + 0];
                    out[at + 1] = py + offsets.data()[at + 1];
                }
            }
    }
    Tensor t = Tensor::from_data(offsets.shape(), std::move(out), false, join(ref, offsets));
    if (want_grad(ref, offsets)) {
        t.set_requires_grad(true);
        auto ri = ref.impl(), fi = offsets.impl(), oi = t.impl();
        Tape::active()->record([ri, fi, oi, levels, q, m, l, k] {
            const auto* g = gout(oi);
            if (!g) return;
            if (fi->requires_grad) {
                auto& gf = gbuf(fi);
                for (std::size_t i = 0; i < g->size(); ++i) gf[i] += (*g)[i];
            }
            if (ri->requires_grad) {
                auto& gr = gbuf(ri);
                for (std::int64_t qi = 0; qi < q; ++qi) {
                    double gx = 0.0, gy = 0.0;
                    for (std::int64_t mi = 0; mi < m; ++mi)
                        for (std::int64_t li = 0; li < l; ++li)
                            for (std::int64_t ki = 0; ki < k; ++ki) {
                                const std::size_t at =
                                    static_cast<std::size_t>((((qi * m + mi) * l + li) * k + ki) * 2);
                                gx += (*g)[at + 0] * static_cast<double>(levels[static_cast<std::size_t>(li)].w);
                                gy += (*g)[at + 1] * static_cast<double>(levels[static_cast<std::size_t>(li)].h);
                            }
                    gr[static_cast<std::size_t>(qi * 2 + 0)] += gx;
                    gr[static_cast<std::size_t>(qi * 2 + 1)] += gy;
                }
            }
        });
    }
    return t;
}

Tensor ms_deform_sample(const Tensor& value, const std::vector<kernels::LevelShape>& levels,
                        const Tensor& locs, const Tensor& attn) {
    check(value.rank() == 2, "ms_deform_sample: expected [t,c] value, got " + shape_str(value.shape()));
    check(locs.rank() == 5 && locs.dim(4) == 2,
          "ms_deform_sample: expected [q,m,l,k,2] locations, got " + shape_str(locs.shape()));
    check(attn.rank() == 4, "ms_deform_sample: expected [q,m,l,k] weights, got " + shape_str(attn.shape()));
    for (std::int64_t i = 0; i < 4; ++i)
        check(attn.dim(i) == locs.dim(i), "ms_deform_sample: locs/attn dims differ");
    check(!levels.empty() && locs.dim(2) == static_cast<std::int64_t>(levels.size()),
          "ms_deform_sample: level count mismatch");
    std::vector<std::int64_t> level_start;
    std::int64_t tokens = 0;
    for (const auto& lv : levels) {
        level_start.push_back(tokens);
        tokens += lv.h * lv.w;
    }
    check(value.dim(0) == tokens, "ms_deform_sample: value rows " + std::to_string(value.dim(0)) +
                                      " but levels hold " + std::to_string(tokens));
    const std::int64_t q = locs.dim(0), m = locs.dim(1), k = locs.dim(3), c = value.dim(1);
    check(c % m == 0, "ms_deform_sample: channels " + std::to_string(c) + " not divisible by " +
                          std::to_string(m) + " heads");
    std::vector<double> out(static_cast<std::size_t>(q * c));
    kernels::deform_sample(value.data().data(), levels, level_start, locs.data().data(),
                           attn.data().data(), q, c, m, k, out.data());
    Tensor t = Tensor::from_data({q, c}, std::move(out), false,
                                 (value.dtype() == Dtype::f32 && locs.dtype() == Dtype::f32 &&
                                  attn.dtype() == Dtype::f32)
                                     ? Dtype::f32
                                     : Dtype::f64);
    if (Tape::active() && (value.requires_grad() || locs.requires_grad() || attn.requires_grad())) {
        t.set_requires_grad(true);
        auto vi = value.impl(), li = locs.impl(), ai = attn.impl(), oi = t.impl();
        Tape::active()->record([vi, li, ai, oi, levels, level_start, q, c, m, k] {
            const auto* g = gout(oi);
            if (!g) return;
            kernels::deform_sample_grad(vi->data.data(), levels, level_start, li->data.data(),
                                        ai->data.data(), q, c, m, k, g->data(),
                                        vi->requires_grad ? gbuf(vi).data() : nullptr,
                                        li->requires_grad ? gbuf(li).data() : nullptr,
                                        ai->requires_grad ? gbuf(ai).data() : nullptr);
        });
    }
    return t;
}

Tensor l1_sum(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "l1_sum");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) s += std::abs(pred.data()[i] - target.data()[i]);
    Tensor t = Tensor::from_data({1}, {s}, false, join(pred));
    if (want_grad(pred)) {
        t.set_requires_grad(true);
        auto pi = pred.impl(), ti = target.impl(), oi = t.impl();
        Tape::active()->record([pi, ti, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& gp = gbuf(pi);
            for (std::size_t i = 0; i < gp.size(); ++i) {
                const double d = pi->data[i] - ti->data[i];
                gp[i] += (*g)[0] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        });
    }
    return t;
}

Tensor bce_with_logits_sum(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "bce_with_logits_sum");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.data().size(); ++i) {
        const double tv = targets.data()[i];
        check(tv >= 0.0 && tv <= 1.0, "bce_with_logits_sum: target outside [0,1]");
        s += softplus(logits.data()[i]) - tv * logits.data()[i];
    }
    Tensor t = Tensor::from_data({1}, {s}, false, join(logits));
    if (want_grad(logits)) {
        t.set_requires_grad(true);
        auto li = logits.impl(), ti = targets.impl(), oi = t.impl();
        Tape::active()->record([li, ti, oi] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& gl = gbuf(li);
            for (std::size_t i = 0; i < gl.size(); ++i)
                gl[i] += (*g)[0] * (stable_sigmoid(li->data[i]) - ti->data[i]);
        });
    }
    return t;
}

Tensor sigmoid_focal_loss_sum(const Tensor& logits, const Tensor& targets, double alpha,
                              double gamma) {
    check_same_shape(logits, targets, "sigmoid_focal_loss_sum");
    check(gamma >= 0.0, "sigmoid_focal_loss_sum: negative gamma");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.data().size(); ++i) {
        const double tv = targets.data()[i];
        check(tv == 0.0 || tv == 1.0, "sigmoid_focal_loss_sum: target not 0/1");
        const double z = logits.data()[i];
        const double p = stable_sigmoid(z);
        if (tv == 1.0)
            s += alpha * std::pow(1.0 - p, gamma) * softplus(-z);
        else
            s += (1.0 - alpha) * std::pow(p, gamma) * softplus(z);
    }
    Tensor t = Tensor::from_data({1}, {s}, false, join(logits));
    if (want_grad(logits)) {
        t.set_requires_grad(true);
        auto li = logits.impl(), ti = targets.impl(), oi = t.impl();
        Tape::active()->record([li, ti, oi, alpha, gamma] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& gl = gbuf(li);
            for (std::size_t i = 0; i < gl.size(); ++i) {
                const double z = li->data[i];
                const double p = stable_sigmoid(z);
                double d;
                if (ti->data[i] == 1.0)
                    d = alpha * std::pow(1.0 - p, gamma) * (-gamma * p * softplus(-z) - (1.0 - p));
                else
                    d = (1.0 - alpha) * std::pow(p, gamma) * (gamma * (1.0 - p) * softplus(z) + p);
                gl[i] += (*g)[0] * d;
            }
        });
    }
    return t;
}

namespace {

// Loss and input gradient of 1 - GIoU for one pair of center-form boxes.
double giou_row(const double* p, const double* t, double* gp) {
    const double px1 = p[0] - p[2] / 2.0, px2 = p[0] + p[2] / 2.0;
    const double py1 = p[1] - p[3] / 2.0, py2 = p[1] + p[3] / 2.0;
    const double tx1 = t[0] - t[2] / 2.0, tx2 = t[0] + t[2] / 2.0;
    const double ty1 = t[1] - t[3] / 2.0, ty2 = t[1] + t[3] / 2.0;
    const double iw = std::min(px2, tx2) - std::max(px1, tx1);
    const double ih = std::min(py2, ty2) - std::max(py1, ty1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double inter = overlap ? iw * ih : 0.0;
    const double ap = p[2] * p[3], at = t[2] * t[3];
    const double uni = ap + at - inter;
    const double ew = std::max(px2, tx2) - std::min(px1, tx1);
    const double eh = std::max(py2, ty2) - std::min(py1, ty1);
    const double hull = ew * eh;
    check(uni > 0.0, "giou: zero-area union");
    check(hull > 0.0, "giou: zero-area enclosing box");
    const double loss = 2.0 - inter / uni - uni / hull;
    if (gp) {
        // Partials w.r.t. the six intermediates (px1,px2,py1,py2,pw,ph),
        // then chained into (cx,cy,w,h).
        double dI[6] = {0, 0, 0, 0, 0, 0};
        double dU[6] = {0, 0, 0, 0, 0, 0};
        double dH[6] = {0, 0, 0, 0, 0, 0};
        if (overlap) {
            dI[0] = (px1 >= tx1 ? -1.0 : 0.0) * ih;
            dI[1] = (px2 <= tx2 ? 1.0 : 0.0) * ih;
            dI[2] = (py1 >= ty1 ? -1.0 : 0.0) * iw;
            dI[3] = (py2 <= ty2 ? 1.0 : 0.0) * iw;
        }
        dU[0] = -dI[0];
        dU[1] = -dI[1];
        dU[2] = -dI[2];
        dU[3] = -dI[3];
        dU[4] = p[3];
        dU[5] = p[2];
        dH[0] = (px1 <= tx1 ? -1.0 : 0.0) * eh;
        dH[1] = (px2 >= tx2 ? 1.0 : 0.0) * eh;
        dH[2] = (py1 <= ty1 ? -1.0 : 0.0) * ew;
        dH[3] = (py2 >= ty2 ? 1.0 : 0.0) * ew;
        double dL[6];
        for (int i = 0; i < 6; ++i) {
            const double d_iou = (dI[i] * uni - inter * dU[i]) / (uni * uni);
            const double d_ratio = (dU[i] * hull - uni * dH[i]) / (hull * hull);
            dL[i] = -d_iou - d_ratio;
        }
        gp[0] = dL[0] + dL[1];
        gp[1] = dL[2] + dL[3];
        gp[2] = 0.5 * (dL[1] - dL[0]) + dL[4];
        gp[3] = 0.5 * (dL[3] - dL[2]) + dL[5];
    }
    return loss;
}

}  // namespace

Tensor giou_loss_sum(const Tensor& pred, const Tensor& target) {
    check(pred.rank() == 2 && pred.dim(1) == 4, "giou_loss_sum: expected [n,4] boxes, got " +
                                                    shape_str(pred.shape()));
    check_same_shape(pred, target, "giou_loss_sum");
    const std::int64_t n = pred.dim(0);
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        s += giou_row(pred.data().data() + i * 4, target.data().data() + i * 4, nullptr);
    Tensor t = Tensor::from_data({1}, {s}, false, join(pred));
    if (want_grad(pred)) {
        t.set_requires_grad(true);
        auto pi = pred.impl(), ti = target.impl(), oi = t.impl();
        Tape::active()->record([pi, ti, oi, n] {
            const auto* g = gout(oi);
            if (!g) return;
            auto& gp = gbuf(pi);
            double row[4];
            for (std::int64_t i = 0; i < n; ++i) {
                giou_row(pi->data.data() + i * 4, ti->data.data() + i * 4, row);
                for (int j = 0; j < 4; ++j) gp[static_cast<std::size_t>(i * 4 + j)] += (*g)[0] * row[j];
            }
        });
    }
    return t;
}

}  // namespace iseg::ops
