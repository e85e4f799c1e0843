#include <cmath>

#include "doctest.h"
#include "iseg/gradcheck.hpp"
#include "iseg/ops.hpp"
#include "iseg/posenc.hpp"

using namespace iseg;

TEST_CASE("absolute encoding at the origin and reference channel values") {
    EncodingConfig cfg;
    cfg.d_model = 8;
    const Tensor pe = absolute_pe_2d(3, 4, cfg);
    CHECK(pe.shape() == Shape{8, 3, 4});

    // Pixel (0,0): every sin channel 0, every cos channel 1.
    for (std::int64_t ch = 0; ch < 8; ++ch) {
        const double v = pe.at({ch, 0, 0});
        CHECK(v == (ch % 2 == 0 ? 0.0 : 1.0));
    }

    // d_model=4, T=10000: x-half at pixel x=1 is (sin 1, cos 1).
    EncodingConfig small;
    small.d_model = 4;
    const Tensor pe4 = absolute_pe_2d(2, 2, small);
    CHECK(pe4.at({0, 0, 1}) == doctest::Approx(0.8414709848078965).epsilon(1e-12));
    CHECK(pe4.at({1, 0, 1}) == doctest::Approx(0.5403023058681398).epsilon(1e-12));
    // y-half at pixel y=1.
    CHECK(pe4.at({2, 1, 0}) == doctest::Approx(0.8414709848078965).epsilon(1e-12));
    CHECK(pe4.at({3, 1, 0}) == doctest::Approx(0.5403023058681398).epsilon(1e-12));

    for (double v : pe.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("config validation") {
    EncodingConfig odd;
    odd.d_model = 6;  // d_model/2 odd: no sin/cos pairing
    CHECK_THROWS_AS(absolute_pe_2d(2, 2, odd), std::runtime_error);
    EncodingConfig zero;
    zero.d_model = 0;
    CHECK_THROWS_AS(absolute_pe_2d(2, 2, zero), std::runtime_error);
    EncodingConfig bad_t;
    bad_t.temperature = 0.0;
    CHECK_THROWS_AS(absolute_pe_2d(2, 2, bad_t), std::runtime_error);
    CHECK_THROWS_AS(relative_pe_2d(2, 2, std::nan(""), 0.0, EncodingConfig{}), std::runtime_error);
}

TEST_CASE("relative encoding with zero center is bitwise the absolute one") {
    EncodingConfig cfg;
    cfg.d_model = 16;
    CHECK(relative_pe_2d(5, 7, 0.0, 0.0, cfg).data() == absolute_pe_2d(5, 7, cfg).data());

    cfg.normalize_to_2pi = true;
    CHECK(relative_pe_2d(5, 7, 0.0, 0.0, cfg).data() == absolute_pe_2d(5, 7, cfg).data());
}

TEST_CASE("relative encoding equals the absolute law at shifted positions") {
    EncodingConfig cfg;
    cfg.d_model = 12;
    const std::int64_t half = cfg.d_model / 2;
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const double cx = rng.uniform(-3.0, 10.0), cy = rng.uniform(-3.0, 10.0);
        const Tensor rel = relative_pe_2d(6, 5, cx, cy, cfg);
        for (std::int64_t iy = 0; iy < 6; ++iy)
            for (std::int64_t ix = 0; ix < 5; ++ix)
                for (std::int64_t ch = 0; ch < cfg.d_model; ++ch) {
                    const double expect =
                        ch < half
                            ? pe_axis_value((static_cast<double>(ix) - cx) * 1.0, ch, half, cfg.temperature)
                            : pe_axis_value((static_cast<double>(iy) - cy) * 1.0, ch - half, half, cfg.temperature);
                    CHECK(rel.at({ch, iy, ix}) == expect);
                }
    }
}

TEST_CASE("translation covariance for integer shifts") {
    EncodingConfig cfg;
    cfg.d_model = 8;
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const double cx = rng.uniform(1.0, 3.0), cy = rng.uniform(1.0, 3.0);
        const std::int64_t dx = rng.uniform_int(-2, 2), dy = rng.uniform_int(-2, 2);
        const Tensor a = relative_pe_2d(8, 8, cx, cy, cfg);
        const Tensor b = relative_pe_2d(8, 8, cx + static_cast<double>(dx), cy + static_cast<double>(dy), cfg);
        for (std::int64_t iy = 2; iy < 6; ++iy)
            for (std::int64_t ix = 2; ix < 6; ++ix)
                for (std::int64_t ch = 0; ch < 8; ++ch)
                    CHECK(std::abs(a.at({ch, iy, ix}) - b.at({ch, iy + dy, ix + dx})) < 1e-12);
    }
}

TEST_CASE("token form matches map form and the pixel at the center is the origin") {
    EncodingConfig cfg;
    cfg.d_model = 8;
    const Tensor map = absolute_pe_2d(4, 6, cfg);
    const Tensor tok = absolute_pe_tokens(4, 6, cfg);
    CHECK(tok.shape() == Shape{24, 8});
    for (std::int64_t iy = 0; iy < 4; ++iy)
        for (std::int64_t ix = 0; ix < 6; ++ix)
            for (std::int64_t ch = 0; ch < 8; ++ch)
                CHECK(tok.at({iy * 6 + ix, ch}) == map.at({ch, iy, ix}));

    // A center placed exactly on a pixel makes that pixel read (0, 1, 0, 1, ...).
    const Tensor rel = relative_pe_2d(4, 6, 3.0, 2.0, cfg);
    for (std::int64_t ch = 0; ch < 8; ++ch) CHECK(rel.at({ch, 2, 3}) == (ch % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("differentiable relative tokens match the fixed-center values") {
    EncodingConfig cfg;
    cfg.d_model = 8;
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        const double cx = rng.uniform(-1.0, 5.0), cy = rng.uniform(-1.0, 5.0);
        Tensor center = Tensor::from_data({2}, {cx, cy}, true);
        const Tensor tok = relative_pe_tokens(center, 4, 5, cfg);
        const Tensor map = relative_pe_2d(4, 5, cx, cy, cfg);
        for (std::int64_t iy = 0; iy < 4; ++iy)
            for (std::int64_t ix = 0; ix < 5; ++ix)
                for (std::int64_t ch = 0; ch < 8; ++ch)
                    CHECK(tok.at({iy * 5 + ix, ch}) == map.at({ch, iy, ix}));
    }
}

TEST_CASE("gradient of relative tokens with respect to the center") {
    Rng rng(34);
    for (auto normalize : {false, true}) {
        EncodingConfig cfg;
        cfg.d_model = 8;
        cfg.normalize_to_2pi = normalize;
        for (int trial = 0; trial < 5; ++trial) {
            Tensor center = Tensor::from_data({2}, {rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0)}, true);
            std::vector<double> wd(static_cast<std::size_t>(20 * 8));
            for (auto& v : wd) v = rng.normal();
            Tensor w = Tensor::from_data({20, 8}, wd);
            auto f = [&] { return ops::sum_all(ops::mul(relative_pe_tokens(center, 4, 5, cfg), w)); };
            CHECK(finite_difference_check(f, center) < 1e-4);
        }
    }
}

TEST_CASE("normalized mode rescales a full extent to two pi") {
    EncodingConfig cfg;
    cfg.d_model = 4;
    cfg.normalize_to_2pi = true;
    const Tensor pe = absolute_pe_2d(4, 8, cfg);
    // x = w/2 has argument exactly pi on the lowest-frequency x channel.
    CHECK(pe.at({0, 0, 4}) == doctest::Approx(std::sin(3.141592653589793)).epsilon(1e-12));
    CHECK(pe.at({1, 0, 4}) == doctest::Approx(-1.0).epsilon(1e-12));
}
