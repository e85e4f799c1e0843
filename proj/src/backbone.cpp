#include "iseg/backbone.hpp"

#include "iseg/init.hpp"
#include "iseg/ops.hpp"

namespace iseg {

BackboneWeights BackboneWeights::make(Rng& rng) {
    BackboneWeights w;
    for (int i = 0; i < 5; ++i) {
        w.kernels.push_back(conv_init(rng, kBackboneChannels[i + 1], kBackboneChannels[i], 3));
        w.biases.push_back(zeros_param({kBackboneChannels[i + 1]}));
    }
    return w;
}

void BackboneWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        const std::string stage = prefix + ".stage" + std::to_string(i + 1);
        out.emplace_back(stage + ".kernel", kernels[i]);
        out.emplace_back(stage + ".bias", biases[i]);
    }
}

PyramidWeights PyramidWeights::make(Rng& rng, std::int64_t d) {
    PyramidWeights w;
    for (int l = 3; l <= 5; ++l) {
        w.lateral_k.push_back(conv_init(rng, d, kBackboneChannels[l], 1));
        w.lateral_b.push_back(zeros_param({d}));
    }
    w.down_k = conv_init(rng, d, kBackboneChannels[5], 3);
    w.down_b = zeros_param({d});
    return w;
}

void PyramidWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < lateral_k.size(); ++i) {
        const std::string lvl = prefix + ".lateral" + std::to_string(i + 3);
        out.emplace_back(lvl + ".kernel", lateral_k[i]);
        out.emplace_back(lvl + ".bias", lateral_b[i]);
    }
    out.emplace_back(prefix + ".down.kernel", down_k);
    out.emplace_back(prefix + ".down.bias", down_b);
}

std::int64_t FeaturePyramid::channels() const {
    check(!levels.empty(), "pyramid: no levels");
    return levels[0].dim(0);
}

std::vector<kernels::LevelShape> FeaturePyramid::shapes() const {
    std::vector<kernels::LevelShape> out;
    for (const Tensor& t : levels) out.push_back({t.dim(1), t.dim(2)});
    return out;
}

Tensor FeaturePyramid::tokens() const {
    check(!levels.empty(), "pyramid: no levels");
    std::vector<Tensor> parts;
    for (const Tensor& t : levels) parts.push_back(ops::map_to_tokens(t));
    return ops::concat_rows(parts);
}

Stages extract_stages(const Tensor& image, const BackboneWeights& w) {
    check(image.rank() == 3 && image.dim(0) == 3,
          "extract_stages: image must be [3,h,w], got " + shape_str(image.shape()));
    check(image.dim(1) % 64 == 0 && image.dim(2) % 64 == 0,
          "extract_stages: extent must be a multiple of 64, got " + shape_str(image.shape()));
    Tensor x = image;
    std::vector<Tensor> taps;
    for (std::size_t i = 0; i < w.kernels.size(); ++i) {
        x = ops::relu(ops::conv2d(x, w.kernels[i], w.biases[i], 2, 1));
        taps.push_back(x);
    }
    return {taps[2], taps[3], taps[4]};
}

FeaturePyramid build_pyramid(const Stages& s, const PyramidWeights& w) {
    FeaturePyramid p;
    const Tensor* cs[3] = {&s.c3, &s.c4, &s.c5};
    for (int i = 0; i < 3; ++i)
        p.levels.push_back(ops::conv2d(*cs[i], w.lateral_k[i], w.lateral_b[i], 1, 0));
    p.levels.push_back(ops::conv2d(s.c5, w.down_k, w.down_b, 2, 1));
    return p;
}

}  // namespace iseg
