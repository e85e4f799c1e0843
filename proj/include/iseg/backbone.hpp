#pragma once

#include "iseg/kernels.hpp"
#include "iseg/params.hpp"
#include "iseg/tensor.hpp"

// Toy convolutional feature extractor: five stride-2 3x3 conv + relu stages
// over the [3,h,w] image, with C3..C5 taken from stages 3..5 (strides
// 8/16/32). The pyramid adapter projects C3..C5 to a uniform width d via 1x1
// convs and appends a stride-64 level from a 3x3 stride-2 conv on C5.

namespace iseg {

// Per-stage channel widths, input first.
inline constexpr std::int64_t kBackboneChannels[6] = {3, 8, 16, 32, 32, 32};

// Pyramid levels 3..6 (strides 8, 16, 32, 64).
inline constexpr std::int64_t kPyramidLevels = 4;

struct BackboneWeights {
    std::vector<Tensor> kernels;  // stage i: [ch[i+1], ch[i], 3, 3]
    std::vector<Tensor> biases;   // stage i: [ch[i+1]]

    static BackboneWeights make(Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Stages {
    Tensor c3, c4, c5;  // strides 8, 16, 32
};

struct PyramidWeights {
    std::vector<Tensor> lateral_k;  // level l in 3..5: [d, ch(C_l), 1, 1]
    std::vector<Tensor> lateral_b;  // [d]
    Tensor down_k;                  // level 6: [d, ch(C5), 3, 3], stride 2 pad 1
    Tensor down_b;

    static PyramidWeights make(Rng& rng, std::int64_t d);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct FeaturePyramid {
    std::vector<Tensor> levels;  // index i holds level 3+i: [d, h/2^(3+i), w/2^(3+i)]

    std::int64_t channels() const;
    std::vector<kernels::LevelShape> shapes() const;
    // Levels flattened row-major and concatenated: [sum h_l*w_l, d].
    Tensor tokens() const;
};

Stages extract_stages(const Tensor& image, const BackboneWeights& w);
FeaturePyramid build_pyramid(const Stages& s, const PyramidWeights& w);

}  // namespace iseg
