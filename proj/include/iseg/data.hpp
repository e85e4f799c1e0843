#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iseg/matching.hpp"
#include "iseg/tensor.hpp"

// Synthetic scenes: colored shapes (circle, axis-aligned rectangle, rotated
// triangle) painted over a solid background, occluding in paint order. Boxes
// are exact tight bounds of the visible masks. Plus a run-length mask codec,
// the on-disk dataset layout, and a simplified average-precision evaluator.

namespace iseg {

inline constexpr std::int64_t kNumShapeClasses = 3;
inline const char* const kShapeClassNames[kNumShapeClasses] = {"circle", "rectangle", "triangle"};

struct SceneConfig {
    std::int64_t height = 64, width = 64;
    std::int64_t max_instances = 3;
    std::int64_t min_size_px = 10;
    std::int64_t min_visible_px = 16;
};

struct Scene {
    Tensor image;  // [3,h,w] in [0,1]
    std::vector<InstanceTarget> instances;  // paint order, visible masks only
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

// Block-max pooling to the mask grid.
inline Tensor downsample_mask(const Tensor& mask, std::int64_t stride = 8) {
    return downsample_mask_block_max(mask, stride);
}

// Bilinear upsample of a [h,w] map (no gradients; zero padding past edges).
Tensor upsample_bilinear(const Tensor& map, std::int64_t oh, std::int64_t ow);

// Nearest-neighbor upsample; the exact inverse of downsample_mask on masks
// that are constant per stride-sized block.
Tensor upsample_mask_nearest(const Tensor& mask, std::int64_t oh, std::int64_t ow);

// Alternating run lengths starting with the count of zeros, row-major; the
// total always equals the pixel count.
std::vector<std::int64_t> rle_encode(const Tensor& mask);
Tensor rle_decode(const std::vector<std::int64_t>& runs, std::int64_t h, std::int64_t w);

// On-disk layout: <dir>/scene_00000.iatw (image), <dir>/scene_00000.json
// (instances), <dir>/manifest.json (count, extent, per-scene seeds).
struct DatasetManifest {
    std::int64_t count = 0;
    std::int64_t height = 0, width = 0;
    std::vector<std::uint64_t> seeds;
};

void save_scene(const std::string& dir, std::int64_t index, const Scene& scene);
Scene load_scene(const std::string& dir, std::int64_t index);
void save_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& dir);
std::vector<Scene> load_dataset(const std::string& dir);  // every scene in the manifest

struct PredictionInstance {
    std::int64_t class_id = 0;
    double score = 0.0;
    BoxCxCyWH box;
    Tensor mask_probs;  // [h,w]; upsampled to the target grid if smaller
};

struct EvalReport {
    double mask_ap = 0.0, box_ap = 0.0;  // mean over IoU 0.50:0.05:0.95
    double mask_ap50 = 0.0, mask_ap75 = 0.0;
    double box_ap50 = 0.0, box_ap75 = 0.0;
    std::int64_t num_targets = 0, num_predictions = 0;
    std::string to_json() const;
};

// Greedy score-ordered matching per class and IoU threshold, 101-point
// interpolated AP, pooled per class then macro-averaged over classes that
// have targets. Score ties keep the original prediction order.
EvalReport evaluate(const std::vector<std::vector<PredictionInstance>>& preds_per_scene,
                    const std::vector<Scene>& scenes);

}  // namespace iseg
