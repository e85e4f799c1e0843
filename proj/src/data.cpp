#include "iseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "iseg/geometry.hpp"
#include "iseg/kernels.hpp"
#include "iseg/serialize.hpp"

namespace iseg {
namespace {

using json = nlohmann::json;

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Rasterizers sample pixel centers at integer coordinates (x horizontal).
struct Raster {
    std::vector<std::uint8_t> on;  // h*w
    std::int64_t count = 0;
};

Raster raster_circle(std::int64_t h, std::int64_t w, double cx, double cy, double r) {
    Raster out{std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0), 0};
    double r2 = r * r;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            if (dx * dx + dy * dy <= r2) {
                out.on[static_cast<std::size_t>(y * w + x)] = 1;
                ++out.count;
            }
        }
    return out;
}

Raster raster_rect(std::int64_t h, std::int64_t w, std::int64_t x0, std::int64_t y0,
                   std::int64_t bw, std::int64_t bh) {
    Raster out{std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0), 0};
    for (std::int64_t y = y0; y < y0 + bh; ++y)
        for (std::int64_t x = x0; x < x0 + bw; ++x) {
            out.on[static_cast<std::size_t>(y * w + x)] = 1;
            ++out.count;
        }
    return out;
}

Raster raster_triangle(std::int64_t h, std::int64_t w, double cx, double cy, double r,
                       double theta) {
    double vx[3], vy[3];
    for (int k = 0; k < 3; ++k) {
        double a = theta + kTwoPi * k / 3.0;
        vx[k] = cx + r * std::cos(a);
        vy[k] = cy + r * std::sin(a);
    }
    Raster out{std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0), 0};
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double px = static_cast<double>(x), py = static_cast<double>(y);
            double s0 = (vx[1] - vx[0]) * (py - vy[0]) - (vy[1] - vy[0]) * (px - vx[0]);
            double s1 = (vx[2] - vx[1]) * (py - vy[1]) - (vy[2] - vy[1]) * (px - vx[1]);
            double s2 = (vx[0] - vx[2]) * (py - vy[2]) - (vy[0] - vy[2]) * (px - vx[2]);
            bool all_nonneg = s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0;
            bool all_nonpos = s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0;
            if (all_nonneg || all_nonpos) {
                out.on[static_cast<std::size_t>(y * w + x)] = 1;
                ++out.count;
            }
        }
    return out;
}

// Tight normalized box of a visible mask: pixel column x spans [x/w,(x+1)/w].
BoxCxCyWH tight_box(const std::vector<std::uint8_t>& on, std::int64_t h, std::int64_t w) {
    std::int64_t xmin = w, xmax = -1, ymin = h, ymax = -1;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            if (on[static_cast<std::size_t>(y * w + x)]) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
    check(xmax >= 0, "tight_box: empty mask");
    double x1 = static_cast<double>(xmin) / static_cast<double>(w);
    double x2 = static_cast<double>(xmax + 1) / static_cast<double>(w);
    double y1 = static_cast<double>(ymin) / static_cast<double>(h);
    double y2 = static_cast<double>(ymax + 1) / static_cast<double>(h);
    return BoxCxCyWH{(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
}

std::string scene_stem(std::int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05lld", static_cast<long long>(index));
    return buf;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    const std::int64_t h = cfg.height, w = cfg.width;
    check(h > 0 && w > 0, "generate_scene: empty extent");
    const std::int64_t side = std::min(h, w);
    check(cfg.min_size_px >= 2 && cfg.min_size_px <= side / 3,
          "generate_scene: min_size_px out of range for extent");
    Rng rng(seed);

    double bg[3];
    for (double& c : bg) c = rng.uniform(0.0, 0.3);

    // Draw candidate shapes; shape colors stay clear of the background band
    // so instances are learnable from color alone.
    struct Candidate {
        std::int64_t class_id;
        double color[3];
        Raster raster;
    };
    std::vector<Candidate> cands;
    std::int64_t want = rng.uniform_int(0, cfg.max_instances);
    for (std::int64_t i = 0; i < want; ++i) {
        Candidate cand;
        cand.class_id = rng.uniform_int(0, kNumShapeClasses - 1);
        for (double& c : cand.color) c = rng.uniform(0.45, 1.0);
        bool placed = false;
        for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
            switch (cand.class_id) {
                case 0: {  // circle
                    double r = rng.uniform(cfg.min_size_px / 2.0, side / 6.0);
                    double cx = rng.uniform(r + 1.0, static_cast<double>(w) - 2.0 - r);
                    double cy = rng.uniform(r + 1.0, static_cast<double>(h) - 2.0 - r);
                    cand.raster = raster_circle(h, w, cx, cy, r);
                    break;
                }
                case 1: {  // axis-aligned rectangle
                    std::int64_t bw = rng.uniform_int(cfg.min_size_px, side / 3);
                    std::int64_t bh = rng.uniform_int(cfg.min_size_px, side / 3);
                    std::int64_t x0 = rng.uniform_int(1, w - bw - 1);
                    std::int64_t y0 = rng.uniform_int(1, h - bh - 1);
                    cand.raster = raster_rect(h, w, x0, y0, bw, bh);
                    break;
                }
                default: {  // rotated equilateral triangle
                    double r = rng.uniform(0.7 * cfg.min_size_px, side / 5.0);
                    double cx = rng.uniform(r + 1.0, static_cast<double>(w) - 2.0 - r);
                    double cy = rng.uniform(r + 1.0, static_cast<double>(h) - 2.0 - r);
                    double theta = rng.uniform(0.0, kTwoPi);
                    cand.raster = raster_triangle(h, w, cx, cy, r, theta);
                    break;
                }
            }
            placed = cand.raster.count >= cfg.min_visible_px;
        }
        if (placed) cands.push_back(std::move(cand));
    }

    // Paint in order; later shapes occlude earlier ones.
    Scene scene;
    scene.image = Tensor::zeros({3, h, w});
    {
        std::vector<double>& px = scene.image.mutable_data();
        for (std::int64_t c = 0; c < 3; ++c)
            std::fill(px.begin() + c * h * w, px.begin() + (c + 1) * h * w, bg[c]);
        for (const Candidate& cand : cands)
            for (std::int64_t i = 0; i < h * w; ++i)
                if (cand.raster.on[static_cast<std::size_t>(i)])
                    for (std::int64_t c = 0; c < 3; ++c)
                        px[static_cast<std::size_t>(c * h * w + i)] = cand.color[c];
    }

    // Visible mask = own raster minus everything painted later; instances
    // occluded below the pixel floor are dropped.
    for (std::size_t i = 0; i < cands.size(); ++i) {
        std::vector<std::uint8_t> vis = cands[i].raster.on;
        for (std::size_t j = i + 1; j < cands.size(); ++j)
            for (std::int64_t p = 0; p < h * w; ++p)
                if (cands[j].raster.on[static_cast<std::size_t>(p)])
                    vis[static_cast<std::size_t>(p)] = 0;
        std::int64_t visible = std::accumulate(vis.begin(), vis.end(), std::int64_t{0});
        if (visible < cfg.min_visible_px) continue;
        InstanceTarget inst;
        inst.class_id = cands[i].class_id;
        inst.box = tight_box(vis, h, w);
        std::vector<double> md(vis.begin(), vis.end());
        inst.mask = Tensor::from_data({h, w}, std::move(md));
        scene.instances.push_back(std::move(inst));
    }
    return scene;
}

Tensor upsample_bilinear(const Tensor& map, std::int64_t oh, std::int64_t ow) {
    check(map.rank() == 2, "upsample_bilinear: expected [h,w]");
    check(oh > 0 && ow > 0, "upsample_bilinear: empty output");
    const std::int64_t h = map.dim(0), w = map.dim(1);
    std::vector<double> points(static_cast<std::size_t>(oh * ow * 2));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            std::size_t p = static_cast<std::size_t>(y * ow + x);
            points[2 * p] = (static_cast<double>(x) + 0.5) / static_cast<double>(ow) *
                                static_cast<double>(w) -
                            0.5;
            points[2 * p + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(oh) *
                                    static_cast<double>(h) -
                                0.5;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    kernels::bilinear_gather(map.data().data(), 1, h, w, points.data(), oh * ow, out.data());
    return Tensor::from_data({oh, ow}, std::move(out));
}

Tensor upsample_mask_nearest(const Tensor& mask, std::int64_t oh, std::int64_t ow) {
    check(mask.rank() == 2, "upsample_mask_nearest: expected [h,w]");
    check(oh > 0 && ow > 0, "upsample_mask_nearest: empty output");
    const std::int64_t h = mask.dim(0), w = mask.dim(1);
    const std::vector<double>& src = mask.data();
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y) {
        std::int64_t sy = std::min(h - 1, y * h / oh);
        for (std::int64_t x = 0; x < ow; ++x) {
            std::int64_t sx = std::min(w - 1, x * w / ow);
            out[static_cast<std::size_t>(y * ow + x)] = src[static_cast<std::size_t>(sy * w + sx)];
        }
    }
    return Tensor::from_data({oh, ow}, std::move(out));
}

std::vector<std::int64_t> rle_encode(const Tensor& mask) {
    check(mask.rank() == 2, "rle_encode: expected [h,w]");
    const std::vector<double>& d = mask.data();
    std::vector<std::int64_t> runs;
    std::int64_t expected = 0, run = 0;
    for (double v : d) {
        check(v == 0.0 || v == 1.0, "rle_encode: mask not binary");
        std::int64_t b = v == 1.0 ? 1 : 0;
        if (b == expected) {
            ++run;
        } else {
            runs.push_back(run);
            expected = 1 - expected;
            run = 1;
        }
    }
    runs.push_back(run);
    return runs;
}

Tensor rle_decode(const std::vector<std::int64_t>& runs, std::int64_t h, std::int64_t w) {
    check(h > 0 && w > 0, "rle_decode: empty extent");
    std::vector<double> d(static_cast<std::size_t>(h * w));
    std::size_t pos = 0;
    std::int64_t value = 0;
    for (std::int64_t run : runs) {
        check(run >= 0, "rle_decode: negative run");
        check(pos + static_cast<std::size_t>(run) <= d.size(), "rle_decode: runs exceed extent");
        std::fill(d.begin() + pos, d.begin() + pos + run, static_cast<double>(value));
        pos += static_cast<std::size_t>(run);
        value = 1 - value;
    }
    check(pos == d.size(), "rle_decode: runs do not cover extent");
    return Tensor::from_data({h, w}, std::move(d));
}

void save_scene(const std::string& dir, std::int64_t index, const Scene& scene) {
    std::filesystem::create_directories(dir);
    const std::string stem = scene_stem(index);
    save_tensor_file(dir + "/" + stem + ".iatw", scene.image);
    json doc;
    doc["height"] = scene.image.dim(1);
    doc["width"] = scene.image.dim(2);
    doc["instances"] = json::array();
    for (const InstanceTarget& inst : scene.instances) {
        json j;
        j["class"] = inst.class_id;
        j["box"] = {inst.box.cx, inst.box.cy, inst.box.w, inst.box.h};
        j["mask_rle"] = rle_encode(inst.mask);
        doc["instances"].push_back(std::move(j));
    }
    std::ofstream os(dir + "/" + stem + ".json");
    check(os.good(), "save_scene: cannot open " + stem + ".json");
    os << doc.dump(2) << "\n";
    check(os.good(), "save_scene: write failed");
}

Scene load_scene(const std::string& dir, std::int64_t index) {
    const std::string stem = scene_stem(index);
    Scene scene;
    scene.image = load_tensor_file(dir + "/" + stem + ".iatw");
    check(scene.image.rank() == 3 && scene.image.dim(0) == 3, "load_scene: bad image shape");
    std::ifstream is(dir + "/" + stem + ".json");
    check(is.good(), "load_scene: cannot open " + stem + ".json");
    json doc = json::parse(is);
    const std::int64_t h = doc.at("height").get<std::int64_t>();
    const std::int64_t w = doc.at("width").get<std::int64_t>();
    check(h == scene.image.dim(1) && w == scene.image.dim(2),
          "load_scene: annotation extent mismatch");
    for (const json& j : doc.at("instances")) {
        InstanceTarget inst;
        inst.class_id = j.at("class").get<std::int64_t>();
        const json& b = j.at("box");
        check(b.size() == 4, "load_scene: bad box");
        inst.box = BoxCxCyWH{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                             b[3].get<double>()};
        inst.mask = rle_decode(j.at("mask_rle").get<std::vector<std::int64_t>>(), h, w);
        scene.instances.push_back(std::move(inst));
    }
    return scene;
}

void save_manifest(const std::string& dir, const DatasetManifest& m) {
    check(m.count == static_cast<std::int64_t>(m.seeds.size()),
          "save_manifest: count does not match seeds");
    std::filesystem::create_directories(dir);
    json doc;
    doc["count"] = m.count;
    doc["height"] = m.height;
    doc["width"] = m.width;
    doc["seeds"] = m.seeds;
    std::ofstream os(dir + "/manifest.json");
    check(os.good(), "save_manifest: cannot open manifest.json");
    os << doc.dump(2) << "\n";
    check(os.good(), "save_manifest: write failed");
}

DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    check(is.good(), "load_manifest: cannot open " + dir + "/manifest.json");
    json doc = json::parse(is);
    DatasetManifest m;
    m.count = doc.at("count").get<std::int64_t>();
    m.height = doc.at("height").get<std::int64_t>();
    m.width = doc.at("width").get<std::int64_t>();
    m.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    check(m.count == static_cast<std::int64_t>(m.seeds.size()), "load_manifest: seed count");
    return m;
}

std::vector<Scene> load_dataset(const std::string& dir) {
    DatasetManifest m = load_manifest(dir);
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(m.count));
    for (std::int64_t i = 0; i < m.count; ++i) scenes.push_back(load_scene(dir, i));
    return scenes;
}

namespace {

struct FlatPred {
    std::int64_t class_id;
    double score;
    std::size_t scene;
    std::size_t local;  // index into the per-scene IoU rows
};

// Greedy score-ordered matching at one threshold for one class, then
// 101-point interpolated precision-recall integration.
double average_precision(const std::vector<const FlatPred*>& preds,
                         const std::vector<std::vector<std::vector<double>>>& iou,
                         const std::vector<std::vector<std::int64_t>>& gt_class,
                         std::int64_t class_id, double threshold, std::int64_t gt_count) {
    std::vector<std::vector<std::uint8_t>> used(gt_class.size());
    for (std::size_t s = 0; s < gt_class.size(); ++s)
        used[s].assign(gt_class[s].size(), 0);
    std::vector<std::uint8_t> is_tp;
    is_tp.reserve(preds.size());
    for (const FlatPred* p : preds) {
        double best = 0.0;
        std::int64_t best_g = -1;
        const std::vector<double>& row = iou[p->scene][p->local];
        for (std::size_t g = 0; g < row.size(); ++g) {
            if (gt_class[p->scene][g] != class_id || used[p->scene][g]) continue;
            if (row[g] > best) {
                best = row[g];
                best_g = static_cast<std::int64_t>(g);
            }
        }
        if (best_g >= 0 && best >= threshold) {
            used[p->scene][static_cast<std::size_t>(best_g)] = 1;
            is_tp.push_back(1);
        } else {
            is_tp.push_back(0);
        }
    }
    std::vector<double> recall, precision;
    std::int64_t tp = 0, fp = 0;
    for (std::uint8_t t : is_tp) {
        t ? ++tp : ++fp;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    double ap = 0.0;
    for (int i = 0; i <= 100; ++i) {
        double r = static_cast<double>(i) / 100.0;
        double best = 0.0;
        for (std::size_t k = 0; k < recall.size(); ++k)
            if (recall[k] >= r) best = std::max(best, precision[k]);
        ap += best;
    }
    return ap / 101.0;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<PredictionInstance>>& preds_per_scene,
                    const std::vector<Scene>& scenes) {
    check(preds_per_scene.size() == scenes.size(), "evaluate: scene count mismatch");
    EvalReport report;

    // Per scene: binarized prediction masks at full resolution, then IoU
    // tables against every target (mask and box separately).
    std::vector<std::vector<std::vector<double>>> mask_iou(scenes.size()), box_iou_tab(scenes.size());
    std::vector<std::vector<std::int64_t>> gt_class(scenes.size());
    std::vector<FlatPred> flat;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Scene& scene = scenes[s];
        const std::int64_t h = scene.image.dim(1), w = scene.image.dim(2);
        report.num_targets += static_cast<std::int64_t>(scene.instances.size());
        for (const InstanceTarget& inst : scene.instances)
            gt_class[s].push_back(inst.class_id);
        for (std::size_t p = 0; p < preds_per_scene[s].size(); ++p) {
            const PredictionInstance& pred = preds_per_scene[s][p];
            ++report.num_predictions;
            check(pred.mask_probs.rank() == 2, "evaluate: prediction mask not [h,w]");
            Tensor full = (pred.mask_probs.dim(0) == h && pred.mask_probs.dim(1) == w)
                              ? pred.mask_probs
                              : upsample_bilinear(pred.mask_probs, h, w);
            const std::vector<double>& pd = full.data();
            std::vector<double> mrow, brow;
            for (const InstanceTarget& inst : scene.instances) {
                const std::vector<double>& gd = inst.mask.data();
                std::int64_t inter = 0, uni = 0;
                for (std::size_t i = 0; i < pd.size(); ++i) {
                    bool a = pd[i] > 0.5, b = gd[i] == 1.0;
                    inter += a && b;
                    uni += a || b;
                }
                mrow.push_back(uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni)
                                       : 0.0);
                brow.push_back(box_iou(pred.box, inst.box));
            }
            mask_iou[s].push_back(std::move(mrow));
            box_iou_tab[s].push_back(std::move(brow));
            flat.push_back(FlatPred{pred.class_id, pred.score, s, p});
        }
    }

    // Score-sorted views per class; stable sort keeps original order on ties.
    std::vector<const FlatPred*> order;
    for (const FlatPred& p : flat) order.push_back(&p);
    std::stable_sort(order.begin(), order.end(),
                     [](const FlatPred* a, const FlatPred* b) { return a->score > b->score; });
    std::vector<std::int64_t> gt_count(static_cast<std::size_t>(kNumShapeClasses), 0);
    for (const std::vector<std::int64_t>& cls : gt_class)
        for (std::int64_t c : cls) ++gt_count[static_cast<std::size_t>(c)];

    auto macro_ap = [&](double threshold, bool use_mask) {
        const std::vector<std::vector<std::vector<double>>>& iou =
            use_mask ? mask_iou : box_iou_tab;
        double sum = 0.0;
        std::int64_t classes = 0;
        for (std::int64_t c = 0; c < kNumShapeClasses; ++c) {
            if (gt_count[static_cast<std::size_t>(c)] == 0) continue;
            std::vector<const FlatPred*> preds;
            for (const FlatPred* p : order)
                if (p->class_id == c) preds.push_back(p);
            sum += average_precision(preds, iou, gt_class, c, threshold,
                                     gt_count[static_cast<std::size_t>(c)]);
            ++classes;
        }
        return classes > 0 ? sum / static_cast<double>(classes) : 0.0;
    };

    report.mask_ap50 = macro_ap(0.50, true);
    report.mask_ap75 = macro_ap(0.75, true);
    report.box_ap50 = macro_ap(0.50, false);
    report.box_ap75 = macro_ap(0.75, false);
    for (int i = 0; i < 10; ++i) {
        double t = 0.50 + 0.05 * i;
        report.mask_ap += macro_ap(t, true);
        report.box_ap += macro_ap(t, false);
    }
    report.mask_ap /= 10.0;
    report.box_ap /= 10.0;
    return report;
}

std::string EvalReport::to_json() const {
    json doc;
    doc["mask_ap"] = mask_ap;
    doc["mask_ap50"] = mask_ap50;
    doc["mask_ap75"] = mask_ap75;
    doc["box_ap"] = box_ap;
    doc["box_ap50"] = box_ap50;
    doc["box_ap75"] = box_ap75;
    doc["num_targets"] = num_targets;
    doc["num_predictions"] = num_predictions;
    return doc.dump(2);
}

}  // namespace iseg
