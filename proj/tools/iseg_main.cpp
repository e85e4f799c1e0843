#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "iseg/data.hpp"
#include "iseg/gradcheck.hpp"
#include "iseg/ops.hpp"
#include "iseg/posenc.hpp"
#include "iseg/train.hpp"

// Operator entry point. Exit codes: 0 success, 1 usage error, 2 runtime
// failure, 3 check-suite failure.

namespace {

using namespace iseg;
using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const std::string& kv : overrides) {
        std::size_t eq = kv.find('=');
        check(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    validate_run_config(cfg);
    return cfg;
}

struct LoadedModel {
    RunConfig cfg;
    ModelWeights weights;
};

// Builds the model from the checkpoint's embedded config. Overrides apply on
// top for runtime knobs (score_threshold, top_k, pe_mode); architecture keys
// must match the stored weights.
LoadedModel load_model(const std::string& checkpoint_path,
                       const std::vector<std::string>& overrides) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    LoadedModel lm;
    lm.cfg = parse_run_config(ck.config_text);
    Rng rng(static_cast<std::uint64_t>(lm.cfg.seed));
    lm.weights = ModelWeights::make(rng, lm.cfg);
    load_weights(lm.weights, ck);
    for (const std::string& kv : overrides) {
        std::size_t eq = kv.find('=');
        check(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
        apply_override(lm.cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    validate_run_config(lm.cfg);
    return lm;
}

int cmd_generate(const std::string& out, std::int64_t scenes, std::int64_t seed,
                 std::int64_t size) {
    if (size <= 0 || size % 64 != 0) {
        std::cerr << "generate: --size must be a positive multiple of 64, got " << size << "\n";
        return kExitUsage;
    }
    if (scenes < 0) {
        std::cerr << "generate: --scenes must be >= 0\n";
        return kExitUsage;
    }
    SceneConfig sc;
    sc.height = sc.width = size;
    DatasetManifest m;
    m.count = scenes;
    m.height = m.width = size;
    for (std::int64_t i = 0; i < scenes; ++i) {
        std::uint64_t scene_seed = split_seed(static_cast<std::uint64_t>(seed),
                                              static_cast<std::uint64_t>(i));
        m.seeds.push_back(scene_seed);
        save_scene(out, i, generate_scene(scene_seed, sc));
    }
    save_manifest(out, m);
    std::cout << "wrote " << scenes << " scenes to " << out << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume_path,
              const std::vector<std::string>& overrides) {
    // The checkpoint's embedded config defines the model; file/overrides
    // would silently diverge from the stored weights, so reject the combination.
    if (!resume_path.empty() && (!config_path.empty() || !overrides.empty())) {
        std::cerr << "train: --resume uses the checkpoint's embedded config; drop --config/--set\n";
        return kExitUsage;
    }
    Trainer tr = resume_path.empty() ? Trainer::fresh(resolve_config(config_path, overrides))
                                     : Trainer::resume(load_checkpoint(resume_path));
    const RunConfig& cfg = tr.cfg;

    std::vector<Scene> scenes = load_dataset(data_dir);
    check(!scenes.empty(), "train: dataset is empty");

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream resolved(out_dir + "/config.resolved");
        check(resolved.good(), "train: cannot write config.resolved");
        resolved << resolved_config_text(cfg);
    }
    std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
    check(log.good(), "train: cannot open train_log.jsonl");

    for (std::int64_t step = tr.step() + 1; step <= cfg.steps; ++step) {
        const Scene& scene = scenes[static_cast<std::size_t>((step - 1) %
                                                             static_cast<std::int64_t>(scenes.size()))];
        LossBreakdown lb;
        try {
            lb = tr.train_step(scene);
        } catch (const std::exception& e) {
            json line = {{"step", step}, {"error", e.what()}};
            log << line.dump() << "\n";
            std::cerr << "train: aborted at step " << step << ": " << e.what() << "\n";
            return kExitRuntime;
        }
        double total = lb.total.item();
        if (!std::isfinite(total)) {
            json line = {{"step", step}, {"error", "non-finite loss"}};
            log << line.dump() << "\n";
            std::cerr << "train: aborted at step " << step << ": non-finite loss\n";
            return kExitRuntime;
        }
        json line = {{"step", step}, {"total", total}, {"cls", lb.cls},  {"l1", lb.l1},
                     {"iou", lb.iou}, {"dice", lb.dice}, {"bce", lb.bce}};
        log << line.dump() << "\n";
        std::cout << line.dump() << "\n";
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps)
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(step) + ".iatc", tr.checkpoint());
    }
    save_checkpoint(out_dir + "/model.iatc", tr.checkpoint());

    json final_line = {{"final_mask_iou", matched_mask_iou(tr.weights, cfg, scenes)},
                       {"steps", tr.step()}};
    log << final_line.dump() << "\n";
    std::cout << final_line.dump() << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, bool inject_gt,
             const std::vector<std::string>& overrides) {
    LoadedModel lm = load_model(checkpoint_path, overrides);
    std::vector<Scene> scenes = load_dataset(data_dir);
    std::vector<std::vector<PredictionInstance>> preds;
    for (const Scene& scene : scenes) {
        if (inject_gt) {
            std::vector<PredictionInstance> p;
            for (const InstanceTarget& inst : scene.instances)
                p.push_back(PredictionInstance{inst.class_id, 1.0, inst.box, inst.mask});
            preds.push_back(std::move(p));
        } else {
            preds.push_back(predict_instances(lm.weights, lm.cfg, scene.image));
        }
    }
    std::cout << evaluate(preds, scenes).to_json() << "\n";
    return kExitOk;
}

void write_pgm(const std::string& path, const Tensor& probs) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "infer: cannot open " + path);
    const std::int64_t h = probs.dim(0), w = probs.dim(1);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (double v : probs.data()) {
        double clamped = std::min(1.0, std::max(0.0, v));
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    check(os.good(), "infer: write failed for " + path);
}

int cmd_infer(const std::string& checkpoint_path, const std::string& image_path,
              const std::string& out_dir, const std::vector<std::string>& overrides) {
    LoadedModel lm = load_model(checkpoint_path, overrides);
    Tensor image = load_tensor_file(image_path);
    std::vector<PredictionInstance> preds = predict_instances(lm.weights, lm.cfg, image);
    std::filesystem::create_directories(out_dir);
    json side = json::array();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "mask_%02zu.pgm", i);
        write_pgm(out_dir + "/" + name,
                  upsample_bilinear(preds[i].mask_probs, image.dim(1), image.dim(2)));
        const BoxCxCyWH& b = preds[i].box;
        side.push_back({{"class", preds[i].class_id},
                        {"class_name", kShapeClassNames[preds[i].class_id]},
                        {"score", preds[i].score},
                        {"box", {b.cx, b.cy, b.w, b.h}},
                        {"mask", name}});
    }
    std::ofstream os(out_dir + "/instances.json");
    check(os.good(), "infer: cannot write instances.json");
    os << side.dump(2) << "\n";
    std::cout << "wrote " << preds.size() << " instances to " << out_dir << "\n";
    return kExitOk;
}

// --- check suites -----------------------------------------------------------

bool suite_params() {
    if (expected_param_count(8, 4, 4) != 441) return false;
    if (expected_param_count(8, 8, 4) != 873) return false;
    Rng rng(5);
    std::vector<double> v(441);
    for (double& x : v) x = rng.normal();
    Tensor vec = Tensor::from_data({441}, v);
    DynamicLayers layers = unpack_params(vec, 8, 4, 4);
    Tensor back = flatten_params(layers);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (back.data()[i] != v[i]) return false;
    try {
        expected_param_count(8, 3, 4);
        return false;  // 8 % 3 != 0 must throw
    } catch (const std::runtime_error&) {
    }
    return true;
}

bool suite_match() {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        std::int64_t n = rng.uniform_int(1, 7);
        std::int64_t g = rng.uniform_int(1, n);
        std::vector<double> cost(static_cast<std::size_t>(n * g));
        for (double& c : cost) c = rng.uniform(-5.0, 5.0);
        Tensor cm = Tensor::from_data({n, g}, cost);
        Assignment got = hungarian(cm);

        // Exhaustive reference in lexicographic order with strict improvement,
        // matching the solver's tie-break.
        std::vector<std::int64_t> best, cur;
        double best_cost = std::numeric_limits<double>::infinity();
        std::vector<char> used(static_cast<std::size_t>(n), 0);
        std::function<void(std::int64_t, double)> rec = [&](std::int64_t t, double acc) {
            if (t == g) {
                if (acc < best_cost) {
                    best_cost = acc;
                    best = cur;
                }
                return;
            }
            for (std::int64_t p = 0; p < n; ++p) {
                if (used[static_cast<std::size_t>(p)]) continue;
                used[static_cast<std::size_t>(p)] = 1;
                cur.push_back(p);
                rec(t + 1, acc + cm.at({p, t}));
                cur.pop_back();
                used[static_cast<std::size_t>(p)] = 0;
            }
        };
        rec(0, 0.0);
        if (got.pred_of_target != best) return false;
    }
    return true;
}

bool suite_pe() {
    EncodingConfig cfg;
    cfg.d_model = 16;
    const std::int64_t h = 10, w = 10;
    Tensor abs = absolute_pe_2d(h, w, cfg);
    Tensor rel0 = relative_pe_2d(h, w, 0.0, 0.0, cfg);
    for (std::size_t i = 0; i < abs.data().size(); ++i)
        if (abs.data()[i] != rel0.data()[i]) return false;

    // Shifting the center by integers shifts the pattern by the same pixels.
    Rng rng(23);
    for (int pair = 0; pair < 100; ++pair) {
        std::int64_t cx = rng.uniform_int(0, 4), cy = rng.uniform_int(0, 4);
        std::int64_t x = rng.uniform_int(cx, w - 1), y = rng.uniform_int(cy, h - 1);
        Tensor rel = relative_pe_2d(h, w, static_cast<double>(cx), static_cast<double>(cy), cfg);
        for (std::int64_t ch = 0; ch < cfg.d_model; ++ch)
            if (std::abs(rel.at({ch, y, x}) - abs.at({ch, y - cy, x - cx})) > 1e-12) return false;
    }
    return true;
}

bool suite_grad() {
    Rng rng(29);
    std::vector<double> mv(2 * 5 * 5);
    for (double& x : mv) x = rng.normal();
    Tensor map = Tensor::from_data({2, 5, 5}, mv);
    map.set_requires_grad(true);
    Tensor points = Tensor::from_data({3, 2}, {1.3, 2.4, 0.6, 3.1, 2.2, 1.7});
    points.set_requires_grad(true);

    auto f = [&] { return ops::sum_all(ops::bilinear_sample(map, points)); };
    if (finite_difference_check(f, map) > 1e-4) return false;
    if (finite_difference_check(f, points) > 1e-4) return false;

    // Deformable attention with jittered offsets (away from bilinear kinks).
    std::int64_t d = 8;
    DeformAttnWeights w = DeformAttnWeights::make(rng, d, 2, 2, 1);
    for (double& x : w.offset_b.mutable_data()) x += rng.uniform(0.15, 0.35);
    for (double& x : w.weight_w.mutable_data()) x = rng.normal() * 0.3;
    std::vector<double> tv(9 * d);
    for (double& x : tv) x = rng.normal();
    Tensor tokens = Tensor::from_data({9, d}, tv);
    tokens.set_requires_grad(true);
    std::vector<kernels::LevelShape> levels = {{3, 3}};
    Tensor refs = Tensor::full({9, 2}, 0.5);
    auto g = [&] { return ops::sum_all(ms_deform_attn(tokens, refs, tokens, levels, w)); };
    if (finite_difference_check(g, tokens, 1e-5, 24, 31) > 1e-4) return false;
    if (finite_difference_check(g, w.offset_b, 1e-5, -1, 32) > 1e-4) return false;
    return true;
}

int cmd_check(const std::string& suite) {
    struct Entry {
        const char* name;
        bool (*fn)();
    };
    const std::vector<Entry> suites = {{"params", suite_params},
                                       {"match", suite_match},
                                       {"pe", suite_pe},
                                       {"grad", suite_grad}};
    bool ran_any = false, all_ok = true;
    for (const Entry& e : suites) {
        if (suite != "all" && suite != e.name) continue;
        ran_any = true;
        bool ok = e.fn();
        all_ok = all_ok && ok;
        std::cout << e.name << ": " << (ok ? "pass" : "FAIL") << "\n";
    }
    if (!ran_any) {
        std::cerr << "check: unknown suite '" << suite << "' (use all|grad|match|pe|params)\n";
        return kExitUsage;
    }
    return all_ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shape-scene instance segmentation toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic scene dataset");
    std::string gen_out;
    std::int64_t gen_scenes = 100, gen_seed = 7, gen_size = 64;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--scenes", gen_scenes, "number of scenes");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--size", gen_size, "square image extent (multiple of 64)");

    auto* train = app.add_subcommand("train", "train on a generated dataset");
    std::string train_config, train_data, train_out, train_resume;
    std::vector<std::string> train_sets;
    train->add_option("--config", train_config, "config file (key = value)");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "run output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to continue from");
    train->add_option("--set", train_sets, "override one key, e.g. --set steps=50");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    std::string eval_ckpt, eval_data;
    std::vector<std::string> eval_sets;
    bool eval_inject = false;
    eval->add_option("--checkpoint", eval_ckpt, "trained model file")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_flag("--inject-gt", eval_inject, "score ground truth as predictions (self-test)");
    eval->add_option("--set", eval_sets, "override a runtime key, e.g. --set top_k=5");

    auto* infer = app.add_subcommand("infer", "run one image and write masks");
    std::string infer_ckpt, infer_image, infer_out;
    std::vector<std::string> infer_sets;
    infer->add_option("--checkpoint", infer_ckpt, "trained model file")->required();
    infer->add_option("--image", infer_image, "image tensor file")->required();
    infer->add_option("--out", infer_out, "output directory")->required();
    infer->add_option("--set", infer_sets, "override a runtime key, e.g. --set score_threshold=0");

    auto* chk = app.add_subcommand("check", "run the property suites");
    std::string chk_suite = "all";
    chk->add_option("--suite", chk_suite, "all|grad|match|pe|params");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_out, gen_scenes, gen_seed, gen_size);
        if (train->parsed())
            return cmd_train(train_config, train_data, train_out, train_resume, train_sets);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_inject, eval_sets);
        if (infer->parsed()) return cmd_infer(infer_ckpt, infer_image, infer_out, infer_sets);
        if (chk->parsed()) return cmd_check(chk_suite);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
