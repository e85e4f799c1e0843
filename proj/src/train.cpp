#include "iseg/train.hpp"

#include <algorithm>
#include <cmath>

#include "iseg/ops.hpp"

namespace iseg {

AdamState AdamState::make(const ParamList& params, const RunConfig& cfg) {
    AdamState s{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.clip_norm};
    for (const auto& [name, t] : params) {
        s.m.push_back(Tensor::zeros(t.shape()));
        s.v.push_back(Tensor::zeros(t.shape()));
    }
    return s;
}

double global_grad_norm(const ParamList& params) {
    double sq = 0.0;
    for (const auto& [name, t] : params)
        if (t.has_grad())
            for (double g : t.grad()) sq += g * g;
    return std::sqrt(sq);
}

void adam_step(ParamList& params, AdamState& opt) {
    check(params.size() == opt.m.size(), "adam_step: state/param size mismatch");
    double norm = global_grad_norm(params);
    double scale = norm > opt.clip ? opt.clip / norm : 1.0;
    ++opt.t;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].second;
        if (!p.has_grad()) continue;
        const std::vector<double>& g = p.grad();
        std::vector<double>& pd = p.mutable_data();
        std::vector<double>& md = opt.m[i].mutable_data();
        std::vector<double>& vd = opt.v[i].mutable_data();
        for (std::size_t k = 0; k < pd.size(); ++k) {
            double gk = g[k] * scale;
            md[k] = opt.beta1 * md[k] + (1.0 - opt.beta1) * gk;
            vd[k] = opt.beta2 * vd[k] + (1.0 - opt.beta2) * gk * gk;
            double mhat = md[k] / bc1;
            double vhat = vd[k] / bc2;
            pd[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
    for (auto& [name, t] : params) t.drop_grad();
}

Trainer Trainer::fresh(const RunConfig& cfg) {
    validate_run_config(cfg);
    Trainer tr;
    tr.cfg = cfg;
    Rng rng(static_cast<std::uint64_t>(cfg.seed));
    tr.weights = ModelWeights::make(rng, cfg);
    tr.weights.collect(tr.params);
    tr.opt = AdamState::make(tr.params, cfg);
    return tr;
}

Trainer Trainer::resume(const Checkpoint& ck) {
    Trainer tr = fresh(parse_run_config(ck.config_text));
    load_weights(tr.weights, ck);
    for (std::size_t i = 0; i < tr.params.size(); ++i) {
        for (const char* kind : {"m", "v"}) {
            const std::string key = std::string("adam.") + kind + "." + tr.params[i].first;
            const Tensor* slot = ck.find(key);
            check(slot != nullptr, "checkpoint: missing entry " + key);
            Tensor& dst = kind[0] == 'm' ? tr.opt.m[i] : tr.opt.v[i];
            check(slot->shape() == dst.shape(), "checkpoint/config shape mismatch for " + key);
            dst.mutable_data() = slot->data();
        }
    }
    tr.opt.t = static_cast<std::int64_t>(ck.step);
    return tr;
}

LossBreakdown Trainer::train_step(const Scene& scene) {
    Tape tape;
    LossBreakdown lb;
    {
        TapeScope scope(tape);
        ModelOutput out = model_forward(scene.image, weights, cfg);
        lb = total_loss(out.stages, out.fm, scene.instances, make_loss_config(cfg));
        if (std::isfinite(lb.total.item())) tape.backward(lb.total);
    }
    if (std::isfinite(lb.total.item())) {
        adam_step(params, opt);
    } else {
        for (auto& [name, t] : params) t.drop_grad();
    }
    return lb;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.step = static_cast<std::uint64_t>(opt.t);
    ck.config_text = resolved_config_text(cfg);
    for (std::size_t i = 0; i < params.size(); ++i)
        ck.entries.emplace_back(params[i]);
    for (std::size_t i = 0; i < params.size(); ++i) {
        ck.entries.emplace_back("adam.m." + params[i].first, opt.m[i]);
        ck.entries.emplace_back("adam.v." + params[i].first, opt.v[i]);
    }
    return ck;
}

namespace {

BoxCxCyWH box_row(const Tensor& boxes, std::int64_t i) {
    return BoxCxCyWH{boxes.at({i, 0}), boxes.at({i, 1}), boxes.at({i, 2}), boxes.at({i, 3})};
}

MaskOutput query_mask(const ModelOutput& out, const RunConfig& cfg, std::int64_t query) {
    const StagePredictions& sp = out.stages.back();
    Tensor dyn_row = ops::reshape(ops::slice_rows(sp.dyn, query, 1), {sp.dyn.dim(1)});
    Tensor center = ops::reshape(ops::slice_cols(ops::slice_rows(sp.boxes, query, 1), 0, 2), {2});
    DynamicLayers layers =
        unpack_params(dyn_row, out.fm.map.dim(0), cfg.mask_heads, cfg.mask_points);
    return predict_mask(out.fm, center, layers, parse_pe_mode(cfg.pe_mode), make_pe_config(cfg));
}

}  // namespace

std::vector<PredictionInstance> predict_instances(const ModelWeights& w, const RunConfig& cfg,
                                                  const Tensor& image) {
    ModelOutput out = model_forward(image, w, cfg);
    const StagePredictions& sp = out.stages.back();
    const std::int64_t n = sp.cls_logits.dim(0), c = sp.cls_logits.dim(1);

    struct Scored {
        std::int64_t query, class_id;
        double score;
    };
    std::vector<Scored> kept;
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        double best_logit = sp.cls_logits.at({i, 0});
        for (std::int64_t k = 1; k < c; ++k)
            if (sp.cls_logits.at({i, k}) > best_logit) {
                best_logit = sp.cls_logits.at({i, k});
                best = k;
            }
        double score = 1.0 / (1.0 + std::exp(-best_logit));
        if (score >= cfg.score_threshold) kept.push_back(Scored{i, best, score});
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Scored& a, const Scored& b) { return a.score > b.score; });
    if (static_cast<std::int64_t>(kept.size()) > cfg.top_k)
        kept.resize(static_cast<std::size_t>(cfg.top_k));

    std::vector<PredictionInstance> preds;
    for (const Scored& s : kept) {
        PredictionInstance p;
        p.class_id = s.class_id;
        p.score = s.score;
        p.box = box_row(sp.boxes, s.query);
        p.mask_probs = query_mask(out, cfg, s.query).probs;
        preds.push_back(std::move(p));
    }
    return preds;
}

double matched_mask_iou(const ModelWeights& w, const RunConfig& cfg,
                        const std::vector<Scene>& scenes) {
    LossConfig lc = make_loss_config(cfg);
    double sum = 0.0;
    std::int64_t count = 0;
    for (const Scene& scene : scenes) {
        if (scene.instances.empty()) continue;
        ModelOutput out = model_forward(scene.image, w, cfg);
        const StagePredictions& sp = out.stages.back();
        Assignment asg = hungarian(matching_cost(sp.cls_logits, sp.boxes, scene.instances,
                                                 lc.weights));
        const std::int64_t hm = out.fm.map.dim(1);
        for (std::size_t t = 0; t < scene.instances.size(); ++t) {
            const InstanceTarget& target = scene.instances[t];
            std::int64_t factor = target.mask.dim(0) / hm;
            Tensor gt = downsample_mask_block_max(target.mask, factor);
            MaskOutput mask = query_mask(out, cfg, asg.pred_of_target[t]);
            const std::vector<double>& pd = mask.probs.data();
            const std::vector<double>& gd = gt.data();
            std::int64_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < pd.size(); ++i) {
                bool a = pd[i] > 0.5, b = gd[i] == 1.0;
                inter += a && b;
                uni += a || b;
            }
            sum += uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
            ++count;
        }
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace iseg
