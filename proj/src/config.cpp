#include "iseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace iseg {
namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    check(ec == std::errc() && ptr == v.data() + v.size(),
          "config: bad integer for " + key + ": '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        check(pos == v.size(), "config: bad number for " + key + ": '" + v + "'");
        return out;
    } catch (const std::runtime_error&) {
        throw;
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::runtime_error("config: bad bool for " + key + ": '" + v + "' (use true/false)");
}

std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    check(ec == std::errc(), "config: cannot format number");
    return std::string(buf, ptr);
}

struct ConfigKey {
    const char* name;
    const char* doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

ConfigKey int_key(const char* name, const char* doc, std::int64_t RunConfig::*field) {
    return ConfigKey{name, doc,
                     [field](const RunConfig& c) { return std::to_string(c.*field); },
                     [field, name](RunConfig& c, const std::string& v) {
                         c.*field = parse_int(name, v);
                     }};
}

ConfigKey double_key(const char* name, const char* doc, double RunConfig::*field) {
    return ConfigKey{name, doc,
                     [field](const RunConfig& c) { return format_double(c.*field); },
                     [field, name](RunConfig& c, const std::string& v) {
                         c.*field = parse_double(name, v);
                     }};
}

ConfigKey bool_key(const char* name, const char* doc, bool RunConfig::*field) {
    return ConfigKey{name, doc,
                     [field](const RunConfig& c) { return c.*field ? "true" : "false"; },
                     [field, name](RunConfig& c, const std::string& v) {
                         c.*field = parse_bool(name, v);
                     }};
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        int_key("d_model", "transformer width, multiple of 4 and of the head counts",
                &RunConfig::d_model),
        int_key("ffn_dim", "feed-forward hidden width", &RunConfig::ffn_dim),
        int_key("enc_layers", "encoder layers", &RunConfig::enc_layers),
        int_key("dec_layers", "decoder layers (one prediction stage each)",
                &RunConfig::dec_layers),
        int_key("enc_heads", "encoder deformable attention heads", &RunConfig::enc_heads),
        int_key("enc_points", "encoder sampling points per head and level",
                &RunConfig::enc_points),
        int_key("dec_heads", "decoder self/cross attention heads", &RunConfig::dec_heads),
        int_key("dec_points", "decoder sampling points per head and level",
                &RunConfig::dec_points),
        int_key("num_queries", "object queries (max detections per image)",
                &RunConfig::num_queries),
        int_key("num_classes", "object classes", &RunConfig::num_classes),
        int_key("mask_heads", "mask decoder attention heads", &RunConfig::mask_heads),
        int_key("mask_points", "mask decoder sampling points per head", &RunConfig::mask_points),
        int_key("mask_channels", "mask feature channels (divisible by mask_heads)",
                &RunConfig::mask_channels),
        int_key("mask_encoder_layers", "refinement layers over the mask feature grid",
                &RunConfig::mask_encoder_layers),
        ConfigKey{"pe_mode", "mask positional encoding: none, abs, or rel",
                  [](const RunConfig& c) { return c.pe_mode; },
                  [](RunConfig& c, const std::string& v) {
                      parse_pe_mode(v);  // validates
                      c.pe_mode = v;
                  }},
        int_key("mask_stages", "final decoder stages that also pay mask losses",
                &RunConfig::mask_stages),
        bool_key("match_include_mask", "fold mask terms into the matching cost",
                 &RunConfig::match_include_mask),
        double_key("w_cls", "classification loss weight", &RunConfig::w_cls),
        double_key("w_l1", "box L1 loss weight", &RunConfig::w_l1),
        double_key("w_iou", "box GIoU loss weight", &RunConfig::w_iou),
        double_key("w_dice", "mask dice loss weight", &RunConfig::w_dice),
        double_key("w_bce", "mask cross-entropy loss weight", &RunConfig::w_bce),
        double_key("focal_alpha", "focal loss positive-class weight", &RunConfig::focal_alpha),
        double_key("focal_gamma", "focal loss focusing exponent", &RunConfig::focal_gamma),
        double_key("lr", "Adam learning rate", &RunConfig::lr),
        double_key("beta1", "Adam first-moment decay", &RunConfig::beta1),
        double_key("beta2", "Adam second-moment decay", &RunConfig::beta2),
        double_key("adam_eps", "Adam denominator epsilon", &RunConfig::adam_eps),
        double_key("clip_norm", "global gradient-norm clip", &RunConfig::clip_norm),
        int_key("steps", "training steps", &RunConfig::steps),
        int_key("seed", "weight init seed", &RunConfig::seed),
        int_key("checkpoint_every", "steps between checkpoints (0: final only)",
                &RunConfig::checkpoint_every),
        double_key("score_threshold", "minimum score for an emitted instance",
                   &RunConfig::score_threshold),
        int_key("top_k", "maximum emitted instances per image", &RunConfig::top_k),
    };
    return keys;
}

const ConfigKey& find_key(const std::string& name) {
    for (const ConfigKey& k : config_keys())
        if (name == k.name) return k;
    throw std::runtime_error("config: unknown key '" + name + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        check(eq != std::string::npos,
              "config: line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        check(!key.empty(), "config: empty key on line " + std::to_string(lineno));
        find_key(key).set(cfg, value);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_key(trim(key)).set(cfg, trim(value));
}

std::string resolved_config_text(const RunConfig& cfg) {
    static const RunConfig defaults;
    std::ostringstream os;
    for (const ConfigKey& k : config_keys()) {
        os << "# " << k.doc << " (default: " << k.get(defaults) << ")\n";
        os << k.name << " = " << k.get(cfg) << "\n";
    }
    return os.str();
}

void validate_run_config(const RunConfig& cfg) {
    check(cfg.d_model >= 4 && cfg.d_model % 4 == 0, "config: d_model must be a multiple of 4");
    check(cfg.enc_heads > 0 && cfg.d_model % cfg.enc_heads == 0,
          "config: d_model must divide by enc_heads");
    check(cfg.dec_heads > 0 && cfg.d_model % cfg.dec_heads == 0,
          "config: d_model must divide by dec_heads");
    check(cfg.mask_heads > 0 && cfg.mask_channels % cfg.mask_heads == 0,
          "config: mask_channels must divide by mask_heads");
    check(cfg.enc_points > 0 && cfg.dec_points > 0 && cfg.mask_points > 0,
          "config: sampling point counts must be positive");
    check(cfg.enc_layers > 0 && cfg.dec_layers > 0, "config: need at least one layer per stack");
    check(cfg.mask_encoder_layers >= 0, "config: mask_encoder_layers must be >= 0");
    check(cfg.ffn_dim > 0, "config: ffn_dim must be positive");
    check(cfg.num_queries > 0, "config: num_queries must be positive");
    check(cfg.num_classes > 0, "config: num_classes must be positive");
    check(cfg.mask_stages >= 0 && cfg.mask_stages <= cfg.dec_layers,
          "config: mask_stages must lie in [0, dec_layers]");
    check(cfg.steps >= 0, "config: steps must be >= 0");
    check(cfg.checkpoint_every >= 0, "config: checkpoint_every must be >= 0");
    check(cfg.top_k >= 0, "config: top_k must be >= 0");
    check(cfg.lr > 0.0, "config: lr must be positive");
    check(cfg.clip_norm > 0.0, "config: clip_norm must be positive");
    check(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
          "config: Adam betas must lie in [0,1)");
    parse_pe_mode(cfg.pe_mode);
}

LossConfig make_loss_config(const RunConfig& cfg) {
    LossConfig lc;
    lc.weights = LossWeights{cfg.w_cls, cfg.w_l1, cfg.w_iou, cfg.w_dice, cfg.w_bce};
    lc.mask_stages = cfg.mask_stages;
    lc.match_include_mask = cfg.match_include_mask;
    lc.pe_mode = parse_pe_mode(cfg.pe_mode);
    lc.mask_heads = cfg.mask_heads;
    lc.mask_points = cfg.mask_points;
    lc.focal_alpha = cfg.focal_alpha;
    lc.focal_gamma = cfg.focal_gamma;
    lc.pe_cfg = make_pe_config(cfg);
    return lc;
}

EncodingConfig make_pe_config(const RunConfig& cfg) {
    EncodingConfig pe;
    pe.d_model = cfg.d_model;
    return pe;
}

}  // namespace iseg
