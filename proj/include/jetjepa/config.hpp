// One configuration object for the whole pipeline, parsed from a line
// oriented `key = value` file with [section] headers. Every key is registered
// below; unknown sections or keys are rejected. The canonical serialization
// (fixed order, normalized numbers) feeds the config hash that reports and
// checkpoints carry.
#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "jetjepa/backbone.hpp"
#include "jetjepa/common.hpp"
#include "jetjepa/jetdata.hpp"
#include "jetjepa/masking.hpp"
#include "jetjepa/rng.hpp"
#include "jetjepa/tokenizer.hpp"

namespace jetjepa {

struct GenConfig {
    std::vector<int> classes = {1, 2, 3}; // prong count per class
    int jets = 2000;
    int n_min = 30, n_max = 60;
    double pt_scale = 10.0;
    double jet_pt_min = 400.0, jet_pt_max = 600.0;
    double sigma = 0.05;
    double prong_spread = 0.6;
    double prong_min_sep = 0.45;
    double prong_share_min = 0.15;
    double background_fraction = 0.08;
    double background_spread = 0.75;
    double background_pt_scale = 0.25;

    std::vector<ClassSpec> class_spec() const {
        std::vector<ClassSpec> spec = default_class_spec(classes);
        for (auto& c : spec) {
            c.n_particles_min = n_min;
            c.n_particles_max = n_max;
            c.pt_scale = pt_scale;
            c.jet_pt_min = jet_pt_min;
            c.jet_pt_max = jet_pt_max;
            c.sigma = sigma;
            c.prong_spread = prong_spread;
            c.prong_min_sep = prong_min_sep;
            c.prong_share_min = prong_share_min;
            c.background_fraction = background_fraction;
            c.background_spread = background_spread;
            c.background_pt_scale = background_pt_scale;
        }
        return spec;
    }
};

struct TrainConfig {
    int steps = 1200;
    int batch_size = 48;
    double peak_lr = 1e-3;
    double floor_lr = 1e-5;
    int warmup_steps = 100;
    double ema_momentum_start = 0.996;
    double ema_momentum_end = 1.0;
    double smooth_l1_beta = 1.0;
    double weight_decay = 0.05;
    double grad_clip = 1.0;
    int checkpoint_every = 400;
    // Ablation V augmentations, applied on the fly during pre-training.
    bool augment_rotate = false;
    double augment_smear_sigma = 0.0;
    double augment_boost_max = 0.0;

    void validate() const {
        require(steps >= 0 && batch_size >= 1, "jepa: steps must be >= 0 and batch_size >= 1");
        require(warmup_steps >= 0 && warmup_steps <= steps, "jepa: need 0 <= warmup_steps <= steps");
        require(peak_lr >= 0.0 && floor_lr >= 0.0, "jepa: learning rates must be >= 0");
        require(ema_momentum_start > 0.0 && ema_momentum_start <= 1.0 &&
                    ema_momentum_end > 0.0 && ema_momentum_end <= 1.0,
                "jepa: ema momenta must be in (0, 1]");
        require(smooth_l1_beta > 0.0, "jepa: smooth_l1_beta must be > 0");
        require(checkpoint_every >= 1, "jepa: checkpoint_every must be >= 1");
        require(augment_smear_sigma >= 0.0 && augment_boost_max >= 0.0,
                "jepa: augmentation magnitudes must be >= 0");
    }
};

struct EvalConfig {
    std::vector<double> label_fractions = {0.0005, 0.005, 0.02, 0.1, 1.0};
    int finetune_steps = 250;
    double finetune_lr = 1e-3;
    double backbone_lr_scale = 0.1; // fine-tuned regime: backbone trains slower than the head
    int head_warmup_steps = 0;      // train the head alone before unfreezing the backbone
    int finetune_warmup = 10;
    int finetune_batch = 32;
    int val_every = 5;
    double val_fraction = 0.25;
    double reg_strength = 1e-4;
    std::string probe_loss = "logistic"; // or "hinge"
    int probe_max_iters = 10000;

    void validate() const {
        for (double f : label_fractions)
            require(f > 0.0 && f <= 1.0, "evalkit: label fractions must be in (0, 1]");
        require(finetune_steps >= 1 && finetune_batch >= 1 && val_every >= 1,
                "evalkit: invalid finetune loop settings");
        require(backbone_lr_scale >= 0.0 && backbone_lr_scale <= 1.0,
                "evalkit: backbone_lr_scale must be in [0, 1]");
        require(head_warmup_steps >= 0, "evalkit: head_warmup_steps must be >= 0");
        require(finetune_warmup >= 0 && finetune_warmup <= finetune_steps,
                "evalkit: need 0 <= finetune_warmup <= finetune_steps");
        require(val_fraction > 0.0 && val_fraction < 1.0, "evalkit: val_fraction must be in (0, 1)");
        require(reg_strength >= 0.0, "evalkit: reg_strength must be >= 0");
        require(probe_loss == "logistic" || probe_loss == "hinge",
                "evalkit: probe_loss must be logistic or hinge");
        require(probe_max_iters >= 1, "evalkit: probe_max_iters must be >= 1");
    }
};

struct RunConfig {
    uint64_t seed = 7;
    int threads = 0; // 0 = use hardware count (or JETJEPA_THREADS)
    GenConfig gen;
    TokenizerConfig tok;
    MaskConfig masks;
    EncoderConfig enc;
    TrainConfig train;
    EvalConfig eval;

    void validate() const {
        tok.validate();
        masks.validate();
        enc.validate();
        train.validate();
        eval.validate();
        require(tok.d == enc.dim, "tokenizer d must equal backbone dim");
        require(!gen.classes.empty() && gen.jets >= 1, "jetdata: need classes and jets >= 1");
        require(threads >= 0, "run: threads must be >= 0");
    }

    std::string canonical() const;
    uint64_t config_hash() const {
        const std::string c = canonical();
        return fnv1a64(c.data(), c.size());
    }
    std::string config_hash_hex() const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash()));
        return buf;
    }
};

namespace cfgdetail {

inline std::string fmt_double_cfg(double d) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::string section, key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail("config: bad numeric value '" + s + "' for " + what);
    }
}

inline int parse_int(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        fail("config: bad integer value '" + s + "' for " + what);
    }
}

inline bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    fail("config: bad boolean value '" + s + "' for " + what);
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == ',') {
            out.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

class Registry {
public:
    explicit Registry(RunConfig& c) {
        add_u64("run", "seed", c.seed);
        add_int("run", "threads", c.threads);

        add_int_list("jetdata", "classes", c.gen.classes);
        add_int("jetdata", "jets", c.gen.jets);
        add_int("jetdata", "n_min", c.gen.n_min);
        add_int("jetdata", "n_max", c.gen.n_max);
        add_double("jetdata", "pt_scale", c.gen.pt_scale);
        add_double("jetdata", "jet_pt_min", c.gen.jet_pt_min);
        add_double("jetdata", "jet_pt_max", c.gen.jet_pt_max);
        add_double("jetdata", "sigma", c.gen.sigma);
        add_double("jetdata", "prong_spread", c.gen.prong_spread);
        add_double("jetdata", "prong_min_sep", c.gen.prong_min_sep);
        add_double("jetdata", "prong_share_min", c.gen.prong_share_min);
        add_double("jetdata", "background_fraction", c.gen.background_fraction);
        add_double("jetdata", "background_spread", c.gen.background_spread);
        add_double("jetdata", "background_pt_scale", c.gen.background_pt_scale);

        add_double("tokenizer", "center_ratio", c.tok.center_ratio);
        add_int("tokenizer", "min_centers", c.tok.min_centers);
        add_int("tokenizer", "k", c.tok.k);
        add_int("tokenizer", "d", c.tok.d);
        add_int_list("tokenizer", "mlp_widths", c.tok.mlp_widths);
        fields_.push_back({"tokenizer", "fps_start",
                           [&c](const std::string& v) {
                               if (v == "highest_pt") c.tok.start_rule = FpsStart::highest_pt;
                               else if (v == "lowest_index") c.tok.start_rule = FpsStart::lowest_index;
                               else fail("config: fps_start must be highest_pt or lowest_index");
                           },
                           [&c]() {
                               return c.tok.start_rule == FpsStart::highest_pt
                                          ? std::string("highest_pt")
                                          : std::string("lowest_index");
                           }});

        add_int("masking", "num_targets", c.masks.num_targets);
        add_interval("masking", "target_scale", c.masks.target_scale_lo, c.masks.target_scale_hi);
        add_interval("masking", "target_aspect", c.masks.target_aspect_lo, c.masks.target_aspect_hi);
        add_interval("masking", "context_scale", c.masks.context_scale_lo, c.masks.context_scale_hi);
        fields_.push_back({"masking", "strategy",
                           [&c](const std::string& v) { c.masks.strategy = mask_strategy_from_string(v); },
                           [&c]() { return std::string(to_string(c.masks.strategy)); }});

        add_int("backbone", "depth", c.enc.depth);
        add_int("backbone", "dim", c.enc.dim);
        add_int("backbone", "heads", c.enc.heads);
        add_int("backbone", "registers", c.enc.registers);
        add_bool("backbone", "use_physics_bias", c.enc.use_physics_bias);
        add_int("backbone", "mlp_ratio", c.enc.mlp_ratio);
        add_int("backbone", "pred_depth", c.enc.pred_depth);
        add_int("backbone", "pred_dim", c.enc.pred_dim);
        add_int("backbone", "pred_heads", c.enc.pred_heads);
        add_int("backbone", "pos_hidden", c.enc.pos_hidden);
        add_int("backbone", "bias_hidden", c.enc.bias_hidden);

        add_int("jepa", "steps", c.train.steps);
        add_int("jepa", "batch_size", c.train.batch_size);
        add_double("jepa", "peak_lr", c.train.peak_lr);
        add_double("jepa", "floor_lr", c.train.floor_lr);
        add_int("jepa", "warmup_steps", c.train.warmup_steps);
        add_double("jepa", "ema_momentum_start", c.train.ema_momentum_start);
        add_double("jepa", "ema_momentum_end", c.train.ema_momentum_end);
        add_double("jepa", "smooth_l1_beta", c.train.smooth_l1_beta);
        add_double("jepa", "weight_decay", c.train.weight_decay);
        add_double("jepa", "grad_clip", c.train.grad_clip);
        add_int("jepa", "checkpoint_every", c.train.checkpoint_every);
        add_bool("jepa", "augment_rotate", c.train.augment_rotate);
        add_double("jepa", "augment_smear_sigma", c.train.augment_smear_sigma);
        add_double("jepa", "augment_boost_max", c.train.augment_boost_max);

        add_double_list("evalkit", "label_fractions", c.eval.label_fractions);
        add_int("evalkit", "finetune_steps", c.eval.finetune_steps);
        add_double("evalkit", "finetune_lr", c.eval.finetune_lr);
        add_double("evalkit", "backbone_lr_scale", c.eval.backbone_lr_scale);
        add_int("evalkit", "head_warmup_steps", c.eval.head_warmup_steps);
        add_int("evalkit", "finetune_warmup", c.eval.finetune_warmup);
        add_int("evalkit", "finetune_batch", c.eval.finetune_batch);
        add_int("evalkit", "val_every", c.eval.val_every);
        add_double("evalkit", "val_fraction", c.eval.val_fraction);
        add_double("evalkit", "reg_strength", c.eval.reg_strength);
        fields_.push_back({"evalkit", "probe_loss",
                           [&c](const std::string& v) {
                               if (v != "logistic" && v != "hinge")
                                   fail("config: probe_loss must be logistic or hinge");
                               c.eval.probe_loss = v;
                           },
                           [&c]() { return c.eval.probe_loss; }});
        add_int("evalkit", "probe_max_iters", c.eval.probe_max_iters);
    }

    const std::vector<Field>& fields() const { return fields_; }

    const Field* find(const std::string& section, const std::string& key) const {
        for (const auto& f : fields_)
            if (f.section == section && f.key == key) return &f;
        return nullptr;
    }

private:
    void add_int(const char* s, const char* k, int& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) { ref = parse_int(v, std::string(s) + "." + k); },
                           [&ref]() { return std::to_string(ref); }});
    }

    void add_u64(const char* s, const char* k, uint64_t& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) {
                               try {
                                   size_t used = 0;
                                   ref = std::stoull(v, &used);
                                   if (used != v.size()) throw std::invalid_argument(v);
                               } catch (const std::exception&) {
                                   fail("config: bad integer value '" + v + "' for " + s + "." + k);
                               }
                           },
                           [&ref]() { return std::to_string(ref); }});
    }

    void add_double(const char* s, const char* k, double& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) { ref = parse_double(v, std::string(s) + "." + k); },
                           [&ref]() { return fmt_double_cfg(ref); }});
    }

    void add_bool(const char* s, const char* k, bool& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) { ref = parse_bool(v, std::string(s) + "." + k); },
                           [&ref]() { return ref ? std::string("true") : std::string("false"); }});
    }

    void add_int_list(const char* s, const char* k, std::vector<int>& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) {
                               ref.clear();
                               for (const auto& part : split_commas(v))
                                   ref.push_back(parse_int(part, std::string(s) + "." + k));
                           },
                           [&ref]() {
                               std::string out;
                               for (size_t i = 0; i < ref.size(); ++i) {
                                   if (i) out += ',';
                                   out += std::to_string(ref[i]);
                               }
                               return out;
                           }});
    }

    void add_double_list(const char* s, const char* k, std::vector<double>& ref) {
        fields_.push_back({s, k,
                           [&ref, s, k](const std::string& v) {
                               ref.clear();
                               for (const auto& part : split_commas(v))
                                   ref.push_back(parse_double(part, std::string(s) + "." + k));
                           },
                           [&ref]() {
                               std::string out;
                               for (size_t i = 0; i < ref.size(); ++i) {
                                   if (i) out += ',';
                                   out += fmt_double_cfg(ref[i]);
                               }
                               return out;
                           }});
    }

    // "lo,hi" pairs
    void add_interval(const char* s, const char* k, double& lo, double& hi) {
        fields_.push_back({s, k,
                           [&lo, &hi, s, k](const std::string& v) {
                               const auto parts = split_commas(v);
                               if (parts.size() != 2)
                                   fail("config: " + std::string(s) + "." + k + " needs 'lo,hi'");
                               lo = parse_double(parts[0], std::string(s) + "." + k);
                               hi = parse_double(parts[1], std::string(s) + "." + k);
                           },
                           [&lo, &hi]() { return fmt_double_cfg(lo) + "," + fmt_double_cfg(hi); }});
    }

    std::vector<Field> fields_;
};

} // namespace cfgdetail

inline std::string RunConfig::canonical() const {
    cfgdetail::Registry reg(const_cast<RunConfig&>(*this));
    std::string out;
    std::string section;
    for (const auto& f : reg.fields()) {
        if (f.section != section) {
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

inline void apply_config_line(RunConfig& cfg, const std::string& section, const std::string& key,
                              const std::string& value, const std::string& where) {
    cfgdetail::Registry reg(cfg);
    const auto* f = reg.find(section, key);
    if (!f) fail(where + ": unknown config key '" + section + "." + key + "'");
    f->set(value);
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(path + ": cannot open config file");
    cfgdetail::Registry reg(cfg);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = path + ":" + std::to_string(line_no);
        std::string t = cfgdetail::trim(line);
        if (!t.empty() && t.back() == '\r') t.pop_back();
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            require(t.back() == ']', where + ": malformed section header");
            section = cfgdetail::trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const auto& f : reg.fields()) known = known || f.section == section;
            require(known, where + ": unknown config section '" + section + "'");
            continue;
        }
        const size_t eq = t.find('=');
        require(eq != std::string::npos, where + ": expected 'key = value'");
        const std::string key = cfgdetail::trim(t.substr(0, eq));
        const std::string value = cfgdetail::trim(t.substr(eq + 1));
        require(!section.empty(), where + ": key outside of any [section]");
        const auto* f = reg.find(section, key);
        if (!f) fail(where + ": unknown config key '" + section + "." + key + "'");
        f->set(value);
    }
}

// "section.key=value" overrides from the command line.
inline void apply_override(RunConfig& cfg, const std::string& spec) {
    const size_t eq = spec.find('=');
    require(eq != std::string::npos, "--set needs section.key=value, got '" + spec + "'");
    const std::string path = cfgdetail::trim(spec.substr(0, eq));
    const size_t dot = path.find('.');
    require(dot != std::string::npos, "--set needs section.key=value, got '" + spec + "'");
    apply_config_line(cfg, path.substr(0, dot), path.substr(dot + 1),
                      cfgdetail::trim(spec.substr(eq + 1)), "--set " + spec);
}

} // namespace jetjepa
