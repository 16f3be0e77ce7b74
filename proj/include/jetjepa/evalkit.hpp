// Downstream evaluation: pooled-embedding extraction, a deterministic linear
// probe (multinomial logistic, with a squared-hinge option), frozen /
// fine-tuned / from-scratch classification with the class-attention head,
// stratified label-fraction subsampling, macro accuracy, and csv export.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "jetjepa/backbone.hpp"
#include "jetjepa/checkpoint.hpp"
#include "jetjepa/config.hpp"
#include "jetjepa/jepa.hpp"
#include "jetjepa/threadpool.hpp"

namespace jetjepa {

struct ProbeReport {
    double label_fraction = 1.0;
    std::string regime; // scratch | frozen | fine-tuned
    std::string method; // linear_probe | class_head
    double macro_accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    int steps_to_best_val_loss = 0;
    uint64_t seed = 0;
    std::string config_hash;
    int train_size = 0;
    int val_size = 0;

    std::string serialize() const {
        auto fd = [](double d) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", d);
            return std::string(buf);
        };
        std::string out;
        out += "regime = " + regime + "\n";
        out += "method = " + method + "\n";
        out += "label_fraction = " + fd(label_fraction) + "\n";
        out += "macro_accuracy = " + fd(macro_accuracy) + "\n";
        out += "per_class_accuracy = ";
        for (size_t i = 0; i < per_class_accuracy.size(); ++i) {
            if (i) out += ",";
            out += fd(per_class_accuracy[i]);
        }
        out += "\n";
        out += "steps_to_best_val_loss = " + std::to_string(steps_to_best_val_loss) + "\n";
        out += "seed = " + std::to_string(seed) + "\n";
        out += "config_hash = " + config_hash + "\n";
        out += "train_size = " + std::to_string(train_size) + "\n";
        out += "val_size = " + std::to_string(val_size) + "\n";
        return out;
    }
};

// Unweighted mean of per-class accuracies; classes absent from labels are
// excluded. Returns the per-class vector too (indexed by sorted class id).
inline double macro_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                             std::vector<double>* per_class = nullptr) {
    require(predictions.size() == labels.size(), "macro_accuracy: length mismatch");
    require(!labels.empty(), "macro_accuracy: empty labels");
    std::map<int, std::pair<int, int>> by_class; // label -> (correct, total)
    for (size_t i = 0; i < labels.size(); ++i) {
        auto& e = by_class[labels[i]];
        ++e.second;
        if (predictions[i] == labels[i]) ++e.first;
    }
    double sum = 0.0;
    if (per_class) per_class->clear();
    for (const auto& [cls, e] : by_class) {
        const double acc = static_cast<double>(e.first) / e.second;
        sum += acc;
        if (per_class) per_class->push_back(acc);
    }
    return sum / static_cast<double>(by_class.size());
}

// concat(max over tokens, mean over tokens) of a c x d representation.
inline std::vector<double> pool_embeddings(const Mat& token_repr) {
    require(token_repr.rows >= 1, "pool_embeddings: need at least one token");
    const int d = token_repr.cols;
    std::vector<double> out(static_cast<size_t>(2 * d));
    for (int j = 0; j < d; ++j) {
        double mx = token_repr(0, j);
        double mean = 0.0;
        for (int i = 0; i < token_repr.rows; ++i) {
            mx = std::max(mx, token_repr(i, j));
            mean += token_repr(i, j);
        }
        out[static_cast<size_t>(j)] = mx;
        out[static_cast<size_t>(d + j)] = mean / token_repr.rows;
    }
    return out;
}

// Full-jet token representations through the context (student) encoder, no
// masking. Shared by pooling, export, and the frozen-backbone cache.
inline Mat encode_full_jet(const JetRecord& jet, const RunConfig& cfg, const ParamStore& store) {
    const auto tokens = tokenize_geometry(jet, cfg.tok);
    const int c = static_cast<int>(tokens.size());
    Mat coords(c, 2);
    std::vector<FourVector> fvs(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        coords(i, 0) = tokens[static_cast<size_t>(i)].center_eta;
        coords(i, 1) = tokens[static_cast<size_t>(i)].center_phi;
        fvs[static_cast<size_t>(i)] = tokens[static_cast<size_t>(i)].group_fv;
    }
    Tape tape;
    TapeParams tp(tape, store);
    Tape::Id emb = -1;
    for (const auto& tok : tokens) {
        Tape::Id row = encode_group_tape(tp, tape.constant(tok.normalized_features), cfg.tok,
                                         "tokenizer", true);
        emb = emb < 0 ? row : tape.concat_rows(emb, row);
    }
    std::vector<Tape::Id> bias;
    const std::vector<Tape::Id>* bias_ptr = nullptr;
    if (cfg.enc.use_physics_bias) {
        bias = bias_embed_tape(tp, compute_pair_features(fvs, coords), cfg.enc.heads, "biasembed",
                               true);
        bias_ptr = &bias;
    }
    Tape::Id out = encode_tape(tp, emb, coords, bias_ptr, cfg.enc, "student", true);
    return tape.val(out);
}

inline Mat compute_pooled_embeddings(const std::vector<JetRecord>& jets, const RunConfig& cfg,
                                     const ParamStore& store) {
    Mat out(static_cast<int>(jets.size()), 2 * cfg.enc.dim);
    parallel_for(jets.size(), resolve_thread_count(cfg.threads), [&](size_t i) {
        const auto pooled = pool_embeddings(encode_full_jet(jets[i], cfg, store));
        for (int j = 0; j < out.cols; ++j) out(static_cast<int>(i), j) = pooled[static_cast<size_t>(j)];
    });
    return out;
}

inline void export_embeddings(const std::vector<JetRecord>& jets, const RunConfig& cfg,
                              const ParamStore& store, const std::string& path) {
    const Mat emb = compute_pooled_embeddings(jets, cfg, store);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(path + ": cannot open file for writing");
    out << "jet_id,label";
    for (int j = 0; j < emb.cols; ++j) out << ",e_" << (j + 1);
    out << "\n";
    char buf[40];
    for (int i = 0; i < emb.rows; ++i) {
        out << i << ',';
        if (jets[static_cast<size_t>(i)].label) out << *jets[static_cast<size_t>(i)].label;
        for (int j = 0; j < emb.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", emb(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) fail(path + ": write failed");
}

// --- linear probe ----------------------------------------------------------------

namespace evaldetail {

struct Standardizer {
    std::vector<double> mean, inv_std;

    static Standardizer fit(const Mat& x) {
        Standardizer s;
        s.mean.assign(static_cast<size_t>(x.cols), 0.0);
        s.inv_std.assign(static_cast<size_t>(x.cols), 1.0);
        for (int j = 0; j < x.cols; ++j) {
            double m = 0.0;
            for (int i = 0; i < x.rows; ++i) m += x(i, j);
            m /= x.rows;
            double v = 0.0;
            for (int i = 0; i < x.rows; ++i) {
                const double d = x(i, j) - m;
                v += d * d;
            }
            v /= x.rows;
            s.mean[static_cast<size_t>(j)] = m;
            s.inv_std[static_cast<size_t>(j)] = v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0;
        }
        return s;
    }

    Mat apply(const Mat& x) const {
        Mat out = x;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j)
                out(i, j) = (out(i, j) - mean[static_cast<size_t>(j)]) * inv_std[static_cast<size_t>(j)];
        return out;
    }
};

// objective value and gradient of the probe at (W, b)
inline double probe_objective(const Mat& x, const std::vector<int>& y, int n_classes, const Mat& w,
                              const Mat& b, double reg, bool hinge, Mat& gw, Mat& gb) {
    const int n = x.rows;
    gw.fill(0.0);
    gb.fill(0.0);
    double loss = 0.0;
    std::vector<double> z(static_cast<size_t>(n_classes));
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < n_classes; ++c) {
            double s = b(0, c);
            for (int j = 0; j < x.cols; ++j) s += w(c, j) * x(i, j);
            z[static_cast<size_t>(c)] = s;
        }
        if (!hinge) {
            double mx = z[0];
            for (int c = 1; c < n_classes; ++c) mx = std::max(mx, z[static_cast<size_t>(c)]);
            double sum = 0.0;
            for (int c = 0; c < n_classes; ++c) sum += std::exp(z[static_cast<size_t>(c)] - mx);
            loss += std::log(sum) + mx - z[static_cast<size_t>(y[static_cast<size_t>(i)])];
            for (int c = 0; c < n_classes; ++c) {
                const double p = std::exp(z[static_cast<size_t>(c)] - mx) / sum;
                const double g = (p - (c == y[static_cast<size_t>(i)] ? 1.0 : 0.0)) / n;
                gb(0, c) += g;
                for (int j = 0; j < x.cols; ++j) gw(c, j) += g * x(i, j);
            }
        } else { // one-vs-rest squared hinge
            for (int c = 0; c < n_classes; ++c) {
                const double s = c == y[static_cast<size_t>(i)] ? 1.0 : -1.0;
                const double margin = 1.0 - s * z[static_cast<size_t>(c)];
                if (margin > 0.0) {
                    loss += margin * margin;
                    const double g = -2.0 * margin * s / n;
                    gb(0, c) += g;
                    for (int j = 0; j < x.cols; ++j) gw(c, j) += g * x(i, j);
                }
            }
        }
    }
    loss /= n;
    for (int c = 0; c < n_classes; ++c)
        for (int j = 0; j < x.cols; ++j) {
            loss += 0.5 * reg * w(c, j) * w(c, j);
            gw(c, j) += reg * w(c, j);
        }
    return loss;
}

inline double grad_inf_norm(const Mat& gw, const Mat& gb) {
    double m = 0.0;
    for (double v : gw.v) m = std::max(m, std::fabs(v));
    for (double v : gb.v) m = std::max(m, std::fabs(v));
    return m;
}

} // namespace evaldetail

// Deterministic full-batch fit of a regularized linear classifier, run to a
// fixed gradient-norm tolerance with Armijo backtracking. The seed only
// labels the report: the optimization itself starts from zero weights.
inline ProbeReport linear_probe(const Mat& train_x, const std::vector<int>& train_y,
                                const Mat& val_x, const std::vector<int>& val_y,
                                double reg_strength, uint64_t seed, bool hinge = false,
                                int max_iters = 10000) {
    require(train_x.rows == static_cast<int>(train_y.size()), "linear_probe: train size mismatch");
    require(val_x.rows == static_cast<int>(val_y.size()), "linear_probe: val size mismatch");
    int n_classes = 0;
    for (int y : train_y) n_classes = std::max(n_classes, y + 1);
    for (int y : val_y) n_classes = std::max(n_classes, y + 1);
    {
        std::vector<bool> present(static_cast<size_t>(n_classes), false);
        int distinct = 0;
        for (int y : train_y) {
            require(y >= 0, "linear_probe: negative label");
            if (!present[static_cast<size_t>(y)]) {
                present[static_cast<size_t>(y)] = true;
                ++distinct;
            }
        }
        require(distinct >= 2, "linear_probe: need at least two classes in training labels");
    }

    const auto std_fit = evaldetail::Standardizer::fit(train_x);
    const Mat xs = std_fit.apply(train_x);
    const Mat vs = std_fit.apply(val_x);

    Mat w(n_classes, xs.cols), b(1, n_classes);
    Mat gw(n_classes, xs.cols), gb(1, n_classes);
    Mat w_try(n_classes, xs.cols), b_try(1, n_classes);
    Mat gw_try(n_classes, xs.cols), gb_try(1, n_classes);

    double f = evaldetail::probe_objective(xs, train_y, n_classes, w, b, reg_strength, hinge, gw, gb);
    double step = 1.0;
    constexpr double tol = 1e-6;
    for (int it = 0; it < max_iters && evaldetail::grad_inf_norm(gw, gb) > tol; ++it) {
        const double g2 = dot_all(gw, gw) + dot_all(gb, gb);
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
            for (size_t i = 0; i < w.v.size(); ++i) w_try.v[i] = w.v[i] - step * gw.v[i];
            for (size_t i = 0; i < b.v.size(); ++i) b_try.v[i] = b.v[i] - step * gb.v[i];
            const double f_try = evaldetail::probe_objective(xs, train_y, n_classes, w_try, b_try,
                                                             reg_strength, hinge, gw_try, gb_try);
            if (f_try <= f - 1e-4 * step * g2) {
                w = w_try;
                b = b_try;
                gw = gw_try;
                gb = gb_try;
                f = f_try;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // flat to machine precision
    }

    std::vector<int> preds(static_cast<size_t>(vs.rows));
    for (int i = 0; i < vs.rows; ++i) {
        int best = 0;
        double bs = -1e300;
        for (int c = 0; c < n_classes; ++c) {
            double s = b(0, c);
            for (int j = 0; j < vs.cols; ++j) s += w(c, j) * vs(i, j);
            if (s > bs) {
                bs = s;
                best = c;
            }
        }
        preds[static_cast<size_t>(i)] = best;
    }

    ProbeReport rep;
    rep.regime = "frozen";
    rep.method = "linear_probe";
    rep.seed = seed;
    rep.train_size = train_x.rows;
    rep.val_size = val_x.rows;
    rep.macro_accuracy = macro_accuracy(preds, val_y, &rep.per_class_accuracy);
    return rep;
}

// --- stratified splits ----------------------------------------------------------

inline std::vector<int> labels_of(const std::vector<JetRecord>& jets) {
    std::vector<int> labels(jets.size());
    for (size_t i = 0; i < jets.size(); ++i) {
        require(jets[i].label.has_value(), "dataset jet " + std::to_string(i) + " has no label");
        labels[i] = *jets[i].label;
    }
    return labels;
}

// (train_indices, val_indices), stratified per class.
inline std::pair<std::vector<size_t>, std::vector<size_t>> stratified_split(
    const std::vector<int>& labels, double val_fraction, uint64_t seed) {
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<size_t> train, val;
    for (auto& [cls, idx] : by_class) {
        Rng rng = Rng::derive(seed, "split", {static_cast<uint64_t>(cls)});
        rng.shuffle(idx);
        const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::lround(val_fraction * idx.size())));
        require(n_val < idx.size(), "stratified_split: class " + std::to_string(cls) +
                                        " too small for the requested validation fraction");
        for (size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? val : train).push_back(idx[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

// Keeps at least one sample per class; errors if a class is absent entirely.
inline std::vector<size_t> stratified_fraction(const std::vector<size_t>& pool,
                                               const std::vector<int>& labels, double fraction,
                                               int n_classes, uint64_t seed) {
    require(fraction > 0.0 && fraction <= 1.0, "label fraction must be in (0, 1]");
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i : pool) by_class[labels[i]].push_back(i);
    for (int c = 0; c < n_classes; ++c)
        if (by_class.find(c) == by_class.end())
            fail("class " + std::to_string(c) + " dropped: no samples available for subsampling");
    std::vector<size_t> out;
    for (auto& [cls, idx] : by_class) {
        Rng rng = Rng::derive(seed, "subsample", {static_cast<uint64_t>(cls)});
        rng.shuffle(idx);
        const size_t keep = std::max<size_t>(1, static_cast<size_t>(std::lround(fraction * idx.size())));
        for (size_t i = 0; i < keep && i < idx.size(); ++i) out.push_back(idx[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// --- supervised fine-tuning --------------------------------------------------------

enum class Regime { scratch, frozen, fine_tuned };

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::scratch: return "scratch";
        case Regime::frozen: return "frozen";
        default: return "fine-tuned";
    }
}

inline Regime regime_from_string(const std::string& s) {
    if (s == "scratch") return Regime::scratch;
    if (s == "frozen") return Regime::frozen;
    if (s == "fine-tuned" || s == "finetuned") return Regime::fine_tuned;
    fail("unknown regime '" + s + "' (expected scratch|frozen|fine-tuned)");
}

struct FinetuneCurves {
    std::vector<int> steps;
    std::vector<double> val_loss;
    std::vector<double> val_acc;
};

namespace evaldetail {

struct ClsResult {
    double loss = 0.0;
    GradMap grads;
    int pred = 0;
};

// One labeled jet through backbone + head. With a frozen backbone the cached
// token representations short-circuit the encoder entirely.
inline ClsResult classify_jet(const JetRecord& jet, const Mat* cached_repr, const RunConfig& cfg,
                              const ParamStore& store, bool backward) {
    Tape tape;
    TapeParams tp(tape, store);
    Tape::Id repr;
    if (cached_repr) {
        repr = tape.constant(*cached_repr);
    } else {
        const auto tokens = tokenize_geometry(jet, cfg.tok);
        const int c = static_cast<int>(tokens.size());
        Mat coords(c, 2);
        std::vector<FourVector> fvs(static_cast<size_t>(c));
        for (int i = 0; i < c; ++i) {
            coords(i, 0) = tokens[static_cast<size_t>(i)].center_eta;
            coords(i, 1) = tokens[static_cast<size_t>(i)].center_phi;
            fvs[static_cast<size_t>(i)] = tokens[static_cast<size_t>(i)].group_fv;
        }
        Tape::Id emb = -1;
        for (const auto& tok : tokens) {
            Tape::Id row = encode_group_tape(tp, tape.constant(tok.normalized_features), cfg.tok,
                                             "tokenizer", false);
            emb = emb < 0 ? row : tape.concat_rows(emb, row);
        }
        std::vector<Tape::Id> bias;
        const std::vector<Tape::Id>* bias_ptr = nullptr;
        if (cfg.enc.use_physics_bias) {
            bias = bias_embed_tape(tp, compute_pair_features(fvs, coords), cfg.enc.heads,
                                   "biasembed", false);
            bias_ptr = &bias;
        }
        repr = encode_tape(tp, emb, coords, bias_ptr, cfg.enc, "student", false);
    }

    Tape::Id logits = class_head_tape(tp, repr, cfg.enc);
    const Mat& lv = tape.val(logits);
    ClsResult res;
    res.pred = 0;
    for (int j = 1; j < lv.cols; ++j)
        if (lv(0, j) > lv(0, res.pred)) res.pred = j;

    Tape::Id loss = tape.softmax_xent(logits, *jet.label);
    res.loss = tape.val(loss)(0, 0);
    if (backward) {
        tape.backward(loss);
        accumulate_grads(res.grads, tape);
    }
    return res;
}

} // namespace evaldetail

// Attach the class head and train under the requested regime.
//   scratch:    backbone randomly initialized, everything trains
//   frozen:     pretrained backbone fixed (bit-exact), head trains
//   fine-tuned: pretrained backbone and head train together
inline ProbeReport finetune(const RunConfig& cfg, const ParamStore* pretrained,
                            const std::vector<JetRecord>& dataset, Regime regime,
                            double label_fraction, uint64_t seed,
                            FinetuneCurves* curves = nullptr) {
    require(regime == Regime::scratch || pretrained != nullptr,
            "finetune: frozen and fine-tuned regimes need a pre-trained checkpoint");
    const auto labels = labels_of(dataset);
    int n_classes = 0;
    for (int y : labels) n_classes = std::max(n_classes, y + 1);
    require(n_classes >= 2, "finetune: need at least two classes");

    auto [train_pool, val_idx] = stratified_split(labels, cfg.eval.val_fraction, seed);
    const auto train_idx = stratified_fraction(train_pool, labels, label_fraction, n_classes, seed);

    // Parameter store: fresh init, then overwrite the backbone from the
    // pre-trained weights unless training from scratch.
    ParamStore store;
    init_pretrain_params(store, cfg.tok, cfg.enc, seed ^ 0x9E3779B97F4A7C15ULL);
    {
        Rng head_rng = Rng::derive(seed, "head_init");
        register_head_params(store, cfg.enc, n_classes, head_rng);
    }
    if (regime != Regime::scratch) {
        for (auto& [name, e] : store.entries_mut()) {
            if (name.rfind("head.", 0) == 0) continue;
            if (pretrained->has(name)) {
                const Mat& src = pretrained->get(name);
                require(src.same_shape(e.value), "finetune: checkpoint shape mismatch for " + name);
                e.value = src;
            }
        }
    }

    const bool frozen = regime == Regime::frozen;

    // Frozen backbone: cache token representations once.
    std::vector<Mat> cache;
    if (frozen) {
        cache.resize(dataset.size());
        std::vector<size_t> all;
        all.insert(all.end(), train_idx.begin(), train_idx.end());
        all.insert(all.end(), val_idx.begin(), val_idx.end());
        parallel_for(all.size(), resolve_thread_count(cfg.threads), [&](size_t i) {
            cache[all[i]] = encode_full_jet(dataset[all[i]], cfg, store);
        });
    }

    // head and backbone are separate optimizer groups: when fine-tuning, the
    // backbone follows the head at a reduced rate so the pre-trained features
    // are adapted rather than overwritten
    AdamOptimizer head_opt, backbone_opt;
    head_opt.weight_decay = cfg.train.weight_decay;
    backbone_opt.weight_decay = cfg.train.weight_decay;
    const double backbone_scale = regime == Regime::scratch ? 1.0 : cfg.eval.backbone_lr_scale;
    TrainConfig sched;
    sched.steps = cfg.eval.finetune_steps;
    sched.warmup_steps = cfg.eval.finetune_warmup;
    sched.peak_lr = cfg.eval.finetune_lr;
    sched.floor_lr = cfg.eval.finetune_lr * 0.01;

    const int batch = std::min<int>(cfg.eval.finetune_batch, static_cast<int>(train_idx.size()));
    const int threads = resolve_thread_count(cfg.threads);

    double best_loss = 1e300;
    int best_loss_step = 0;
    double best_acc = -1.0;
    std::vector<double> best_acc_per_class;

    auto validate = [&](int step) {
        std::vector<evaldetail::ClsResult> vr(val_idx.size());
        parallel_for(val_idx.size(), threads, [&](size_t i) {
            const size_t j = val_idx[i];
            vr[i] = evaldetail::classify_jet(dataset[j], frozen ? &cache[j] : nullptr, cfg, store,
                                             false);
        });
        double loss = 0.0;
        std::vector<int> preds(val_idx.size()), truth(val_idx.size());
        for (size_t i = 0; i < val_idx.size(); ++i) {
            loss += vr[i].loss;
            preds[i] = vr[i].pred;
            truth[i] = labels[val_idx[i]];
        }
        loss /= static_cast<double>(val_idx.size());
        std::vector<double> per_class;
        const double acc = macro_accuracy(preds, truth, &per_class);
        if (curves) {
            curves->steps.push_back(step);
            curves->val_loss.push_back(loss);
            curves->val_acc.push_back(acc);
        }
        if (loss < best_loss) {
            best_loss = loss;
            best_loss_step = step;
        }
        if (acc > best_acc) {
            best_acc = acc;
            best_acc_per_class = per_class;
        }
    };

    const int steps_per_epoch = std::max<int>(1, static_cast<int>((train_idx.size() + batch - 1) / batch));
    for (int step = 0; step < cfg.eval.finetune_steps; ++step) {
        const uint64_t epoch = static_cast<uint64_t>(step / steps_per_epoch);
        const int slot = step % steps_per_epoch;
        std::vector<size_t> order = train_idx;
        Rng shuffle_rng = Rng::derive(seed, "ftshuffle", {epoch});
        shuffle_rng.shuffle(order);
        const size_t begin = static_cast<size_t>(slot) * batch;
        const size_t end = std::min(begin + static_cast<size_t>(batch), order.size());

        std::vector<size_t> batch_idx(order.begin() + begin, order.begin() + end);
        std::vector<evaldetail::ClsResult> br(batch_idx.size());
        parallel_for(batch_idx.size(), threads, [&](size_t i) {
            const size_t j = batch_idx[i];
            br[i] = evaldetail::classify_jet(dataset[j], frozen ? &cache[j] : nullptr, cfg, store,
                                             true);
        });

        GradMap grads;
        for (const auto& r : br) merge_grads(grads, r.grads);
        const double inv = 1.0 / static_cast<double>(br.size());
        for (auto& [name, g] : grads)
            for (auto& x : g.v) x *= inv;
        // frozen regime, and the head-warmup phase of the other regimes, train
        // the head alone
        if (frozen || step < cfg.eval.head_warmup_steps) {
            for (auto it = grads.begin(); it != grads.end();)
                it = it->first.rfind("head.", 0) == 0 ? std::next(it) : grads.erase(it);
        }
        const double gnorm = grad_global_norm(grads);
        clip_grads(grads, cfg.train.grad_clip, gnorm);

        GradMap head_grads, backbone_grads;
        for (auto& [name, g] : grads)
            (name.rfind("head.", 0) == 0 ? head_grads : backbone_grads)[name] = std::move(g);
        const double lr = lr_schedule(step, sched);
        head_opt.step(store, head_grads, lr);
        if (!backbone_grads.empty()) backbone_opt.step(store, backbone_grads, lr * backbone_scale);

        if ((step + 1) % cfg.eval.val_every == 0 || step + 1 == cfg.eval.finetune_steps)
            validate(step + 1);
    }

    ProbeReport rep;
    rep.label_fraction = label_fraction;
    rep.regime = to_string(regime);
    rep.method = "class_head";
    rep.macro_accuracy = best_acc;
    rep.per_class_accuracy = best_acc_per_class;
    rep.steps_to_best_val_loss = best_loss_step;
    rep.seed = seed;
    rep.config_hash = cfg.config_hash_hex();
    rep.train_size = static_cast<int>(train_idx.size());
    rep.val_size = static_cast<int>(val_idx.size());
    return rep;
}

} // namespace jetjepa
