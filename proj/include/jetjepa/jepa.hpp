// Latent-prediction pre-training: the teacher encodes every token and is
// masked at its output; the student encodes the context tokens only; the
// predictor fills in each target block; smooth-L1 in embedding space drives
// the student while the teacher follows as an EMA of the student stack.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "jetjepa/backbone.hpp"
#include "jetjepa/checkpoint.hpp"
#include "jetjepa/config.hpp"
#include "jetjepa/masking.hpp"
#include "jetjepa/threadpool.hpp"

namespace jetjepa {

// Mean smooth-L1 over plain vectors (the tape op mirrors this exactly).
inline double smooth_l1(const std::vector<double>& pred, const std::vector<double>& target,
                        double beta) {
    require(pred.size() == target.size(), "smooth_l1: length mismatch");
    require(beta > 0.0, "smooth_l1: beta must be positive");
    double loss = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        const double ae = std::fabs(e);
        loss += ae < beta ? 0.5 * e * e / beta : ae - 0.5 * beta;
    }
    return loss / static_cast<double>(pred.size());
}

inline double jepa_loss(const std::vector<Mat>& predicted_blocks,
                        const std::vector<Mat>& target_blocks, double beta) {
    require(!predicted_blocks.empty(), "jepa_loss: need at least one block");
    require(predicted_blocks.size() == target_blocks.size(), "jepa_loss: block count mismatch");
    double sum = 0.0;
    for (size_t m = 0; m < predicted_blocks.size(); ++m) {
        require(predicted_blocks[m].same_shape(target_blocks[m]), "jepa_loss: block shape mismatch");
        sum += smooth_l1(predicted_blocks[m].v, target_blocks[m].v, beta);
    }
    return sum / static_cast<double>(predicted_blocks.size());
}

// Linear warmup to peak_lr, then cosine decay to floor_lr.
inline double lr_schedule(int step, const TrainConfig& cfg) {
    require(step >= 0 && step <= cfg.steps, "lr_schedule: step out of range");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
    const int span = cfg.steps - cfg.warmup_steps;
    if (span <= 0) return step >= cfg.steps ? cfg.floor_lr : cfg.peak_lr;
    const double t = static_cast<double>(step - cfg.warmup_steps) / span;
    return cfg.floor_lr + 0.5 * (cfg.peak_lr - cfg.floor_lr) * (1.0 + std::cos(kPi * t));
}

// Linear interpolation of the EMA momentum over the whole run.
inline double momentum_schedule(int step, const TrainConfig& cfg) {
    require(step >= 0 && step <= cfg.steps, "momentum_schedule: step out of range");
    if (cfg.steps == 0) return cfg.ema_momentum_end;
    const double t = static_cast<double>(step) / cfg.steps;
    return cfg.ema_momentum_start + (cfg.ema_momentum_end - cfg.ema_momentum_start) * t;
}

struct StepMetrics {
    double loss = 0.0;
    double lr = 0.0;
    double momentum = 0.0;
    double grad_norm = 0.0;      // before clipping
    double teacher_embed_std = 0.0; // collapse sentinel: mean per-dim std of teacher tokens
    int skipped_jets = 0;
};

// Teacher target rows are standardized over the embedding dimension before
// the loss. This pins the target scale, so the latent loss is comparable
// across training and a shrinking representation cannot fake progress. The
// collapse sentinel still watches the raw teacher outputs.
inline void standardize_rows(Mat& m, double eps = 1e-6) {
    for (int i = 0; i < m.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < m.cols; ++j) mean += m(i, j);
        mean /= m.cols;
        double var = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            const double d = m(i, j) - mean;
            var += d * d;
        }
        var /= m.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < m.cols; ++j) m(i, j) = (m(i, j) - mean) * inv;
    }
}

struct TrainState {
    RunConfig cfg;
    ParamStore params;
    AdamOptimizer opt;
    int step = 0;

    static TrainState init(const RunConfig& cfg) {
        cfg.validate();
        TrainState st;
        st.cfg = cfg;
        st.opt.weight_decay = cfg.train.weight_decay;
        init_pretrain_params(st.params, cfg.tok, cfg.enc, cfg.seed);
        return st;
    }
};

namespace traindetail {

struct JetResult {
    bool skipped = true;
    double loss = 0.0;
    GradMap grads;
    // sentinel accumulators over teacher token embeddings
    std::vector<double> dim_sum, dim_sumsq;
    int token_count = 0;
};

// Forward + backward for one jet. `dataset_index` seeds the jet's mask
// stream; augmentations (when enabled) draw from their own streams so that
// toggling them does not disturb masking randomness.
inline JetResult process_jet(const JetRecord& jet_in, uint64_t dataset_index, int step,
                             const RunConfig& cfg, const ParamStore& store, bool backward) {
    JetResult res;

    const JetRecord* jet = &jet_in;
    JetRecord augmented;
    if (cfg.train.augment_rotate || cfg.train.augment_smear_sigma > 0.0 ||
        cfg.train.augment_boost_max > 0.0) {
        Rng arng = Rng::derive(cfg.seed, "augment", {dataset_index, static_cast<uint64_t>(step)});
        augmented = jet_in;
        if (cfg.train.augment_rotate)
            augmented = augment_rotate(augmented, arng.uniform(-kPi, kPi));
        if (cfg.train.augment_smear_sigma > 0.0)
            augmented = augment_smear(augmented, cfg.train.augment_smear_sigma, arng.next_u64());
        if (cfg.train.augment_boost_max > 0.0)
            augmented = augment_boost(augmented,
                                      arng.uniform(-cfg.train.augment_boost_max, cfg.train.augment_boost_max));
        jet = &augmented;
    }

    const auto tokens = tokenize_geometry(*jet, cfg.tok);
    const int c = static_cast<int>(tokens.size());
    if (c < 2) return res; // skipped: nothing to mask

    Mat coords(c, 2);
    std::vector<FourVector> fvs(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        coords(i, 0) = tokens[static_cast<size_t>(i)].center_eta;
        coords(i, 1) = tokens[static_cast<size_t>(i)].center_phi;
        fvs[static_cast<size_t>(i)] = tokens[static_cast<size_t>(i)].group_fv;
    }

    Rng mask_rng = Rng::derive(cfg.seed, "mask", {dataset_index, static_cast<uint64_t>(step)});
    MaskSpec spec;
    try {
        spec = sample_masks(coords, cfg.masks, mask_rng);
    } catch (const JetJepaError&) {
        return res; // masks infeasible for this jet (e.g. targets cover it): skip
    }

    Tape tape;
    TapeParams tp(tape, store);

    // Token embeddings once, on the student tape; the teacher path reads a
    // detached copy so no gradient ever flows through it.
    std::vector<Tape::Id> token_rows;
    token_rows.reserve(static_cast<size_t>(c));
    for (const auto& tok : tokens) {
        Tape::Id emb = encode_group_tape(tp, tape.constant(tok.normalized_features), cfg.tok,
                                         "tokenizer", false);
        token_rows.push_back(emb);
    }
    Tape::Id tok_embed = token_rows[0];
    for (int i = 1; i < c; ++i) tok_embed = tape.concat_rows(tok_embed, token_rows[static_cast<size_t>(i)]);

    // --- teacher: encodes ALL tokens, masked at the output ---
    Tape::Id tok_detached = tape.constant(tape.val(tok_embed));
    std::vector<Tape::Id> teacher_bias;
    const std::vector<Tape::Id>* teacher_bias_ptr = nullptr;
    PairFeatures pf_all;
    if (cfg.enc.use_physics_bias) {
        pf_all = compute_pair_features(fvs, coords);
        teacher_bias = bias_embed_tape(tp, pf_all, cfg.enc.heads, "biasembed", true);
        teacher_bias_ptr = &teacher_bias;
    }
    Tape::Id teacher_out = encode_tape(tp, tok_detached, coords, teacher_bias_ptr, cfg.enc,
                                       "teacher", true);

    std::vector<Mat> target_mats;
    target_mats.reserve(spec.target_blocks.size());
    for (const auto& block : spec.target_blocks) {
        Mat tgt(static_cast<int>(block.size()), cfg.enc.dim);
        for (size_t r = 0; r < block.size(); ++r)
            for (int j = 0; j < cfg.enc.dim; ++j) tgt(static_cast<int>(r), j) = tape.val(teacher_out)(block[r], j);
        standardize_rows(tgt);
        target_mats.push_back(std::move(tgt));
    }

    // --- student: context tokens only ---
    const auto& ctx = spec.context_indices;
    const int n_ctx = static_cast<int>(ctx.size());
    Mat ctx_coords(n_ctx, 2);
    std::vector<FourVector> ctx_fvs(static_cast<size_t>(n_ctx));
    for (int i = 0; i < n_ctx; ++i) {
        ctx_coords(i, 0) = coords(ctx[static_cast<size_t>(i)], 0);
        ctx_coords(i, 1) = coords(ctx[static_cast<size_t>(i)], 1);
        ctx_fvs[static_cast<size_t>(i)] = fvs[static_cast<size_t>(ctx[static_cast<size_t>(i)])];
    }
    Tape::Id ctx_embed = tape.gather_rows(tok_embed, ctx);
    std::vector<Tape::Id> ctx_bias;
    const std::vector<Tape::Id>* ctx_bias_ptr = nullptr;
    if (cfg.enc.use_physics_bias) {
        ctx_bias = bias_embed_tape(tp, compute_pair_features(ctx_fvs, ctx_coords), cfg.enc.heads,
                                   "biasembed", false);
        ctx_bias_ptr = &ctx_bias;
    }
    Tape::Id student_out = encode_tape(tp, ctx_embed, ctx_coords, ctx_bias_ptr, cfg.enc,
                                       "student", false);

    // --- predictor, once per target block ---
    Tape::Id loss_sum = -1;
    for (size_t m = 0; m < spec.target_blocks.size(); ++m) {
        const auto& block = spec.target_blocks[m];
        Mat tgt_coords(static_cast<int>(block.size()), 2);
        for (size_t r = 0; r < block.size(); ++r) {
            tgt_coords(static_cast<int>(r), 0) = coords(block[r], 0);
            tgt_coords(static_cast<int>(r), 1) = coords(block[r], 1);
        }
        Tape::Id pred = predict_targets_tape(tp, student_out, ctx_coords, tgt_coords, cfg.enc);
        Tape::Id l = tape.smooth_l1_loss(pred, target_mats[m], cfg.train.smooth_l1_beta);
        loss_sum = loss_sum < 0 ? l : tape.add(loss_sum, l);
    }
    Tape::Id loss = tape.scale(loss_sum, 1.0 / static_cast<double>(spec.target_blocks.size()));

    res.skipped = false;
    res.loss = tape.val(loss)(0, 0);

    if (backward) {
        tape.backward(loss);
        accumulate_grads(res.grads, tape);
    }

    // collapse sentinel: accumulate per-dimension sums over teacher tokens
    const Mat& to = tape.val(teacher_out);
    res.dim_sum.assign(static_cast<size_t>(cfg.enc.dim), 0.0);
    res.dim_sumsq.assign(static_cast<size_t>(cfg.enc.dim), 0.0);
    for (int i = 0; i < to.rows; ++i) {
        for (int j = 0; j < to.cols; ++j) {
            res.dim_sum[static_cast<size_t>(j)] += to(i, j);
            res.dim_sumsq[static_cast<size_t>(j)] += to(i, j) * to(i, j);
        }
    }
    res.token_count = to.rows;
    return res;
}

} // namespace traindetail

struct BatchJet {
    const JetRecord* jet = nullptr;
    uint64_t dataset_index = 0;
};

// One optimization step over a batch of jets. Per-jet work fans out across
// threads; gradients reduce in dataset order so the result is independent of
// the worker count.
inline StepMetrics train_step(TrainState& state, const std::vector<BatchJet>& batch) {
    require(!batch.empty(), "train_step: empty batch");
    const RunConfig& cfg = state.cfg;

    std::vector<traindetail::JetResult> results(batch.size());
    const int threads = resolve_thread_count(cfg.threads);
    parallel_for(batch.size(), threads, [&](size_t i) {
        results[i] = traindetail::process_jet(*batch[i].jet, batch[i].dataset_index, state.step,
                                              cfg, state.params, true);
    });

    GradMap grads;
    double loss_sum = 0.0;
    int used = 0;
    int skipped = 0;
    std::vector<double> dim_sum(static_cast<size_t>(cfg.enc.dim), 0.0);
    std::vector<double> dim_sumsq(static_cast<size_t>(cfg.enc.dim), 0.0);
    long total_tokens = 0;
    for (const auto& r : results) {
        if (r.skipped) {
            ++skipped;
            continue;
        }
        ++used;
        loss_sum += r.loss;
        merge_grads(grads, r.grads);
        for (int j = 0; j < cfg.enc.dim; ++j) {
            dim_sum[static_cast<size_t>(j)] += r.dim_sum[static_cast<size_t>(j)];
            dim_sumsq[static_cast<size_t>(j)] += r.dim_sumsq[static_cast<size_t>(j)];
        }
        total_tokens += r.token_count;
    }
    if (used == 0) fail("train_step: every jet in the batch was skipped (fewer than 2 tokens each)");

    const double inv_used = 1.0 / used;
    for (auto& [name, g] : grads)
        for (auto& x : g.v) x *= inv_used;

    StepMetrics m;
    m.loss = loss_sum * inv_used;
    m.skipped_jets = skipped;
    if (!std::isfinite(m.loss)) {
        std::string idx;
        for (const auto& b : batch) idx += std::to_string(b.dataset_index) + " ";
        fail("train_step: non-finite loss at step " + std::to_string(state.step) +
             "; batch dataset indices: " + idx);
    }

    m.lr = lr_schedule(state.step, cfg.train);
    m.momentum = momentum_schedule(state.step, cfg.train);
    m.grad_norm = grad_global_norm(grads);
    clip_grads(grads, cfg.train.grad_clip, m.grad_norm);

    state.opt.step(state.params, grads, m.lr);
    ema_update(state.params, "teacher.", "student.", m.momentum);
    ++state.step;

    if (total_tokens > 1) {
        double std_sum = 0.0;
        for (int j = 0; j < cfg.enc.dim; ++j) {
            const double mean = dim_sum[static_cast<size_t>(j)] / total_tokens;
            const double var = dim_sumsq[static_cast<size_t>(j)] / total_tokens - mean * mean;
            std_sum += std::sqrt(std::max(var, 0.0));
        }
        m.teacher_embed_std = std_sum / cfg.enc.dim;
    }
    return m;
}

// --- full pre-training run -----------------------------------------------------

struct PretrainResult {
    std::string checkpoint_path;
    std::string state_path;
    std::string loss_csv_path;
    std::vector<StepMetrics> metrics;
};

namespace traindetail {

inline std::vector<uint64_t> epoch_order(size_t n, uint64_t seed, uint64_t epoch) {
    std::vector<uint64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng::derive(seed, "shuffle", {epoch});
    rng.shuffle(idx);
    return idx;
}

inline std::string fmt_metric(double d) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

} // namespace traindetail

// Runs train_step over seeded shuffled epochs, logging a loss curve and a
// collapse-sentinel curve, checkpointing periodically, and supporting
// bit-exact resume from the saved train state.
inline PretrainResult pretrain(TrainState& state, const std::vector<JetRecord>& dataset,
                               const std::string& out_dir, bool append_logs = false) {
    require(!dataset.empty(), "pretrain: dataset is empty");
    const RunConfig& cfg = state.cfg;
    std::filesystem::create_directories(out_dir);

    PretrainResult res;
    res.loss_csv_path = out_dir + "/loss.csv";
    const std::string sentinel_path = out_dir + "/sentinel.csv";

    std::ofstream loss_csv(res.loss_csv_path, append_logs ? std::ios::app : std::ios::trunc);
    std::ofstream sentinel_csv(sentinel_path, append_logs ? std::ios::app : std::ios::trunc);
    if (!loss_csv || !sentinel_csv) fail(out_dir + ": cannot open log files");
    if (!append_logs) {
        loss_csv << "step,loss,lr,momentum,grad_norm\n";
        sentinel_csv << "step,teacher_embed_std\n";
    }

    const int steps_per_epoch = static_cast<int>((dataset.size() + cfg.train.batch_size - 1) /
                                                 cfg.train.batch_size);
    MetaMap meta;
    meta["config_hash"] = cfg.config_hash_hex();
    meta["config"] = cfg.canonical();

    auto save_all = [&](const std::string& tag) {
        const std::string ck = out_dir + "/ckpt_" + tag + ".jjck";
        save_checkpoint(ck, state.params, static_cast<uint64_t>(state.step), meta);
        const std::string st = out_dir + "/state_" + tag + ".jjst";
        save_train_state(st, state.params, state.opt, static_cast<uint64_t>(state.step), meta);
        return std::make_pair(ck, st);
    };

    while (state.step < cfg.train.steps) {
        const int step = state.step;
        const uint64_t epoch = static_cast<uint64_t>(step / steps_per_epoch);
        const int slot = step % steps_per_epoch;
        const auto order = traindetail::epoch_order(dataset.size(), cfg.seed, epoch);

        std::vector<BatchJet> batch;
        const size_t begin = static_cast<size_t>(slot) * cfg.train.batch_size;
        const size_t end = std::min(begin + cfg.train.batch_size, dataset.size());
        for (size_t i = begin; i < end; ++i)
            batch.push_back({&dataset[order[i]], order[i]});

        const StepMetrics m = train_step(state, batch);
        res.metrics.push_back(m);

        loss_csv << step << ',' << traindetail::fmt_metric(m.loss) << ','
                 << traindetail::fmt_metric(m.lr) << ',' << traindetail::fmt_metric(m.momentum)
                 << ',' << traindetail::fmt_metric(m.grad_norm) << '\n';
        sentinel_csv << step << ',' << traindetail::fmt_metric(m.teacher_embed_std) << '\n';

        if (state.step % cfg.train.checkpoint_every == 0 && state.step < cfg.train.steps)
            save_all("step" + std::to_string(state.step));
    }

    loss_csv.flush();
    sentinel_csv.flush();
    auto [ck, st] = save_all("final");
    res.checkpoint_path = ck;
    res.state_path = st;
    return res;
}

// Rebuild a TrainState (bit-exactly) from a saved train-state file.
inline TrainState resume_train_state(const RunConfig& cfg, const std::string& state_path) {
    TrainState state = TrainState::init(cfg);
    TrainStateFile ts = load_train_state(state_path);
    const auto hash = cfg.config_hash_hex();
    auto it = ts.meta.find("config_hash");
    if (it != ts.meta.end() && it->second != hash)
        fail(state_path + ": config hash mismatch (state " + it->second + ", config " + hash + ")");
    for (auto& [name, e] : state.params.entries_mut()) {
        require(ts.params.has(name), state_path + ": missing parameter " + name);
        const Mat& src = ts.params.get(name);
        require(src.same_shape(e.value), state_path + ": shape mismatch for " + name);
        e.value = src;
    }
    state.opt.m1_mut() = ts.adam_m1;
    state.opt.m2_mut() = ts.adam_m2;
    state.opt.set_step_count(ts.adam_t);
    state.step = static_cast<int>(ts.step);
    return state;
}

} // namespace jetjepa
