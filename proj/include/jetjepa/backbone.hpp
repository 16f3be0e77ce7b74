// Differentiable model components: pairwise physics features and their
// per-head bias embedding, the coordinate positional embedder, transformer
// encoder stacks with register tokens and additive attention bias, the
// latent predictor with shared mask tokens, and the class-attention head.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "jetjepa/autodiff.hpp"
#include "jetjepa/params.hpp"
#include "jetjepa/tokenizer.hpp"

namespace jetjepa {

struct EncoderConfig {
    int depth = 4;      // transformer blocks per encoder (12 at full scale)
    int dim = 32;
    int heads = 4;
    int registers = 8;
    bool use_physics_bias = true;
    int mlp_ratio = 4;
    int pred_depth = 2; // predictor blocks
    int pred_dim = 16;  // predictor width, d/2 by default
    int pred_heads = 4;
    int pos_hidden = 32;  // positional embedder hidden width
    int bias_hidden = 16; // bias embedder hidden width

    void validate() const {
        require(depth >= 0, "backbone: depth must be >= 0");
        require(dim >= 1 && heads >= 1 && dim % heads == 0, "backbone: dim must be divisible by heads");
        require(registers >= 0, "backbone: registers must be >= 0");
        require(mlp_ratio >= 1, "backbone: mlp_ratio must be >= 1");
        require(pred_depth >= 0 && pred_dim >= 1 && pred_heads >= 1 && pred_dim % pred_heads == 0,
                "backbone: pred_dim must be divisible by pred_heads");
        require(pos_hidden >= 1 && bias_hidden >= 1, "backbone: embedder widths must be >= 1");
    }
};

// Pairwise (deltaR, kT, z, m^2) for every ordered token pair, flattened to a
// (c*c) x 4 matrix in row-major pair order. Symmetric by construction.
struct PairFeatures {
    int c = 0;
    Mat channels; // (c*c) x 4

    double at(int i, int j, int ch) const { return channels(i * c + j, ch); }
};

inline PairFeatures compute_pair_features(const std::vector<FourVector>& group_fvs,
                                          const Mat& center_coords) {
    const int c = static_cast<int>(group_fvs.size());
    require(c >= 1, "compute_pair_features: need at least one token");
    PairFeatures pf;
    pf.c = c;
    pf.channels = Mat(c * c, 4);

    std::vector<double> eta(static_cast<size_t>(c)), phi(static_cast<size_t>(c)), pt(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) {
        const auto& fv = group_fvs[static_cast<size_t>(i)];
        pt[static_cast<size_t>(i)] = fv.pt();
        if (fv.pt() > 1e-12) {
            eta[static_cast<size_t>(i)] = fv.eta();
            phi[static_cast<size_t>(i)] = fv.phi();
        } else { // degenerate transverse cancellation: fall back to the center
            eta[static_cast<size_t>(i)] = center_coords(i, 0);
            phi[static_cast<size_t>(i)] = center_coords(i, 1);
        }
    }

    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
            const double dr = delta_r(eta[static_cast<size_t>(i)], phi[static_cast<size_t>(i)],
                                      eta[static_cast<size_t>(j)], phi[static_cast<size_t>(j)]);
            const double pt_min = std::min(pt[static_cast<size_t>(i)], pt[static_cast<size_t>(j)]);
            const double pt_sum = pt[static_cast<size_t>(i)] + pt[static_cast<size_t>(j)];
            const auto& a = group_fvs[static_cast<size_t>(i)];
            const auto& b = group_fvs[static_cast<size_t>(j)];
            const double e_sum = a.e + b.e;
            const double px = a.px + b.px, py = a.py + b.py, pz = a.pz + b.pz;
            const int row = i * c + j;
            pf.channels(row, 0) = dr;
            pf.channels(row, 1) = pt_min * dr;
            pf.channels(row, 2) = pt_sum > 0.0 ? pt_min / pt_sum : 0.5;
            pf.channels(row, 3) = e_sum * e_sum - (px * px + py * py + pz * pz);
        }
    }
    return pf;
}

// ln-compress the four channels before the embedding MLP.
inline Mat bias_embed_input(const PairFeatures& pf) {
    constexpr double eps = 1e-8;
    Mat in(pf.channels.rows, 4);
    for (int r = 0; r < in.rows; ++r) {
        in(r, 0) = std::log(pf.channels(r, 0) + eps);
        in(r, 1) = std::log(pf.channels(r, 1) + eps);
        in(r, 2) = std::log(pf.channels(r, 2) + eps);
        in(r, 3) = std::log(std::max(pf.channels(r, 3), eps));
    }
    return in;
}

// Pointwise 2-layer MLP mapping the 4 pair channels to one scalar per head.
// Returns `heads` tape nodes of shape c x c.
inline std::vector<Tape::Id> bias_embed_tape(TapeParams& tp, const PairFeatures& pf, int heads,
                                             const std::string& prefix, bool detached) {
    Tape& t = tp.tape();
    auto p = [&](const std::string& n) { return detached ? tp.detached(n) : tp(n); };
    Tape::Id h = t.constant(bias_embed_input(pf));
    h = t.linear(h, p(prefix + ".mlp.0.weight"), p(prefix + ".mlp.0.bias"));
    h = t.gelu(h);
    h = t.linear(h, p(prefix + ".mlp.1.weight"), p(prefix + ".mlp.1.bias")); // (c*c) x heads
    std::vector<Tape::Id> out;
    out.reserve(static_cast<size_t>(heads));
    for (int head = 0; head < heads; ++head)
        out.push_back(t.reshape(t.slice_cols(h, head, head + 1), pf.c, pf.c));
    return out;
}

// Small MLP from (eta, phi) to the model dimension.
inline Tape::Id positional_embed_tape(TapeParams& tp, Tape::Id coords, const std::string& prefix,
                                      bool detached) {
    Tape& t = tp.tape();
    auto p = [&](const std::string& n) { return detached ? tp.detached(n) : tp(n); };
    Tape::Id h = t.linear(coords, p(prefix + ".mlp.0.weight"), p(prefix + ".mlp.0.bias"));
    h = t.gelu(h);
    return t.linear(h, p(prefix + ".mlp.1.weight"), p(prefix + ".mlp.1.bias"));
}

namespace detail {

// One pre-norm multi-head self-attention + feed-forward block. `bias_heads`,
// when present, is added to the pre-softmax logits of every head.
inline Tape::Id transformer_block(TapeParams& tp, Tape::Id x, int dim, int heads, int mlp_ratio,
                                  const std::vector<Tape::Id>* bias_heads,
                                  const std::string& prefix, bool detached) {
    Tape& t = tp.tape();
    auto p = [&](const std::string& n) { return detached ? tp.detached(n) : tp(n); };
    const int dh = dim / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tape::Id h1 = t.layernorm_rows(x, p(prefix + ".ln1.gamma"), p(prefix + ".ln1.beta"));
    Tape::Id q = t.linear(h1, p(prefix + ".attn.q.weight"), p(prefix + ".attn.q.bias"));
    Tape::Id k = t.linear(h1, p(prefix + ".attn.k.weight"), p(prefix + ".attn.k.bias"));
    Tape::Id v = t.linear(h1, p(prefix + ".attn.v.weight"), p(prefix + ".attn.v.bias"));

    std::vector<Tape::Id> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int head = 0; head < heads; ++head) {
        const int c0 = head * dh, c1 = (head + 1) * dh;
        Tape::Id logits = t.scale(t.matmul_nt(t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1)), att_scale);
        if (bias_heads) logits = t.add(logits, (*bias_heads)[static_cast<size_t>(head)]);
        head_outs.push_back(t.matmul(t.softmax_rows(logits), t.slice_cols(v, c0, c1)));
    }
    Tape::Id att = t.linear(t.concat_cols(head_outs), p(prefix + ".attn.out.weight"),
                            p(prefix + ".attn.out.bias"));
    x = t.add(x, att);

    Tape::Id h2 = t.layernorm_rows(x, p(prefix + ".ln2.gamma"), p(prefix + ".ln2.beta"));
    Tape::Id f = t.linear(h2, p(prefix + ".ff.0.weight"), p(prefix + ".ff.0.bias"));
    f = t.gelu(f);
    f = t.linear(f, p(prefix + ".ff.1.weight"), p(prefix + ".ff.1.bias"));
    return t.add(x, f);
}

} // namespace detail

// Encoder stack: add positional embeddings, prepend register tokens, run the
// blocks (bias extended with zero rows/columns at the register slots), strip
// the registers again.
inline Tape::Id encode_tape(TapeParams& tp, Tape::Id token_embeddings, const Mat& center_coords,
                            const std::vector<Tape::Id>* bias_heads, const EncoderConfig& cfg,
                            const std::string& prefix, bool detached) {
    Tape& t = tp.tape();
    const int c = t.val(token_embeddings).rows;
    require(t.val(token_embeddings).cols == cfg.dim, "encode: token dimension mismatch");
    require(center_coords.rows == c && center_coords.cols == 2, "encode: bad coordinate shape");

    Tape::Id pos = positional_embed_tape(tp, t.constant(center_coords), "posembed", detached);
    Tape::Id x = t.add(token_embeddings, pos);

    const int r = cfg.registers;
    if (r > 0) {
        Tape::Id regs = detached ? tp.detached(prefix + ".registers") : tp(prefix + ".registers");
        x = t.concat_rows(regs, x);
    }

    std::vector<Tape::Id> padded;
    const std::vector<Tape::Id>* bias_ptr = nullptr;
    if (bias_heads && cfg.use_physics_bias) {
        require(static_cast<int>(bias_heads->size()) == cfg.heads, "encode: bias head count mismatch");
        padded.reserve(bias_heads->size());
        for (Tape::Id b : *bias_heads) {
            require(t.val(b).rows == c && t.val(b).cols == c, "encode: bias shape mismatch");
            padded.push_back(r > 0 ? t.pad_topleft(b, r) : b); // registers get zero bias
        }
        bias_ptr = &padded;
    }

    for (int block = 0; block < cfg.depth; ++block)
        x = detail::transformer_block(tp, x, cfg.dim, cfg.heads, cfg.mlp_ratio, bias_ptr,
                                      prefix + ".block" + std::to_string(block), detached);

    return r > 0 ? t.slice_rows(x, r, r + c) : x;
}

// Predictor: project context representations (plus their positional
// embeddings) into the predictor width, append one shared mask token per
// target position (with its positional embedding), run a shallow transformer
// without physics bias, and read the mask slots back out at model width.
inline Tape::Id predict_targets_tape(TapeParams& tp, Tape::Id context_repr,
                                     const Mat& context_positions, const Mat& target_positions,
                                     const EncoderConfig& cfg,
                                     const std::string& prefix = "predictor") {
    Tape& t = tp.tape();
    const int n_ctx = t.val(context_repr).rows;
    const int n_tgt = target_positions.rows;
    require(n_ctx >= 1, "predict_targets: empty context");
    require(n_tgt >= 1, "predict_targets: no target positions");

    Tape::Id ctx_pos = positional_embed_tape(tp, t.constant(context_positions), "posembed", false);
    Tape::Id ctx_in = t.linear(t.add(context_repr, ctx_pos), tp(prefix + ".proj_in.weight"),
                               tp(prefix + ".proj_in.bias"));

    Tape::Id tgt_pos = positional_embed_tape(tp, t.constant(target_positions), "posembed", false);
    Tape::Id tgt_pos_p = t.linear(tgt_pos, tp(prefix + ".proj_in.weight"), tp(prefix + ".proj_in.bias"));
    Tape::Id mask = t.broadcast_row(tp(prefix + ".mask_token"), n_tgt);
    Tape::Id tgt_in = t.add(mask, tgt_pos_p);

    Tape::Id x = t.concat_rows(ctx_in, tgt_in);
    for (int block = 0; block < cfg.pred_depth; ++block)
        x = detail::transformer_block(tp, x, cfg.pred_dim, cfg.pred_heads, cfg.mlp_ratio, nullptr,
                                      prefix + ".block" + std::to_string(block), false);

    Tape::Id slots = t.slice_rows(x, n_ctx, n_ctx + n_tgt);
    return t.linear(slots, tp(prefix + ".proj_out.weight"), tp(prefix + ".proj_out.bias"));
}

// Classification head: a learnable class token queries the token sequence
// through two class-attention blocks, then an MLP emits the logits.
inline Tape::Id class_head_tape(TapeParams& tp, Tape::Id token_repr, const EncoderConfig& cfg,
                                const std::string& prefix = "head") {
    Tape& t = tp.tape();
    require(t.val(token_repr).rows >= 1, "class_head: need at least one token");
    const int dh = cfg.dim / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tape::Id cls = tp(prefix + ".cls_token"); // 1 x d
    for (int block = 0; block < 2; ++block) {
        const std::string base = prefix + ".block" + std::to_string(block);
        Tape::Id gamma1 = tp(base + ".ln1.gamma"), beta1 = tp(base + ".ln1.beta");
        Tape::Id qn = t.layernorm_rows(cls, gamma1, beta1);
        Tape::Id kvn = t.layernorm_rows(token_repr, gamma1, beta1);
        Tape::Id q = t.linear(qn, tp(base + ".attn.q.weight"), tp(base + ".attn.q.bias"));
        Tape::Id k = t.linear(kvn, tp(base + ".attn.k.weight"), tp(base + ".attn.k.bias"));
        Tape::Id v = t.linear(kvn, tp(base + ".attn.v.weight"), tp(base + ".attn.v.bias"));

        std::vector<Tape::Id> head_outs;
        head_outs.reserve(static_cast<size_t>(cfg.heads));
        for (int head = 0; head < cfg.heads; ++head) {
            const int c0 = head * dh, c1 = (head + 1) * dh;
            Tape::Id logits = t.scale(t.matmul_nt(t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1)),
                                      att_scale);
            head_outs.push_back(t.matmul(t.softmax_rows(logits), t.slice_cols(v, c0, c1)));
        }
        Tape::Id att = t.linear(t.concat_cols(head_outs), tp(base + ".attn.out.weight"),
                                tp(base + ".attn.out.bias"));
        cls = t.add(cls, att);

        Tape::Id h2 = t.layernorm_rows(cls, tp(base + ".ln2.gamma"), tp(base + ".ln2.beta"));
        Tape::Id f = t.linear(h2, tp(base + ".ff.0.weight"), tp(base + ".ff.0.bias"));
        f = t.gelu(f);
        f = t.linear(f, tp(base + ".ff.1.weight"), tp(base + ".ff.1.bias"));
        cls = t.add(cls, f);
    }

    Tape::Id h = t.linear(cls, tp(prefix + ".mlp.0.weight"), tp(prefix + ".mlp.0.bias"));
    h = t.gelu(h);
    return t.linear(h, tp(prefix + ".mlp.1.weight"), tp(prefix + ".mlp.1.bias"));
}

// --- parameter registration ---------------------------------------------------

namespace detail {

inline void add_linear(ParamStore& s, const std::string& base, int out, int in, Rng& rng) {
    const double sigma = std::sqrt(2.0 / (in + out)); // Glorot
    s.add(base + ".weight", Mat::gaussian(out, in, sigma, rng), true);
    s.add(base + ".bias", Mat(1, out), false);
}

inline void add_block(ParamStore& s, const std::string& base, int dim, int mlp_ratio, Rng& rng) {
    s.add(base + ".ln1.gamma", Mat(1, dim, 1.0), false);
    s.add(base + ".ln1.beta", Mat(1, dim), false);
    add_linear(s, base + ".attn.q", dim, dim, rng);
    add_linear(s, base + ".attn.k", dim, dim, rng);
    add_linear(s, base + ".attn.v", dim, dim, rng);
    add_linear(s, base + ".attn.out", dim, dim, rng);
    s.add(base + ".ln2.gamma", Mat(1, dim, 1.0), false);
    s.add(base + ".ln2.beta", Mat(1, dim), false);
    add_linear(s, base + ".ff.0", dim * mlp_ratio, dim, rng);
    add_linear(s, base + ".ff.1", dim, dim * mlp_ratio, rng);
}

} // namespace detail

inline void register_encoder_params(ParamStore& s, const EncoderConfig& cfg, Rng& rng,
                                    const std::string& prefix) {
    if (cfg.registers > 0)
        s.add(prefix + ".registers", Mat::gaussian(cfg.registers, cfg.dim, 0.02, rng), false);
    for (int b = 0; b < cfg.depth; ++b)
        detail::add_block(s, prefix + ".block" + std::to_string(b), cfg.dim, cfg.mlp_ratio, rng);
}

inline void register_shared_embedders(ParamStore& s, const EncoderConfig& cfg, Rng& rng) {
    detail::add_linear(s, "posembed.mlp.0", cfg.pos_hidden, 2, rng);
    detail::add_linear(s, "posembed.mlp.1", cfg.dim, cfg.pos_hidden, rng);
    detail::add_linear(s, "biasembed.mlp.0", cfg.bias_hidden, 4, rng);
    detail::add_linear(s, "biasembed.mlp.1", cfg.heads, cfg.bias_hidden, rng);
}

inline void register_predictor_params(ParamStore& s, const EncoderConfig& cfg, Rng& rng,
                                      const std::string& prefix = "predictor") {
    detail::add_linear(s, prefix + ".proj_in", cfg.pred_dim, cfg.dim, rng);
    s.add(prefix + ".mask_token", Mat::gaussian(1, cfg.pred_dim, 0.02, rng), false);
    for (int b = 0; b < cfg.pred_depth; ++b)
        detail::add_block(s, prefix + ".block" + std::to_string(b), cfg.pred_dim, cfg.mlp_ratio, rng);
    detail::add_linear(s, prefix + ".proj_out", cfg.dim, cfg.pred_dim, rng);
}

inline void register_head_params(ParamStore& s, const EncoderConfig& cfg, int n_classes, Rng& rng,
                                 const std::string& prefix = "head") {
    s.add(prefix + ".cls_token", Mat::gaussian(1, cfg.dim, 0.02, rng), false);
    for (int b = 0; b < 2; ++b)
        detail::add_block(s, prefix + ".block" + std::to_string(b), cfg.dim, cfg.mlp_ratio, rng);
    detail::add_linear(s, prefix + ".mlp.0", cfg.dim, cfg.dim, rng);
    detail::add_linear(s, prefix + ".mlp.1", n_classes, cfg.dim, rng);
}

// Clone every student.* parameter into teacher.* with identical values.
inline void clone_student_to_teacher(ParamStore& s) {
    const auto names = s.names_with_prefix("student.");
    for (const auto& name : names) {
        const std::string peer = "teacher." + name.substr(std::string("student.").size());
        if (s.has(peer)) {
            s.get_mut(peer) = s.get(name);
        } else {
            s.add(peer, s.get(name), false); // teacher never decays: it is never optimized
        }
    }
}

// Register everything the pre-training stage needs.
inline void init_pretrain_params(ParamStore& s, const TokenizerConfig& tok_cfg,
                                 const EncoderConfig& enc_cfg, uint64_t seed) {
    tok_cfg.validate();
    enc_cfg.validate();
    require(tok_cfg.d == enc_cfg.dim, "tokenizer d must equal encoder dim");
    Rng rng = Rng::derive(seed, "init");
    register_tokenizer_params(s, tok_cfg, rng);
    register_shared_embedders(s, enc_cfg, rng);
    register_encoder_params(s, enc_cfg, rng, "student");
    register_predictor_params(s, enc_cfg, rng);
    clone_student_to_teacher(s);
}

} // namespace jetjepa
