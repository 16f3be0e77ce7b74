// Particle-group tokenizer: farthest point sampling picks group centers,
// kNN in the (eta, phi) plane builds the groups, features are normalized
// against the center, and a shared MLP + max-pool encodes each group into a
// permutation-invariant token.
#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "jetjepa/autodiff.hpp"
#include "jetjepa/common.hpp"
#include "jetjepa/jetdata.hpp"
#include "jetjepa/params.hpp"

namespace jetjepa {

enum class FpsStart { highest_pt, lowest_index };

struct TokenizerConfig {
    double center_ratio = 0.25;
    int min_centers = 4;
    int k = 8;
    int d = 32;                          // token embedding dimension
    std::vector<int> mlp_widths = {64, 32}; // layer output widths; last must equal d
    FpsStart start_rule = FpsStart::highest_pt;

    void validate() const {
        require(center_ratio > 0.0 && center_ratio <= 1.0, "tokenizer: center_ratio must be in (0, 1]");
        require(min_centers >= 1, "tokenizer: min_centers must be >= 1");
        require(k >= 1, "tokenizer: k must be >= 1");
        require(d >= 1, "tokenizer: d must be >= 1");
        require(!mlp_widths.empty() && mlp_widths.back() == d,
                "tokenizer: mlp_widths must end in d");
        for (int w : mlp_widths) require(w >= 1, "tokenizer: mlp width must be >= 1");
    }
};

struct GroupToken {
    int center_index = 0;
    std::vector<int> member_indices; // exactly k entries; center repeated if n < k
    Mat normalized_features;         // k x 8, center row is zero
    double center_eta = 0.0;
    double center_phi = 0.0;
    FourVector group_fv;             // members summed once each
    std::vector<double> embedding;   // d entries, filled by encode
};

inline int token_count(int n, const TokenizerConfig& cfg) {
    require(n >= 1, "token_count: need at least one particle");
    const int c = static_cast<int>(std::ceil(cfg.center_ratio * n));
    return std::clamp(c, std::min(cfg.min_centers, n), n);
}

// Greedy farthest point sampling on wrapped (eta, phi) coordinates.
// coords is n x 2; pt breaks the start according to the rule; ties go to the
// lowest index everywhere.
inline std::vector<int> farthest_point_sample(const Mat& coords, int c,
                                              const std::vector<double>& pt,
                                              FpsStart start_rule = FpsStart::highest_pt) {
    const int n = coords.rows;
    require(c >= 1 && c <= n, "farthest_point_sample: need 1 <= c <= n");

    int first = 0;
    if (start_rule == FpsStart::highest_pt) {
        for (int i = 1; i < n; ++i)
            if (pt[static_cast<size_t>(i)] > pt[static_cast<size_t>(first)]) first = i;
    }

    std::vector<int> centers{first};
    std::vector<double> min_dist(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        min_dist[static_cast<size_t>(i)] =
            delta_r(coords(i, 0), coords(i, 1), coords(first, 0), coords(first, 1));
    min_dist[static_cast<size_t>(first)] = -1.0;

    while (static_cast<int>(centers.size()) < c) {
        int best = -1;
        for (int i = 0; i < n; ++i) {
            if (min_dist[static_cast<size_t>(i)] < 0.0) continue; // already chosen
            if (best < 0 || min_dist[static_cast<size_t>(i)] > min_dist[static_cast<size_t>(best)]) best = i;
        }
        centers.push_back(best);
        min_dist[static_cast<size_t>(best)] = -1.0;
        for (int i = 0; i < n; ++i) {
            if (min_dist[static_cast<size_t>(i)] < 0.0) continue;
            const double d = delta_r(coords(i, 0), coords(i, 1), coords(best, 0), coords(best, 1));
            if (d < min_dist[static_cast<size_t>(i)]) min_dist[static_cast<size_t>(i)] = d;
        }
    }
    return centers;
}

// k nearest particles to each center (center included). If n < k the center
// index is repeated to keep groups rectangular.
inline std::vector<std::vector<int>> knn_group(const Mat& coords, const std::vector<int>& centers,
                                               int k) {
    require(k >= 1, "knn_group: k must be >= 1");
    const int n = coords.rows;
    std::vector<std::vector<int>> groups;
    groups.reserve(centers.size());
    std::vector<std::pair<double, int>> order(static_cast<size_t>(n));
    for (int center : centers) {
        for (int i = 0; i < n; ++i)
            order[static_cast<size_t>(i)] = {
                delta_r(coords(i, 0), coords(i, 1), coords(center, 0), coords(center, 1)), i};
        std::sort(order.begin(), order.end()); // (distance, index): ties by lowest index
        std::vector<int> members;
        members.reserve(static_cast<size_t>(k));
        for (int i = 0; i < std::min(k, n); ++i) members.push_back(order[static_cast<size_t>(i)].second);
        while (static_cast<int>(members.size()) < k) members.push_back(center);
        groups.push_back(std::move(members));
    }
    return groups;
}

// Subtract the center's full feature vector from every member row.
inline Mat normalize_group(const Mat& features, const std::vector<double>& center_feature) {
    Mat out = features;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out(i, j) -= center_feature[static_cast<size_t>(j)];
    return out;
}

// Summed four-vector over the distinct members of a group. Padded duplicate
// indices are counted once so padding never invents energy.
inline FourVector group_four_vector(const JetRecord& jet, const std::vector<int>& member_indices) {
    std::vector<int> uniq = member_indices;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    FourVector sum;
    for (int idx : uniq) {
        require(idx >= 0 && idx < static_cast<int>(jet.particles.size()),
                "group_four_vector: member index out of range");
        sum += four_vector(jet.particles[static_cast<size_t>(idx)]);
    }
    return sum;
}

// Shared-MLP + max-pool group encoder on the tape. `normalized` is a k x 8
// constant; layer parameters are <prefix>.mlp.<i>.weight/bias.
inline Tape::Id encode_group_tape(TapeParams& tp, Tape::Id normalized,
                                  const TokenizerConfig& cfg, const std::string& prefix,
                                  bool detached = false) {
    Tape& t = tp.tape();
    Tape::Id h = normalized;
    for (size_t layer = 0; layer < cfg.mlp_widths.size(); ++layer) {
        const std::string base = prefix + ".mlp." + std::to_string(layer);
        const Tape::Id w = detached ? tp.detached(base + ".weight") : tp(base + ".weight");
        const Tape::Id b = detached ? tp.detached(base + ".bias") : tp(base + ".bias");
        h = t.linear(h, w, b);
        if (layer + 1 < cfg.mlp_widths.size()) h = t.gelu(h);
    }
    return t.max_pool_rows(h); // 1 x d
}

// Plain-value convenience wrapper over the tape forward.
inline std::vector<double> encode_group(const Mat& normalized, const ParamStore& store,
                                        const TokenizerConfig& cfg,
                                        const std::string& prefix = "tokenizer") {
    require(normalized.cols == FeatureVector::kDim, "encode_group: expected 8 feature columns");
    Tape tape;
    TapeParams tp(tape, store);
    const Tape::Id out = encode_group_tape(tp, tape.constant(normalized), cfg, prefix, true);
    return tape.val(out).v;
}

inline void register_tokenizer_params(ParamStore& store, const TokenizerConfig& cfg, Rng& rng,
                                      const std::string& prefix = "tokenizer") {
    int in = FeatureVector::kDim;
    for (size_t layer = 0; layer < cfg.mlp_widths.size(); ++layer) {
        const int out = cfg.mlp_widths[layer];
        const std::string base = prefix + ".mlp." + std::to_string(layer);
        store.add(base + ".weight", Mat::gaussian(out, in, std::sqrt(2.0 / (in + out)), rng), true);
        store.add(base + ".bias", Mat(1, out), false);
        in = out;
    }
}

// Geometry-only tokenization: centers, members, normalized features, group
// four-vectors. Embeddings are filled separately so the training path can
// keep them on its own tape.
inline std::vector<GroupToken> tokenize_geometry(const JetRecord& jet, const TokenizerConfig& cfg) {
    const auto features = derive_features(jet);
    const int n = static_cast<int>(jet.particles.size());
    Mat coords(n, 2);
    std::vector<double> pt(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        coords(i, 0) = jet.particles[static_cast<size_t>(i)].eta;
        coords(i, 1) = jet.particles[static_cast<size_t>(i)].phi;
        pt[static_cast<size_t>(i)] = jet.particles[static_cast<size_t>(i)].pt;
    }

    const int c = token_count(n, cfg);
    const auto centers = farthest_point_sample(coords, c, pt, cfg.start_rule);
    const auto groups = knn_group(coords, centers, cfg.k);

    std::vector<GroupToken> tokens(static_cast<size_t>(c));
    for (int g = 0; g < c; ++g) {
        GroupToken& tok = tokens[static_cast<size_t>(g)];
        tok.center_index = centers[static_cast<size_t>(g)];
        tok.member_indices = groups[static_cast<size_t>(g)];
        tok.center_eta = coords(tok.center_index, 0);
        tok.center_phi = coords(tok.center_index, 1);

        Mat feat(cfg.k, FeatureVector::kDim);
        for (int m = 0; m < cfg.k; ++m) {
            const auto& f = features[static_cast<size_t>(tok.member_indices[static_cast<size_t>(m)])];
            for (int j = 0; j < FeatureVector::kDim; ++j) feat(m, j) = f[j];
        }
        std::vector<double> center_feat(FeatureVector::kDim);
        const auto& cf = features[static_cast<size_t>(tok.center_index)];
        for (int j = 0; j < FeatureVector::kDim; ++j) center_feat[static_cast<size_t>(j)] = cf[j];

        tok.normalized_features = normalize_group(feat, center_feat);
        tok.group_fv = group_four_vector(jet, tok.member_indices);
    }
    return tokens;
}

inline std::vector<GroupToken> tokenize(const JetRecord& jet, const TokenizerConfig& cfg,
                                        const ParamStore& store,
                                        const std::string& prefix = "tokenizer") {
    auto tokens = tokenize_geometry(jet, cfg);
    for (auto& tok : tokens) tok.embedding = encode_group(tok.normalized_features, store, cfg, prefix);
    return tokens;
}

} // namespace jetjepa
