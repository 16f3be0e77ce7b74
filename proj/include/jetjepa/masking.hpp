// Target/context mask construction over token sequences: the greedy spatial
// sequencer, block sampling under random / contiguous / rectangle strategies,
// and the overlap-removal rule that keeps context and targets disjoint.
#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "jetjepa/common.hpp"
#include "jetjepa/mat.hpp"
#include "jetjepa/rng.hpp"

namespace jetjepa {

enum class MaskStrategy { random, contiguous, rectangle };

inline const char* to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random: return "random";
        case MaskStrategy::contiguous: return "contiguous";
        default: return "rectangle";
    }
}

inline MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "random") return MaskStrategy::random;
    if (s == "contiguous") return MaskStrategy::contiguous;
    if (s == "rectangle") return MaskStrategy::rectangle;
    fail("unknown masking strategy '" + s + "' (expected random|contiguous|rectangle)");
}

struct MaskConfig {
    int num_targets = 1;
    double target_scale_lo = 0.15, target_scale_hi = 0.2;
    double target_aspect_lo = 0.75, target_aspect_hi = 1.5; // rectangle strategy only
    double context_scale_lo = 0.85, context_scale_hi = 1.0;
    MaskStrategy strategy = MaskStrategy::contiguous;

    void validate() const {
        require(num_targets >= 1, "masking: num_targets must be >= 1");
        auto interval = [](double lo, double hi, const char* what) {
            require(lo > 0.0 && hi <= 1.0 && lo <= hi,
                    std::string("masking: ") + what + " interval must be within (0, 1]");
        };
        interval(target_scale_lo, target_scale_hi, "target_scale");
        interval(context_scale_lo, context_scale_hi, "context_scale");
        require(target_aspect_lo > 0.0 && target_aspect_lo <= target_aspect_hi,
                "masking: invalid target_aspect interval");
    }
};

struct MaskSpec {
    std::vector<std::vector<int>> target_blocks; // may overlap each other
    std::vector<int> context_indices;            // disjoint from all targets
    MaskStrategy strategy = MaskStrategy::contiguous;
    RngState seed_state;                          // generator state before sampling
};

// Greedy nearest-neighbour chain: start at the token with the smallest
// eta + phi coordinate sum, then repeatedly hop to the nearest unvisited
// token. Ties go to the lowest index.
inline std::vector<int> sequence_tokens(const Mat& center_coords) {
    const int c = center_coords.rows;
    require(c >= 1, "sequence_tokens: need at least one token");

    int start = 0;
    double best = center_coords(0, 0) + center_coords(0, 1);
    for (int i = 1; i < c; ++i) {
        const double s = center_coords(i, 0) + center_coords(i, 1);
        if (s < best) {
            best = s;
            start = i;
        }
    }

    std::vector<int> order{start};
    std::vector<bool> used(static_cast<size_t>(c), false);
    used[static_cast<size_t>(start)] = true;
    int cur = start;
    while (static_cast<int>(order.size()) < c) {
        int next = -1;
        double nd = 0.0;
        for (int i = 0; i < c; ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            const double d = delta_r(center_coords(i, 0), center_coords(i, 1),
                                     center_coords(cur, 0), center_coords(cur, 1));
            if (next < 0 || d < nd) {
                next = i;
                nd = d;
            }
        }
        order.push_back(next);
        used[static_cast<size_t>(next)] = true;
        cur = next;
    }
    return order;
}

namespace detail {

inline int block_length(double s, int c) {
    return std::max(1, static_cast<int>(std::lround(s * c)));
}

inline std::vector<int> contiguous_run(const std::vector<int>& order, int len, Rng& rng) {
    const int c = static_cast<int>(order.size());
    len = std::min(len, c);
    const int start = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(c - len + 1)));
    return std::vector<int>(order.begin() + start, order.begin() + start + len);
}

inline std::vector<int> random_subset(int c, int len, Rng& rng) {
    len = std::min(len, c);
    std::vector<int> all(static_cast<size_t>(c));
    for (int i = 0; i < c; ++i) all[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates, then ascending for a canonical representation
    for (int i = 0; i < len; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(c - i)));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    std::vector<int> out(all.begin(), all.begin() + len);
    std::sort(out.begin(), out.end());
    return out;
}

// Tokens whose centers fall inside an (eta, phi) box of area fraction `s`
// and aspect `r`, centered on a randomly chosen token. The anchor token is
// always inside, so the block is never empty.
inline std::vector<int> rectangle_block(const Mat& coords, double s, double r, Rng& rng) {
    const int c = coords.rows;
    double eta_lo = coords(0, 0), eta_hi = coords(0, 0);
    double phi_lo = coords(0, 1), phi_hi = coords(0, 1);
    for (int i = 1; i < c; ++i) {
        eta_lo = std::min(eta_lo, coords(i, 0));
        eta_hi = std::max(eta_hi, coords(i, 0));
        phi_lo = std::min(phi_lo, coords(i, 1));
        phi_hi = std::max(phi_hi, coords(i, 1));
    }
    const double area = std::max((eta_hi - eta_lo) * (phi_hi - phi_lo), 1e-12);
    const double half_eta = 0.5 * std::sqrt(s * area * r);
    const double half_phi = 0.5 * std::sqrt(s * area / r);
    const int anchor = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(c)));
    std::vector<int> out;
    for (int i = 0; i < c; ++i) {
        if (std::fabs(coords(i, 0) - coords(anchor, 0)) <= half_eta &&
            std::fabs(delta_phi(coords(i, 1), coords(anchor, 1))) <= half_phi)
            out.push_back(i);
    }
    return out;
}

} // namespace detail

inline std::vector<std::vector<int>> sample_target_blocks(int c, const std::vector<int>& order,
                                                          const MaskConfig& cfg, Rng& rng,
                                                          const Mat* coords = nullptr) {
    require(c >= 2, "sample_target_blocks: need at least two tokens");
    std::vector<std::vector<int>> blocks;
    blocks.reserve(static_cast<size_t>(cfg.num_targets));
    for (int m = 0; m < cfg.num_targets; ++m) {
        const double s = rng.uniform(cfg.target_scale_lo, cfg.target_scale_hi);
        switch (cfg.strategy) {
            case MaskStrategy::contiguous:
                blocks.push_back(detail::contiguous_run(order, detail::block_length(s, c), rng));
                break;
            case MaskStrategy::random:
                blocks.push_back(detail::random_subset(c, detail::block_length(s, c), rng));
                break;
            case MaskStrategy::rectangle: {
                require(coords != nullptr, "rectangle strategy needs token coordinates");
                const double r = rng.uniform(cfg.target_aspect_lo, cfg.target_aspect_hi);
                blocks.push_back(detail::rectangle_block(*coords, s, r, rng));
                break;
            }
        }
    }
    return blocks;
}

inline std::vector<int> sample_context(int c, const std::vector<int>& order,
                                       const std::vector<std::vector<int>>& target_blocks,
                                       const MaskConfig& cfg, Rng& rng,
                                       const Mat* coords = nullptr) {
    require(c >= 2, "sample_context: need at least two tokens");
    std::set<int> blocked;
    for (const auto& b : target_blocks) blocked.insert(b.begin(), b.end());

    for (int attempt = 0; attempt < 16; ++attempt) {
        const double s = rng.uniform(cfg.context_scale_lo, cfg.context_scale_hi);
        std::vector<int> candidate;
        switch (cfg.strategy) {
            case MaskStrategy::contiguous:
                candidate = detail::contiguous_run(order, detail::block_length(s, c), rng);
                break;
            case MaskStrategy::random:
                candidate = detail::random_subset(c, detail::block_length(s, c), rng);
                break;
            case MaskStrategy::rectangle: {
                require(coords != nullptr, "rectangle strategy needs token coordinates");
                candidate = detail::rectangle_block(*coords, s, 1.0, rng);
                break;
            }
        }
        std::vector<int> context;
        for (int idx : candidate)
            if (blocked.find(idx) == blocked.end()) context.push_back(idx);
        if (!context.empty()) return context;
    }
    fail("context empty after overlap removal (16 attempts); target scale covers the whole jet?");
}

inline MaskSpec sample_masks(const Mat& center_coords, const MaskConfig& cfg, Rng& rng) {
    const int c = center_coords.rows;
    require(c >= 2, "sample_masks: need at least two tokens");

    MaskSpec spec;
    spec.strategy = cfg.strategy;
    spec.seed_state = rng.state();

    std::vector<int> order;
    if (cfg.strategy == MaskStrategy::contiguous) {
        order = sequence_tokens(center_coords);
    } else {
        order.resize(static_cast<size_t>(c));
        for (int i = 0; i < c; ++i) order[static_cast<size_t>(i)] = i;
    }

    spec.target_blocks = sample_target_blocks(c, order, cfg, rng, &center_coords);
    spec.context_indices = sample_context(c, order, spec.target_blocks, cfg, rng, &center_coords);
    return spec;
}

} // namespace jetjepa
