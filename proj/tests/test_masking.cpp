#include <doctest.h>

#include <set>

#include "jetjepa/masking.hpp"
#include "oracles.hpp"

using namespace jetjepa;

namespace {

Mat random_coords(Rng& rng, int n) {
    Mat m(n, 2);
    for (int i = 0; i < n; ++i) {
        m(i, 0) = rng.uniform(-1.0, 1.0);
        m(i, 1) = rng.uniform(-1.0, 1.0);
    }
    return m;
}

std::set<int> as_set(const std::vector<std::vector<int>>& blocks) {
    std::set<int> s;
    for (const auto& b : blocks) s.insert(b.begin(), b.end());
    return s;
}

} // namespace

TEST_CASE("sequence_tokens: nearest chain on a line, singleton") {
    Mat coords(3, 2);
    coords(0, 0) = 0.0;
    coords(1, 0) = 2.0;
    coords(2, 0) = 1.0;
    CHECK(sequence_tokens(coords) == std::vector<int>{0, 2, 1});

    Mat one(1, 2);
    CHECK(sequence_tokens(one) == std::vector<int>{0});
}

TEST_CASE("sequence_tokens: matches the greedy chain oracle, is a bijection") {
    for (uint64_t seed = 1; seed <= 25; ++seed) {
        Rng rng(seed);
        Mat coords = random_coords(rng, 20);
        const auto order = sequence_tokens(coords);
        CHECK(order == oracle::sequence_chain(coords));
        std::set<int> seen(order.begin(), order.end());
        CHECK(seen.size() == 20);
    }
}

TEST_CASE("sample_target_blocks: forced lengths and the full mask") {
    MaskConfig cfg;
    cfg.strategy = MaskStrategy::contiguous;
    std::vector<int> order(10);
    for (int i = 0; i < 10; ++i) order[static_cast<size_t>(i)] = i;

    cfg.target_scale_lo = cfg.target_scale_hi = 0.5;
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const auto blocks = sample_target_blocks(10, order, cfg, rng);
        REQUIRE(blocks.size() == 1);
        CHECK(blocks[0].size() == 5);
        for (size_t i = 1; i < blocks[0].size(); ++i)
            CHECK(blocks[0][i] == blocks[0][i - 1] + 1); // consecutive in sequencer order
    }

    cfg.target_scale_lo = cfg.target_scale_hi = 1.0;
    const auto full = sample_target_blocks(10, order, cfg, rng);
    CHECK(full[0].size() == 10);
}

TEST_CASE("sample_target_blocks: Monte-Carlo block lengths at c=20, scale [0.15,0.2]") {
    MaskConfig cfg;
    std::vector<int> order(20);
    for (int i = 0; i < 20; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(9);
    std::set<size_t> lengths;
    for (int rep = 0; rep < 10000; ++rep) {
        const auto blocks = sample_target_blocks(20, order, cfg, rng);
        lengths.insert(blocks[0].size());
    }
    CHECK(lengths == std::set<size_t>{3, 4});
}

TEST_CASE("sample_context: set difference and complement") {
    MaskConfig cfg;
    std::vector<int> order(10);
    for (int i = 0; i < 10; ++i) order[static_cast<size_t>(i)] = i;

    // candidate = everything (scale 1), targets {2,3} -> complement
    cfg.context_scale_lo = cfg.context_scale_hi = 1.0;
    Rng rng(11);
    const auto ctx = sample_context(10, order, {{2, 3}}, cfg, rng);
    CHECK(ctx == std::vector<int>{0, 1, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("sample_context: infeasible config fails loudly") {
    MaskConfig cfg;
    cfg.context_scale_lo = cfg.context_scale_hi = 1.0;
    std::vector<int> order = {0, 1};
    Rng rng(13);
    CHECK_THROWS_WITH_AS(sample_context(2, order, {{0, 1}}, cfg, rng),
                         doctest::Contains("context empty"), JetJepaError);
}

TEST_CASE("sample_masks: determinism and the minimal two-token jet") {
    MaskConfig cfg;
    cfg.target_scale_lo = cfg.target_scale_hi = 0.5;
    cfg.context_scale_lo = cfg.context_scale_hi = 0.5;

    Rng rng_a(21), rng_b(21);
    Mat coords(2, 2);
    coords(1, 0) = 1.0;
    const auto a = sample_masks(coords, cfg, rng_a);
    const auto b = sample_masks(coords, cfg, rng_b);
    CHECK(a.target_blocks == b.target_blocks);
    CHECK(a.context_indices == b.context_indices);
    CHECK(a.seed_state == b.seed_state);

    REQUIRE(a.target_blocks.size() == 1);
    CHECK(a.target_blocks[0].size() == 1);
    CHECK(a.context_indices.size() == 1);
    CHECK(a.target_blocks[0][0] != a.context_indices[0]);
}

TEST_CASE("mask invariants: disjointness, contiguity, scale soundness over 10k draws") {
    for (int variant = 0; variant < 3; ++variant) {
        MaskConfig cfg;
        cfg.strategy = variant == 0   ? MaskStrategy::contiguous
                       : variant == 1 ? MaskStrategy::random
                                      : MaskStrategy::rectangle;
        cfg.num_targets = variant == 1 ? 4 : 1;
        Rng rng(100 + static_cast<uint64_t>(variant));
        const int draws = variant == 0 ? 10000 : 2000;
        // multi-target random and rectangle draws can legitimately exhaust a
        // tiny jet; sweep them on jets large enough to stay feasible
        const int c_floor = variant == 0 ? 2 : 6;
        for (int rep = 0; rep < draws; ++rep) {
            Rng crng(static_cast<uint64_t>(rep + 1));
            const int c = c_floor + static_cast<int>(crng.uniform_index(static_cast<uint64_t>(20 - c_floor)));
            Mat coords = random_coords(crng, c);
            const auto spec = sample_masks(coords, cfg, rng);

            const auto targets = as_set(spec.target_blocks);
            REQUIRE(!targets.empty());
            REQUIRE(!spec.context_indices.empty());
            for (int idx : spec.context_indices) CHECK(targets.find(idx) == targets.end());
            for (int idx : targets) {
                CHECK(idx >= 0);
                CHECK(idx < c);
            }

            if (cfg.strategy == MaskStrategy::contiguous) {
                const auto order = sequence_tokens(coords);
                std::vector<int> pos_of(static_cast<size_t>(c));
                for (int i = 0; i < c; ++i) pos_of[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
                for (const auto& block : spec.target_blocks) {
                    for (size_t i = 1; i < block.size(); ++i)
                        CHECK(pos_of[static_cast<size_t>(block[i])] ==
                              pos_of[static_cast<size_t>(block[i - 1])] + 1);
                    // scale soundness with one token of rounding slack
                    const double frac = static_cast<double>(block.size()) / c;
                    CHECK(frac >= cfg.target_scale_lo - 1.0 / c - 1e-12);
                    CHECK(frac <= cfg.target_scale_hi + 1.0 / c + 1e-12);
                }
            }
        }
    }
}
