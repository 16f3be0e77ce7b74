#include <doctest.h>

#include <set>

#include "jetjepa/tokenizer.hpp"
#include "oracles.hpp"

using namespace jetjepa;

namespace {

TokenizerConfig small_cfg() {
    TokenizerConfig cfg;
    cfg.d = 4;
    cfg.mlp_widths = {6, 4};
    cfg.k = 5;
    return cfg;
}

Mat random_coords(Rng& rng, int n, double spread = 1.0) {
    Mat m(n, 2);
    for (int i = 0; i < n; ++i) {
        m(i, 0) = rng.uniform(-spread, spread);
        m(i, 1) = rng.uniform(-spread, spread);
    }
    return m;
}

} // namespace

TEST_CASE("token_count: formula and clamps") {
    TokenizerConfig cfg;
    cfg.center_ratio = 0.25;
    cfg.min_centers = 4;
    CHECK(token_count(100, cfg) == 25);
    CHECK(token_count(3, cfg) == 3);
    CHECK(token_count(16, cfg) == 4);
}

TEST_CASE("farthest_point_sample: collinear points and exhaustion") {
    Mat coords(4, 2);
    for (int i = 0; i < 4; ++i) {
        coords(i, 0) = i;
        coords(i, 1) = 0.0;
    }
    std::vector<double> pt = {9.0, 1.0, 1.0, 1.0}; // start at index 0 by pt
    const auto two = farthest_point_sample(coords, 2, pt);
    CHECK(two == std::vector<int>{0, 3});

    const auto all = farthest_point_sample(coords, 4, pt);
    std::set<int> seen(all.begin(), all.end());
    CHECK(seen.size() == 4);
}

TEST_CASE("farthest_point_sample: matches brute-force greedy on random instances") {
    for (uint64_t seed = 1; seed <= 25; ++seed) {
        Rng rng(seed);
        const int n = 30;
        Mat coords = random_coords(rng, n);
        std::vector<double> pt(static_cast<size_t>(n));
        for (auto& v : pt) v = rng.uniform(1.0, 10.0);
        int first = 0;
        for (int i = 1; i < n; ++i)
            if (pt[static_cast<size_t>(i)] > pt[static_cast<size_t>(first)]) first = i;
        CHECK(farthest_point_sample(coords, 6, pt) == oracle::fps(coords, 6, first));
    }
}

TEST_CASE("knn_group: self for k=1, padding when n < k, matches oracle") {
    Rng rng(3);
    Mat coords = random_coords(rng, 5);
    const std::vector<int> centers = {0, 2, 4};

    const auto single = knn_group(coords, centers, 1);
    for (size_t g = 0; g < centers.size(); ++g)
        CHECK(single[g] == std::vector<int>{centers[g]});

    const auto padded = knn_group(coords, {1}, 8);
    REQUIRE(padded[0].size() == 8);
    int repeats = 0;
    for (int idx : padded[0])
        if (idx == 1) ++repeats;
    CHECK(repeats == 4); // 5 distinct + 3 pads of the center, itself already present

    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng r2(seed + 100);
        Mat c30 = random_coords(r2, 30);
        const auto groups = knn_group(c30, {0, 7, 13}, 5);
        CHECK(groups[0] == oracle::knn(c30, 0, 5));
        CHECK(groups[1] == oracle::knn(c30, 7, 5));
        CHECK(groups[2] == oracle::knn(c30, 13, 5));
    }
}

TEST_CASE("normalize_group: center row zero, elementwise subtraction") {
    Rng rng(9);
    Mat features(4, 8);
    for (auto& v : features.v) v = rng.uniform(-2.0, 2.0);
    std::vector<double> center(8);
    for (int j = 0; j < 8; ++j) center[static_cast<size_t>(j)] = features(2, j);

    const Mat out = normalize_group(features, center);
    for (int j = 0; j < 8; ++j) CHECK(out(2, j) == 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(out(i, j) == features(i, j) - center[static_cast<size_t>(j)]);

    Mat same(3, 8, 1.5);
    const Mat zeros = normalize_group(same, std::vector<double>(8, 1.5));
    for (double v : zeros.v) CHECK(v == 0.0);
}

TEST_CASE("encode_group: idempotent max, permutation invariance, scalar oracle") {
    const TokenizerConfig cfg = small_cfg();
    ParamStore store;
    Rng init(5);
    register_tokenizer_params(store, cfg, init);

    Rng rng(6);
    Mat rows(3, 8);
    for (auto& v : rows.v) v = rng.uniform(-1.0, 1.0);

    // identical rows: pooled output equals the MLP of that row
    Mat rep(3, 8);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) rep(i, j) = rows(0, j);
    const auto pooled = encode_group(rep, store, cfg);
    std::vector<Mat> ws, bs;
    for (size_t l = 0; l < cfg.mlp_widths.size(); ++l) {
        ws.push_back(store.get("tokenizer.mlp." + std::to_string(l) + ".weight"));
        bs.push_back(store.get("tokenizer.mlp." + std::to_string(l) + ".bias"));
    }
    std::vector<double> row0(8);
    for (int j = 0; j < 8; ++j) row0[static_cast<size_t>(j)] = rows(0, j);
    const auto direct = oracle::mlp_forward(row0, ws, bs);
    for (int j = 0; j < cfg.d; ++j)
        CHECK(pooled[static_cast<size_t>(j)] == doctest::Approx(direct[static_cast<size_t>(j)]).epsilon(1e-12));

    // permutation invariance (exact)
    Mat perm(3, 8);
    const int order[3] = {2, 0, 1};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) perm(i, j) = rows(order[i], j);
    CHECK(encode_group(rows, store, cfg) == encode_group(perm, store, cfg));

    // scalar-loop oracle: elementwise max of per-row MLP outputs
    const auto enc = encode_group(rows, store, cfg);
    std::vector<std::vector<double>> outs;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> r(8);
        for (int j = 0; j < 8; ++j) r[static_cast<size_t>(j)] = rows(i, j);
        outs.push_back(oracle::mlp_forward(r, ws, bs));
    }
    for (int j = 0; j < cfg.d; ++j) {
        double mx = outs[0][static_cast<size_t>(j)];
        for (int i = 1; i < 3; ++i) mx = std::max(mx, outs[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        CHECK(enc[static_cast<size_t>(j)] == doctest::Approx(mx).epsilon(1e-9));
    }
}

TEST_CASE("group_four_vector: single member, collinear massless pair, scalar oracle") {
    Rng rng(12);
    const auto ps = oracle::random_particles(rng, 8);
    const JetRecord jet = make_jet(ps);

    const auto single = group_four_vector(jet, {3});
    CHECK(single.e == doctest::Approx(ps[3].energy));
    CHECK(single.pt() == doctest::Approx(ps[3].pt));

    RawParticle a{10.0, 0.5, 0.3, 10.0 * std::cosh(0.5), 0.0};
    RawParticle b{20.0, 0.5, 0.3, 20.0 * std::cosh(0.5), 0.0};
    const JetRecord coll = make_jet({a, b});
    const auto pair = group_four_vector(coll, {0, 1});
    CHECK(std::fabs(pair.mass2()) < 1e-6);

    const auto group = group_four_vector(jet, {0, 2, 5, 7});
    oracle::FourSum o = oracle::four_vector_sum({ps[0], ps[2], ps[5], ps[7]});
    CHECK(group.e == doctest::Approx(o.e).epsilon(1e-12));
    CHECK(group.px == doctest::Approx(o.px).epsilon(1e-12));

    // padded duplicates count once
    const auto padded = group_four_vector(jet, {4, 4, 4, 1});
    oracle::FourSum o2 = oracle::four_vector_sum({ps[4], ps[1]});
    CHECK(padded.e == doctest::Approx(o2.e).epsilon(1e-12));
}

TEST_CASE("tokenize: degenerate single-particle jet") {
    TokenizerConfig cfg = small_cfg();
    ParamStore store;
    Rng init(7);
    register_tokenizer_params(store, cfg, init);

    RawParticle p{50.0, 0.1, -0.2, 50.0 * std::cosh(0.1), 0.0};
    const auto tokens = tokenize(make_jet({p}), cfg, store);
    REQUIRE(tokens.size() == 1);
    for (double v : tokens[0].normalized_features.v) CHECK(v == 0.0);
    const auto zero_enc = encode_group(Mat(cfg.k, 8), store, cfg);
    CHECK(tokens[0].embedding == zero_enc);
}

TEST_CASE("tokenize: permutation of particles yields the same token multiset") {
    TokenizerConfig cfg = small_cfg();
    ParamStore store;
    Rng init(8);
    register_tokenizer_params(store, cfg, init);

    Rng rng(21);
    const JetRecord jet = make_jet(oracle::random_particles(rng, 12));
    const auto t1 = tokenize(jet, cfg, store);

    // same jet, particle order reversed (stored summary kept: order is meaningless)
    JetRecord shuffled = jet;
    std::reverse(shuffled.particles.begin(), shuffled.particles.end());
    const auto t2 = tokenize(shuffled, cfg, store);

    REQUIRE(t1.size() == t2.size());
    auto key = [](const GroupToken& t) { return std::make_pair(t.center_eta, t.center_phi); };
    for (const auto& tok : t1) {
        bool found = false;
        for (const auto& other : t2) {
            if (key(tok) == key(other)) {
                found = true;
                CHECK(tok.embedding == other.embedding);
                CHECK(tok.group_fv.e == doctest::Approx(other.group_fv.e).epsilon(1e-12));
            }
        }
        CHECK(found);
    }
}

TEST_CASE("tokenize: composed pipeline matches composed oracles on a real jet") {
    TokenizerConfig cfg;
    cfg.d = 4;
    cfg.mlp_widths = {6, 4};
    ParamStore store;
    Rng init(10);
    register_tokenizer_params(store, cfg, init);

    Rng rng(31);
    const auto jet = make_jet(oracle::random_particles(rng, 40));
    const auto tokens = tokenize(jet, cfg, store);

    const int n = 40;
    Mat coords(n, 2);
    std::vector<double> pt(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        coords(i, 0) = jet.particles[static_cast<size_t>(i)].eta;
        coords(i, 1) = jet.particles[static_cast<size_t>(i)].phi;
        pt[static_cast<size_t>(i)] = jet.particles[static_cast<size_t>(i)].pt;
    }
    const int c = token_count(n, cfg);
    REQUIRE(static_cast<int>(tokens.size()) == c);
    int first = 0;
    for (int i = 1; i < n; ++i)
        if (pt[static_cast<size_t>(i)] > pt[static_cast<size_t>(first)]) first = i;
    const auto centers = oracle::fps(coords, c, first);
    for (int g = 0; g < c; ++g) {
        CHECK(tokens[static_cast<size_t>(g)].center_index == centers[static_cast<size_t>(g)]);
        CHECK(tokens[static_cast<size_t>(g)].member_indices ==
              oracle::knn(coords, centers[static_cast<size_t>(g)], cfg.k));
    }
}

TEST_CASE("fps invariants: c = n is a permutation") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed + 77);
        const int n = 2 + static_cast<int>(rng.uniform_index(20));
        Mat coords = random_coords(rng, n);
        std::vector<double> pt(static_cast<size_t>(n), 1.0);
        for (auto& v : pt) v = rng.uniform(1.0, 5.0);
        auto sel = farthest_point_sample(coords, n, pt);
        std::sort(sel.begin(), sel.end());
        for (int i = 0; i < n; ++i) CHECK(sel[static_cast<size_t>(i)] == i);
    }
}
