#include <doctest.h>

#include <filesystem>

#include "jetjepa/evalkit.hpp"
#include "oracles.hpp"

using namespace jetjepa;

namespace {

RunConfig tiny_eval_config() {
    RunConfig cfg;
    cfg.seed = 17;
    cfg.threads = 2;
    cfg.tok.d = 8;
    cfg.tok.mlp_widths = {8, 8};
    cfg.tok.k = 4;
    cfg.enc.depth = 1;
    cfg.enc.dim = 8;
    cfg.enc.heads = 2;
    cfg.enc.registers = 2;
    cfg.enc.pred_depth = 1;
    cfg.enc.pred_dim = 4;
    cfg.enc.pred_heads = 2;
    cfg.enc.pos_hidden = 6;
    cfg.enc.bias_hidden = 4;
    cfg.gen.jets = 60;
    cfg.gen.n_min = 16;
    cfg.gen.n_max = 24;
    cfg.eval.finetune_steps = 6;
    cfg.eval.finetune_warmup = 2;
    cfg.eval.finetune_batch = 8;
    cfg.eval.val_every = 2;
    cfg.validate();
    return cfg;
}

} // namespace

TEST_CASE("pool_embeddings: degenerate cases and scalar oracle") {
    Mat same(3, 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) same(i, j) = 0.5 * j;
    const auto pooled = pool_embeddings(same);
    REQUIRE(pooled.size() == 8);
    for (int j = 0; j < 4; ++j) {
        CHECK(pooled[static_cast<size_t>(j)] == 0.5 * j);     // max
        CHECK(pooled[static_cast<size_t>(4 + j)] == 0.5 * j); // mean
    }

    Mat single(1, 4);
    for (int j = 0; j < 4; ++j) single(0, j) = j - 1.5;
    const auto one = pool_embeddings(single);
    for (int j = 0; j < 4; ++j) {
        CHECK(one[static_cast<size_t>(j)] == single(0, j));
        CHECK(one[static_cast<size_t>(4 + j)] == single(0, j));
    }

    Rng rng(7);
    Mat x(4, 3);
    for (auto& v : x.v) v = rng.gaussian(0.0, 1.0);
    CHECK(pool_embeddings(x) == oracle::pool_max_mean(x));
}

TEST_CASE("macro_accuracy: perfect, half, confusion-matrix oracle, relabeling invariance") {
    CHECK(macro_accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
    CHECK(macro_accuracy({0, 0, 1, 1}, {0, 0, 0, 0}) == 0.5); // only class 0 present: 2/4
    CHECK(macro_accuracy({1, 1, 0, 0}, {0, 0, 1, 1}) == 0.0);
    CHECK(macro_accuracy({0, 0, 1, 0}, {0, 0, 1, 1}) == doctest::Approx(0.75)); // mean of 1 and 0.5

    Rng rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<int> pred(40), truth(40);
        for (auto& v : pred) v = static_cast<int>(rng.uniform_index(3));
        for (auto& v : truth) v = static_cast<int>(rng.uniform_index(3));
        CHECK(macro_accuracy(pred, truth) == doctest::Approx(oracle::macro_accuracy(pred, truth)));

        // consistent relabeling leaves the score unchanged
        auto relabel = [](int v) { return (v + 1) % 3; };
        std::vector<int> rp(40), rt(40);
        for (int i = 0; i < 40; ++i) {
            rp[static_cast<size_t>(i)] = relabel(pred[static_cast<size_t>(i)]);
            rt[static_cast<size_t>(i)] = relabel(truth[static_cast<size_t>(i)]);
        }
        CHECK(macro_accuracy(rp, rt) == doctest::Approx(oracle::macro_accuracy(pred, truth)));
    }

    CHECK_THROWS_AS(macro_accuracy({0}, {0, 1}), JetJepaError);
}

TEST_CASE("linear_probe: separable blobs, uninformative features, determinism") {
    Rng rng(13);
    const int n = 200;
    Mat x(n, 2), vx(n, 2);
    std::vector<int> y(static_cast<size_t>(n)), vy(static_cast<size_t>(n));
    // two gaussian blobs with >= 4 sigma margin
    for (int i = 0; i < n; ++i) {
        const int cls = i % 2;
        const double cx = cls == 0 ? -2.0 : 2.0;
        x(i, 0) = cx + rng.gaussian(0.0, 0.5);
        x(i, 1) = rng.gaussian(0.0, 0.5);
        y[static_cast<size_t>(i)] = cls;
        vx(i, 0) = cx + rng.gaussian(0.0, 0.5);
        vx(i, 1) = rng.gaussian(0.0, 0.5);
        vy[static_cast<size_t>(i)] = cls;
    }
    const auto rep = linear_probe(x, y, vx, vy, 1e-3, 5);
    CHECK(rep.macro_accuracy >= 0.99);

    const auto rep_hinge = linear_probe(x, y, vx, vy, 1e-3, 5, true);
    CHECK(rep_hinge.macro_accuracy >= 0.99);

    // identical embeddings for every sample: accuracy collapses to chance
    Mat flat(n, 2, 1.0), vflat(n, 2, 1.0);
    const auto flat_rep = linear_probe(flat, y, vflat, vy, 1e-3, 5);
    CHECK(flat_rep.macro_accuracy == doctest::Approx(0.5).epsilon(0.02));

    // determinism
    const auto rep2 = linear_probe(x, y, vx, vy, 1e-3, 5);
    CHECK(rep.macro_accuracy == rep2.macro_accuracy);
    CHECK(rep.per_class_accuracy == rep2.per_class_accuracy);

    // single-class training set rejected
    std::vector<int> ones(static_cast<size_t>(n), 1);
    CHECK_THROWS_AS(linear_probe(x, ones, vx, vy, 1e-3, 5), JetJepaError);
}

TEST_CASE("stratified helpers: split and fraction keep every class") {
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
    auto [train, val] = stratified_split(labels, 0.2, 7);
    CHECK(train.size() + val.size() == 30);
    std::set<int> val_classes;
    for (size_t i : val) val_classes.insert(labels[i]);
    CHECK(val_classes.size() == 3);

    const auto keep = stratified_fraction(train, labels, 0.10, 3, 7);
    std::map<int, int> counts;
    for (size_t i : keep) ++counts[labels[i]];
    CHECK(counts.size() == 3);
    for (const auto& [cls, n] : counts) CHECK(n >= 1);
}

TEST_CASE("finetune: frozen regime leaves the backbone bit-identical") {
    RunConfig cfg = tiny_eval_config();
    const auto jets = gen_synthetic(cfg.gen.jets, cfg.gen.class_spec(), cfg.seed);

    ParamStore pretrained;
    init_pretrain_params(pretrained, cfg.tok, cfg.enc, cfg.seed);
    const ParamStore backbone_before = pretrained;

    const auto rep = finetune(cfg, &pretrained, jets, Regime::frozen, 1.0, 3);
    CHECK(rep.regime == "frozen");
    for (const auto& [name, e] : backbone_before.entries())
        CHECK(pretrained.get(name).v == e.value.v);
}

TEST_CASE("finetune: deterministic given the same seed") {
    RunConfig cfg = tiny_eval_config();
    const auto jets = gen_synthetic(cfg.gen.jets, cfg.gen.class_spec(), cfg.seed);

    FinetuneCurves c1, c2;
    const auto r1 = finetune(cfg, nullptr, jets, Regime::scratch, 1.0, 5, &c1);
    const auto r2 = finetune(cfg, nullptr, jets, Regime::scratch, 1.0, 5, &c2);
    CHECK(r1.macro_accuracy == r2.macro_accuracy);
    CHECK(r1.steps_to_best_val_loss == r2.steps_to_best_val_loss);
    CHECK(c1.val_loss == c2.val_loss);
    CHECK(c1.val_acc == c2.val_acc);
}

TEST_CASE("class dropout after subsampling is an error naming the class") {
    std::vector<int> labels = {0, 0, 1, 1, 0, 1}; // class 2 never present
    std::vector<size_t> pool = {0, 1, 2, 3, 4, 5};
    CHECK_THROWS_WITH_AS(stratified_fraction(pool, labels, 0.5, 3, 7),
                         doctest::Contains("class 2"), JetJepaError);

    // a class with a single jet cannot satisfy a stratified split either
    std::vector<int> lone = {0, 0, 0, 0, 1, 1, 1, 1, 2};
    CHECK_THROWS_WITH_AS(stratified_split(lone, 0.25, 7), doctest::Contains("class 2"),
                         JetJepaError);
}

TEST_CASE("export_embeddings: row count, determinism, duplicate jets") {
    RunConfig cfg = tiny_eval_config();
    auto jets = gen_synthetic(6, cfg.gen.class_spec(), cfg.seed);
    jets.push_back(jets[0]); // duplicate

    ParamStore store;
    init_pretrain_params(store, cfg.tok, cfg.enc, cfg.seed);

    const auto tmp = std::filesystem::temp_directory_path();
    const std::string p1 = (tmp / "jj_emb1.csv").string();
    const std::string p2 = (tmp / "jj_emb2.csv").string();
    export_embeddings(jets, cfg, store, p1);
    export_embeddings(jets, cfg, store, p2);

    std::ifstream f1(p1), f2(p2);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str()); // byte-identical re-export

    std::vector<std::string> lines;
    std::string line;
    std::stringstream again(s1.str());
    while (std::getline(again, line)) lines.push_back(line);
    REQUIRE(lines.size() == jets.size() + 1); // header + rows

    // duplicated jet produces an identical embedding row (modulo the id column)
    const auto strip_id = [](const std::string& row) { return row.substr(row.find(',')); };
    CHECK(strip_id(lines[1]) == strip_id(lines.back()));

    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
