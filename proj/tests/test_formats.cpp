#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "jetjepa/checkpoint.hpp"
#include "jetjepa/config.hpp"
#include "jetjepa/svgplot.hpp"

using namespace jetjepa;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config: canonical form round trips and hashes distinguish settings") {
    RunConfig cfg;
    const std::string canon = cfg.canonical();
    const std::string path = temp_path("jj_cfg.cfg");
    {
        std::ofstream out(path);
        out << canon;
    }
    RunConfig loaded;
    loaded.seed = 12345; // will be overwritten by the file
    load_config_file(loaded, path);
    CHECK(loaded.canonical() == canon);
    CHECK(loaded.config_hash() == cfg.config_hash());

    RunConfig other = cfg;
    other.enc.use_physics_bias = false;
    CHECK(other.config_hash() != cfg.config_hash());
    RunConfig more = cfg;
    more.masks.num_targets = 4;
    CHECK(more.config_hash() != cfg.config_hash());

    std::filesystem::remove(path);
}

TEST_CASE("config: unknown keys and malformed lines are rejected") {
    const std::string path = temp_path("jj_badcfg.cfg");
    {
        std::ofstream out(path);
        out << "[masking]\nnum_targets = 2\nbogus_key = 1\n";
    }
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(load_config_file(cfg, path), doctest::Contains("unknown config key"),
                         JetJepaError);
    {
        std::ofstream out(path);
        out << "[nosuchsection]\nx = 1\n";
    }
    CHECK_THROWS_WITH_AS(load_config_file(cfg, path), doctest::Contains("unknown config section"),
                         JetJepaError);
    {
        std::ofstream out(path);
        out << "[masking]\nstrategy = diagonal\n";
    }
    CHECK_THROWS_AS(load_config_file(cfg, path), JetJepaError);
    std::filesystem::remove(path);
}

TEST_CASE("config: --set overrides apply") {
    RunConfig cfg;
    apply_override(cfg, "masking.strategy=random");
    CHECK(cfg.masks.strategy == MaskStrategy::random);
    apply_override(cfg, "jepa.steps=77");
    CHECK(cfg.train.steps == 77);
    apply_override(cfg, "masking.target_scale=0.4,0.75");
    CHECK(cfg.masks.target_scale_lo == 0.4);
    CHECK(cfg.masks.target_scale_hi == 0.75);
    CHECK_THROWS_AS(apply_override(cfg, "nonsense"), JetJepaError);
}

TEST_CASE("checkpoint: weights round trip as f32, train state as f64") {
    ParamStore store;
    Rng rng(3);
    store.add("a.weight", Mat::gaussian(3, 4, 1.0, rng), true);
    store.add("b.bias", Mat::gaussian(1, 5, 1.0, rng), false);

    const std::string ck_path = temp_path("jj_test.jjck");
    MetaMap meta{{"config_hash", "deadbeef"}};
    save_checkpoint(ck_path, store, 42, meta);
    const Checkpoint ck = load_checkpoint(ck_path);
    CHECK(ck.step == 42);
    CHECK(ck.meta.at("config_hash") == "deadbeef");
    for (const auto& [name, e] : store.entries()) {
        const Mat& m = ck.params.get(name);
        REQUIRE(m.same_shape(e.value));
        for (size_t i = 0; i < m.v.size(); ++i)
            CHECK(m.v[i] == static_cast<double>(static_cast<float>(e.value.v[i])));
    }

    AdamOptimizer opt;
    GradMap grads;
    grads["a.weight"] = Mat(3, 4, 0.5);
    opt.step(store, grads, 1e-3);

    const std::string st_path = temp_path("jj_test.jjst");
    save_train_state(st_path, store, opt, 7, meta);
    const TrainStateFile ts = load_train_state(st_path);
    CHECK(ts.step == 7);
    CHECK(ts.adam_t == 1);
    for (const auto& [name, e] : store.entries())
        CHECK(ts.params.get(name).v == e.value.v); // f64: bit-exact
    CHECK(ts.adam_m1.at("a.weight").v == opt.m1().at("a.weight").v);

    std::filesystem::remove(ck_path);
    std::filesystem::remove(st_path);
}

TEST_CASE("checkpoint: corrupt files report an offset") {
    const std::string path = temp_path("jj_corrupt.jjck");
    {
        std::ofstream out(path, std::ios::binary);
        out << "JJCP1xxx"; // magic ok, then garbage
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("offset"), JetJepaError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE!";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), JetJepaError);
    std::filesystem::remove(path);
}

TEST_CASE("svg plot: single series, byte-identical re-render, column errors") {
    const std::string csv1 = temp_path("jj_curve1.csv");
    const std::string csv2 = temp_path("jj_curve2.csv");
    {
        std::ofstream out(csv1);
        out << "step,loss,lr\n0,1.0,0.1\n1,0.5,0.1\n2,0.25,0.1\n";
    }
    {
        std::ofstream out(csv2);
        out << "step,loss\n0,0.9\n1,0.6\n2,0.35\n";
    }

    const std::string svg1 = temp_path("jj_plot1.svg");
    const std::string svg2 = temp_path("jj_plot2.svg");
    plot_csvs({csv1}, "loss", svg1);
    const std::string first = slurp_file(svg1);
    CHECK(first.find("<polyline") != std::string::npos);
    CHECK(first.find("jj_curve1.csv") != std::string::npos);
    // exactly one polyline
    CHECK(first.find("<polyline", first.find("<polyline") + 1) == std::string::npos);

    plot_csvs({csv1}, "loss", svg2);
    CHECK(first == slurp_file(svg2)); // identical input, identical bytes

    // two-series overlay renders both with distinct legend entries
    plot_csvs({csv1, csv2}, "loss", svg1);
    const std::string overlay = slurp_file(svg1);
    CHECK(overlay.find("jj_curve1.csv") != std::string::npos);
    CHECK(overlay.find("jj_curve2.csv") != std::string::npos);

    CHECK_THROWS_AS(plot_csvs({csv1}, "nonexistent", svg1), JetJepaError);
    {
        std::ofstream out(csv2);
        out << "time,loss\n0,0.9\n";
    }
    CHECK_THROWS_WITH_AS(plot_csvs({csv2}, "loss", svg1), doctest::Contains("no 'step' column"),
                         JetJepaError);

    for (const auto& p : {csv1, csv2, svg1, svg2}) std::filesystem::remove(p);
}
