// jetjepa command line: synthetic data generation, latent-prediction
// pre-training, linear probing, supervised fine-tuning, embedding export,
// checkpoint inspection, and csv-to-SVG curve plotting.
//
// Every command is deterministic given the config file and --seed. Errors go
// to stderr with an "error: " prefix and a non-zero exit code.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jetjepa/checkpoint.hpp"
#include "jetjepa/config.hpp"
#include "jetjepa/evalkit.hpp"
#include "jetjepa/jepa.hpp"
#include "jetjepa/svgplot.hpp"

namespace {

using namespace jetjepa;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    int64_t seed = -1; // -1: take the config value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file (key = value with [sections])");
    cmd->add_option("--set", opts.overrides, "override a config key: section.key=value")
        ->take_all();
    cmd->add_option("--seed", opts.seed, "random seed (overrides the config)");
}

RunConfig build_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) load_config_file(cfg, opts.config_path);
    for (const auto& ov : opts.overrides) apply_override(cfg, ov);
    if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
    else if (std::getenv("JETJEPA_CI"))
        fail("--seed is required when JETJEPA_CI is set");
    cfg.validate();
    return cfg;
}

DatasetFormat format_from_path(const std::string& path) {
    return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? DatasetFormat::csv
                                                                      : DatasetFormat::binary;
}

ParamStore checkpoint_params(const std::string& path, const RunConfig& cfg) {
    Checkpoint ck = load_checkpoint(path);
    // reshape into a store with the right decay flags / full parameter set
    ParamStore store;
    init_pretrain_params(store, cfg.tok, cfg.enc, cfg.seed);
    for (auto& [name, e] : store.entries_mut()) {
        if (!ck.params.has(name)) fail(path + ": checkpoint is missing parameter " + name);
        const Mat& src = ck.params.get(name);
        require(src.same_shape(e.value),
                path + ": checkpoint shape mismatch for " + name + " (config mismatch?)");
        e.value = src;
    }
    return store;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path + ": cannot open file for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(path + ": write failed");
}

int cmd_gen_synth(const CommonOpts& common, const std::string& out_path, int jets,
                  const std::string& classes) {
    RunConfig cfg = build_config(common);
    if (jets > 0) cfg.gen.jets = jets;
    if (!classes.empty())
        apply_config_line(cfg, "jetdata", "classes", classes, "--classes");
    cfg.validate();
    const auto dataset = gen_synthetic(cfg.gen.jets, cfg.gen.class_spec(), cfg.seed);
    write_dataset(dataset, out_path, format_from_path(out_path));
    std::cout << "wrote " << dataset.size() << " jets to " << out_path << "\n";
    return 0;
}

int cmd_pretrain(const CommonOpts& common, const std::string& data_path,
                 const std::string& out_dir, const std::string& resume_path) {
    RunConfig cfg = build_config(common);
    const auto dataset = load_dataset(data_path, format_from_path(data_path));
    require(!dataset.empty(), data_path + ": dataset is empty");

    TrainState state = resume_path.empty() ? TrainState::init(cfg)
                                           : resume_train_state(cfg, resume_path);
    const bool append = !resume_path.empty();
    const PretrainResult res = pretrain(state, dataset, out_dir, append);
    std::cout << "pre-training done: step " << state.step << "\n"
              << "checkpoint: " << res.checkpoint_path << "\n"
              << "train state: " << res.state_path << "\n"
              << "loss curve: " << res.loss_csv_path << "\n";
    return 0;
}

int cmd_probe(const CommonOpts& common, const std::string& data_path,
              const std::string& checkpoint_path, const std::string& out_path) {
    RunConfig cfg = build_config(common);
    const auto dataset = load_dataset(data_path, format_from_path(data_path));
    const auto labels = labels_of(dataset);
    ParamStore store = checkpoint_params(checkpoint_path, cfg);

    const Mat emb = compute_pooled_embeddings(dataset, cfg, store);
    auto [train_idx, val_idx] = stratified_split(labels, cfg.eval.val_fraction, cfg.seed);

    Mat train_x(static_cast<int>(train_idx.size()), emb.cols);
    Mat val_x(static_cast<int>(val_idx.size()), emb.cols);
    std::vector<int> train_y(train_idx.size()), val_y(val_idx.size());
    for (size_t i = 0; i < train_idx.size(); ++i) {
        for (int j = 0; j < emb.cols; ++j) train_x(static_cast<int>(i), j) = emb(static_cast<int>(train_idx[i]), j);
        train_y[i] = labels[train_idx[i]];
    }
    for (size_t i = 0; i < val_idx.size(); ++i) {
        for (int j = 0; j < emb.cols; ++j) val_x(static_cast<int>(i), j) = emb(static_cast<int>(val_idx[i]), j);
        val_y[i] = labels[val_idx[i]];
    }

    ProbeReport rep = linear_probe(train_x, train_y, val_x, val_y, cfg.eval.reg_strength, cfg.seed,
                                   cfg.eval.probe_loss == "hinge", cfg.eval.probe_max_iters);
    rep.config_hash = cfg.config_hash_hex();
    write_text(out_path, rep.serialize());
    std::cout << rep.serialize();
    return 0;
}

int cmd_finetune(const CommonOpts& common, const std::string& data_path,
                 const std::string& checkpoint_path, const std::string& regime_str,
                 double label_fraction, bool sweep, const std::string& out_dir) {
    RunConfig cfg = build_config(common);
    const Regime regime = regime_from_string(regime_str);
    const auto dataset = load_dataset(data_path, format_from_path(data_path));

    ParamStore store;
    const ParamStore* pretrained = nullptr;
    if (regime != Regime::scratch) {
        require(!checkpoint_path.empty(), "frozen and fine-tuned regimes need --checkpoint");
        store = checkpoint_params(checkpoint_path, cfg);
        pretrained = &store;
    }

    std::filesystem::create_directories(out_dir);
    std::vector<double> fractions =
        sweep ? cfg.eval.label_fractions : std::vector<double>{label_fraction};

    for (double frac : fractions) {
        FinetuneCurves curves;
        const ProbeReport rep = finetune(cfg, pretrained, dataset, regime, frac, cfg.seed, &curves);

        char frac_buf[32];
        std::snprintf(frac_buf, sizeof(frac_buf), "%g", frac);
        const std::string tag = std::string(to_string(regime)) + "_frac" + frac_buf;
        write_text(out_dir + "/report_" + tag + ".txt", rep.serialize());

        std::string csv = "step,val_loss,val_acc\n";
        char buf[64];
        for (size_t i = 0; i < curves.steps.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g", curves.steps[i], curves.val_loss[i],
                          curves.val_acc[i]);
            csv += buf;
            csv += '\n';
        }
        write_text(out_dir + "/val_" + tag + ".csv", csv);

        std::cout << "[" << tag << "] macro_accuracy = " << rep.macro_accuracy
                  << " steps_to_best_val_loss = " << rep.steps_to_best_val_loss << "\n";
    }
    return 0;
}

int cmd_embed(const CommonOpts& common, const std::string& data_path,
              const std::string& checkpoint_path, const std::string& out_path) {
    RunConfig cfg = build_config(common);
    const auto dataset = load_dataset(data_path, format_from_path(data_path));
    ParamStore store = checkpoint_params(checkpoint_path, cfg);
    export_embeddings(dataset, cfg, store, out_path);
    std::cout << "wrote " << dataset.size() << " embeddings to " << out_path << "\n";
    return 0;
}

int cmd_inspect(const std::string& checkpoint_path) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    size_t total = 0;
    for (const auto& [name, e] : ck.params.entries()) total += e.value.size();
    std::cout << "step: " << ck.step << "\n";
    auto it = ck.meta.find("config_hash");
    std::cout << "config_hash: " << (it != ck.meta.end() ? it->second : "<none>") << "\n";
    std::cout << "parameters: " << total << " scalars in " << ck.params.entries().size()
              << " arrays\n";
    for (const auto& [name, e] : ck.params.entries())
        std::cout << "  " << name << "  [" << e.value.rows << " x " << e.value.cols << "]\n";
    return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& column,
             const std::string& out_path) {
    plot_csvs(csvs, column, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"jet tokenizer + latent-prediction pre-training + evaluation toolkit"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic prong-class jet dataset");
    std::string gen_out = "jets.jjpa";
    int gen_jets = 0;
    std::string gen_classes;
    add_common(gen, common);
    gen->add_option("--out", gen_out, "output path (.csv for text, anything else binary)");
    gen->add_option("--jets", gen_jets, "number of jets (overrides config)");
    gen->add_option("--classes", gen_classes, "comma list of prong counts, e.g. 1,2,3");

    auto* pre = app.add_subcommand("pretrain", "run latent-prediction pre-training");
    std::string pre_data, pre_out = "runs/pretrain", pre_resume;
    add_common(pre, common);
    pre->add_option("--data", pre_data, "dataset path")->required();
    pre->add_option("--out", pre_out, "output directory");
    pre->add_option("--resume", pre_resume, "train-state file to resume from");

    auto* probe = app.add_subcommand("probe", "linear probe on pooled embeddings");
    std::string probe_data, probe_ck, probe_out = "probe_report.txt";
    add_common(probe, common);
    probe->add_option("--data", probe_data, "labeled dataset path")->required();
    probe->add_option("--checkpoint", probe_ck, "checkpoint path")->required();
    probe->add_option("--out", probe_out, "report output path");

    auto* ft = app.add_subcommand("finetune", "train the class-attention head (and optionally the backbone)");
    std::string ft_data, ft_ck, ft_regime = "fine-tuned", ft_out = "runs/finetune";
    double ft_fraction = 1.0;
    bool ft_sweep = false;
    add_common(ft, common);
    ft->add_option("--data", ft_data, "labeled dataset path")->required();
    ft->add_option("--checkpoint", ft_ck, "checkpoint path (omit for --regime scratch)");
    ft->add_option("--regime", ft_regime, "scratch | frozen | fine-tuned");
    ft->add_option("--label-fraction", ft_fraction, "fraction of training labels to keep");
    ft->add_flag("--sweep", ft_sweep, "run every fraction in evalkit.label_fractions");
    ft->add_option("--out", ft_out, "output directory");

    auto* embed = app.add_subcommand("embed", "export pooled embeddings as csv");
    std::string embed_data, embed_ck, embed_out = "embeddings.csv";
    add_common(embed, common);
    embed->add_option("--data", embed_data, "dataset path")->required();
    embed->add_option("--checkpoint", embed_ck, "checkpoint path")->required();
    embed->add_option("--out", embed_out, "output csv path");

    auto* inspect = app.add_subcommand("inspect", "print checkpoint step, config hash, parameters");
    std::string ins_ck;
    inspect->add_option("checkpoint", ins_ck, "checkpoint path")->required();

    auto* plot = app.add_subcommand("plot", "render csv curves that share a step column as SVG");
    std::vector<std::string> plot_csvs_in;
    std::string plot_col, plot_out = "plot.svg";
    plot->add_option("csvs", plot_csvs_in, "input csv files")->required();
    plot->add_option("--column", plot_col, "value column (default: first non-step column)");
    plot->add_option("--out", plot_out, "output SVG path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synth(common, gen_out, gen_jets, gen_classes);
        if (pre->parsed()) return cmd_pretrain(common, pre_data, pre_out, pre_resume);
        if (probe->parsed()) return cmd_probe(common, probe_data, probe_ck, probe_out);
        if (ft->parsed())
            return cmd_finetune(common, ft_data, ft_ck, ft_regime, ft_fraction, ft_sweep, ft_out);
        if (embed->parsed()) return cmd_embed(common, embed_data, embed_ck, embed_out);
        if (inspect->parsed()) return cmd_inspect(ins_ck);
        if (plot->parsed()) return cmd_plot(plot_csvs_in, plot_col, plot_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
