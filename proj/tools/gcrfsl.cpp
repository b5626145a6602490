// Experiment runner: pretrain | train | eval | ablate | extend.

#include "gcr/checkpoint.hpp"
#include "gcr/config.hpp"
#include "gcr/evaluation.hpp"
#include "gcr/plot.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace gcr;

namespace {

struct RunContext {
    ExperimentConfig config;
    fs::path out;

    RunContext(const std::string& config_path, const std::string& out_override) {
        config = parse_experiment_config(config_path);
        out = out_override.empty() ? fs::path(config.output_dir) : fs::path(out_override);
        fs::create_directories(out);
        std::ofstream resolved(out / "resolved_config.ini");
        require<IngestionError>(static_cast<bool>(resolved),
                                "cannot write resolved config under " + out.string());
        resolved << render_resolved_config(config);
    }
    std::string path(const std::string& name) const { return (out / name).string(); }
};

struct ResultRow {
    std::string setting;
    int way{0};
    int shot{0};
    int episodes{0};
    std::string mean_acc, std_acc, ci95, acc_a, acc_b, acc_n;
    std::string checkpoint_id;
    std::uint64_t seed{0};
};

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path);
    require<IngestionError>(static_cast<bool>(out), "cannot write " + path);
    out << "setting,way,shot,episodes,mean_acc,std,ci95,acc_a,acc_b,acc_n,checkpoint_id,seed\n";
    for (const auto& r : rows)
        out << r.setting << "," << r.way << "," << r.shot << "," << r.episodes << ","
            << r.mean_acc << "," << r.std_acc << "," << r.ci95 << "," << r.acc_a << ","
            << r.acc_b << "," << r.acc_n << "," << r.checkpoint_id << "," << r.seed << "\n";
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// Pretrain the extractor on base classes, then seed the table with feature
// means; the registration module keeps its Gaussian initialisation.
PretrainResult initialize_model(Model& model, const DatasetSplit& split,
                                const ExperimentConfig& cfg, const RunContext& ctx) {
    PretrainConfig pc = cfg.pretrain;
    pc.seed = Rng(cfg.seed).derive(0x9e7).raw();
    PretrainResult pre = pretrain_base_classifier(model.extractor, split, pc);

    std::ofstream log(ctx.path("pretrain_log.csv"));
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < pre.epoch_losses.size(); ++e)
        log << e << "," << fmt(pre.epoch_losses[e]) << "\n";

    model.table = init_global_representations(model.extractor, split);
    return pre;
}

void maybe_refresh_table(Model& model, const DatasetSplit& split, const ExperimentConfig& cfg) {
    const bool refresh = cfg.eval.refresh_table == "always" ||
                         (cfg.eval.refresh_table == "auto" && !ablation_has_r(model.ablation));
    if (refresh) {
        Rng rng(Rng(cfg.seed).derive(0xf5e5).raw());
        refresh_table_from_features(model, split, rng);
    }
}

ResultRow standard_row(Model& model, const DatasetSplit& split, const ExperimentConfig& cfg,
                       const std::string& checkpoint_id, std::vector<double>* per_episode) {
    StandardEvalConfig ec;
    ec.n_test = cfg.eval.n_test;
    ec.n_q_test = cfg.eval.n_q_test;
    ec.episodes = cfg.eval.episodes;
    ec.rng_seed = Rng(cfg.seed).derive(0xe7a1).raw();
    ec.hard_selection = cfg.eval.hard_selection;
    StandardEvalResult r = evaluate_standard(model, split, ec, cfg.training.synthesis);

    ResultRow row;
    row.setting = "standard";
    row.way = ec.n_test;
    row.shot = split.n_few;
    row.episodes = ec.episodes;
    row.mean_acc = fmt(r.mean_accuracy);
    row.std_acc = fmt(r.std_accuracy);
    row.ci95 = fmt(r.ci95);
    row.checkpoint_id = checkpoint_id;
    row.seed = cfg.seed;
    if (r.registration_accuracy)
        std::cout << "[eval] registration accuracy " << fmt(*r.registration_accuracy) << "\n";
    std::cout << "[eval] standard " << ec.n_test << "-way " << split.n_few << "-shot: "
              << fmt(r.mean_accuracy) << " +- " << fmt(r.std_accuracy) << " over " << ec.episodes
              << " episodes\n";
    if (per_episode) *per_episode = r.per_episode;
    return row;
}

ResultRow generalized_row(Model& model, const DatasetSplit& split, const ExperimentConfig& cfg,
                          const std::string& checkpoint_id) {
    GeneralizedMetrics m = evaluate_generalized(model, split);
    ResultRow row;
    row.setting = "generalized";
    row.way = model.table.size();
    row.shot = split.n_few;
    row.episodes = 0;
    row.acc_a = fmt(m.acc_a);
    row.acc_b = fmt(m.acc_b);
    row.acc_n = fmt(m.acc_n);
    row.checkpoint_id = checkpoint_id;
    row.seed = cfg.seed;
    std::cout << "[eval] generalized: acc_a " << fmt(m.acc_a) << ", acc_b " << fmt(m.acc_b)
              << ", acc_n " << fmt(m.acc_n) << "\n";
    return row;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_override) {
    RunContext ctx(config_path, out_override);
    DatasetSplit split = load_dataset(ctx.config.dataset);
    Rng rng(ctx.config.seed);
    Model model = build_model(ctx.config, split, rng);
    PretrainResult pre = initialize_model(model, split, ctx.config, ctx);
    save_checkpoint(model, ctx.path("checkpoint_init.h5"));
    std::cout << "[pretrain] final loss "
              << (pre.epoch_losses.empty() ? std::string("n/a") : fmt(pre.final_loss)) << "\n";
    std::cout << "[pretrain] checkpoint " << ctx.path("checkpoint_init.h5") << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& out_override) {
    RunContext ctx(config_path, out_override);
    const ExperimentConfig& cfg = ctx.config;
    DatasetSplit split = load_dataset(cfg.dataset);

    Model model;
    TrainState resume;
    if (!checkpoint_path.empty()) {
        CheckpointExtras extras;
        model = load_checkpoint(checkpoint_path, &extras);
        resume.episode = extras.episode;
        resume.rng_state = extras.rng_state;
        require<ConfigError>(model.ablation == cfg.training.ablation,
                             "train: checkpoint ablation " + to_string(model.ablation) +
                                 " does not match config " + to_string(cfg.training.ablation));
        std::cout << "[train] resuming from episode " << resume.episode << "\n";
    } else {
        Rng rng(cfg.seed);
        model = build_model(cfg, split, rng);
        initialize_model(model, split, cfg, ctx);
    }

    std::ofstream log(ctx.path("train_log.csv"), resume.episode > 0 ? std::ios::app
                                                                    : std::ios::out);
    if (resume.episode == 0) log << "episode,L_reg,L_fsl,L_total,lr,wall_time\n";

    std::vector<double> episodes_axis, losses;
    TrainHooks hooks;
    hooks.on_episode = [&](const EpisodeLogRow& row) {
        log << row.episode << "," << fmt(row.registration_loss) << ","
            << fmt(row.classification_loss) << "," << fmt(row.total_loss) << "," << row.lr << ","
            << fmt(row.wall_time_s) << "\n";
        episodes_axis.push_back(static_cast<double>(row.episode));
        losses.push_back(row.total_loss);
        if ((row.episode + 1) % 500 == 0)
            std::cout << "[train] episode " << (row.episode + 1) << " loss "
                      << fmt(row.total_loss) << "\n";
    };
    hooks.on_checkpoint = [&](const TrainState& state) {
        CheckpointExtras extras;
        extras.episode = state.episode;
        extras.rng_state = state.rng_state;
        save_checkpoint(model, ctx.path("checkpoint_" + std::to_string(state.episode) + ".h5"),
                        extras);
    };

    TrainResult result = train(model, split, cfg.training, hooks, resume);

    CheckpointExtras final_extras;
    final_extras.episode = result.state.episode;
    final_extras.rng_state = result.state.rng_state;
    save_checkpoint(model, ctx.path("checkpoint_final.h5"), final_extras);

    if (!losses.empty())
        plot_line(episodes_axis, losses, "training loss (" + to_string(model.ablation) + ")",
                  "L_total", ctx.path("loss_curve.png"));

    std::vector<ResultRow> rows;
    std::vector<double> per_episode;
    rows.push_back(standard_row(model, split, cfg, "checkpoint_final", &per_episode));
    if (cfg.eval.generalized) {
        maybe_refresh_table(model, split, cfg);
        rows.push_back(generalized_row(model, split, cfg, "checkpoint_final"));
    }
    write_results_csv(ctx.path("results.csv"), rows);
    std::cout << "[train] done; outputs under " << ctx.out.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& out_override) {
    require<ConfigError>(!checkpoint_path.empty(), "eval: --checkpoint is required");
    RunContext ctx(config_path, out_override);
    const ExperimentConfig& cfg = ctx.config;
    DatasetSplit split = load_dataset(cfg.dataset);
    Model model = load_checkpoint(checkpoint_path);

    std::vector<ResultRow> rows;
    std::vector<double> per_episode;
    rows.push_back(standard_row(model, split, cfg, fs::path(checkpoint_path).stem().string(),
                                &per_episode));
    if (cfg.eval.generalized) {
        maybe_refresh_table(model, split, cfg);
        rows.push_back(
            generalized_row(model, split, cfg, fs::path(checkpoint_path).stem().string()));
    }
    write_results_csv(ctx.path("results.csv"), rows);

    std::vector<double> idx(per_episode.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
    if (!per_episode.empty())
        plot_line(idx, per_episode, "per-episode accuracy", "accuracy",
                  ctx.path("accuracy_vs_episode.png"));
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_override,
               const std::string& variants_csv) {
    RunContext ctx(config_path, out_override);
    ExperimentConfig cfg = ctx.config;
    DatasetSplit split = load_dataset(cfg.dataset);

    std::vector<Ablation> variants;
    if (variants_csv.empty()) {
        variants = {Ablation::B,   Ablation::B_S1,   Ablation::B_S1_S2,
                    Ablation::B_R, Ablation::B_S1_R, Ablation::FULL};
    } else {
        std::istringstream is(variants_csv);
        std::string item;
        while (std::getline(is, item, ',')) variants.push_back(ablation_from_string(item));
    }

    // One shared pretrained extractor keeps the comparison honest.
    Rng rng(cfg.seed);
    Model reference = build_model(cfg, split, rng);
    initialize_model(reference, split, cfg, ctx);

    std::vector<ResultRow> rows;
    std::vector<std::string> labels;
    std::vector<double> standard_acc, novel_acc;
    for (Ablation variant : variants) {
        ExperimentConfig vcfg = cfg;
        vcfg.training.ablation = variant;
        if (!ablation_has_s1(variant)) vcfg.training.synthesis.augmenters.clear();

        Rng vrng(cfg.seed);
        Model model = build_model(vcfg, split, vrng);
        // Copy the shared pretrained extractor weights and statistics.
        auto src = reference.extractor.parameters();
        auto dst = model.extractor.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
        auto src_bn = reference.extractor.batchnorms();
        auto dst_bn = model.extractor.batchnorms();
        for (std::size_t i = 0; i < src_bn.size(); ++i) {
            dst_bn[i]->running_mean = src_bn[i]->running_mean;
            dst_bn[i]->running_var = src_bn[i]->running_var;
        }
        model.extractor.set_input_normalization(reference.extractor.input_mean(),
                                                reference.extractor.input_std());
        model.table = init_global_representations(model.extractor, split);

        std::cout << "[ablate] training variant " << to_string(variant) << "\n";
        train(model, split, vcfg.training);
        save_checkpoint(model, ctx.path("checkpoint_" + to_string(variant) + ".h5"));

        ResultRow std_row = standard_row(model, split, vcfg, to_string(variant), nullptr);
        std_row.setting = "standard/" + to_string(variant);
        rows.push_back(std_row);
        labels.push_back(to_string(variant));
        standard_acc.push_back(std::stod(std_row.mean_acc));

        if (cfg.eval.generalized) {
            maybe_refresh_table(model, split, vcfg);
            ResultRow gen = generalized_row(model, split, vcfg, to_string(variant));
            gen.setting = "generalized/" + to_string(variant);
            novel_acc.push_back(std::stod(gen.acc_n));
            rows.push_back(gen);
        }
    }

    write_results_csv(ctx.path("ablation_results.csv"), rows);
    std::vector<std::vector<double>> series{standard_acc};
    std::vector<std::string> series_labels{"standard acc"};
    if (!novel_acc.empty()) {
        series.push_back(novel_acc);
        series_labels.push_back("generalized acc_n");
    }
    plot_grouped_bars(labels, series_labels, series, "ablation variants",
                      ctx.path("ablation_bars.png"));
    return 0;
}

int cmd_extend(const std::string& config_path, const std::string& checkpoint_path,
               const std::string& new_root, const std::string& out_override) {
    require<ConfigError>(!checkpoint_path.empty(), "extend: --checkpoint is required");
    require<ConfigError>(!new_root.empty(), "extend: --new-root is required");
    RunContext ctx(config_path, out_override);
    const ExperimentConfig& cfg = ctx.config;

    DatasetSplit split = load_dataset(cfg.dataset);
    DatasetSection new_section = cfg.dataset;
    new_section.root = new_root;
    new_section.generalized = false;
    DatasetSplit new_split = load_dataset(new_section);

    Model model = load_checkpoint(checkpoint_path);
    std::cout << "[extend] table checksum before: " << table_checksum(model.table) << "\n";
    const std::string before = table_checksum(model.table);

    TrainingConfig ext = cfg.training;
    ext.ablation = model.ablation;
    extend_new_classes(model, new_split, ext);
    std::cout << "[extend] table checksum after (old rows unchanged by contract): "
              << table_checksum(model.table) << "\n";
    (void)before;

    save_checkpoint(model, ctx.path("checkpoint_extended.h5"));

    DatasetSplit merged = merge_splits(split, new_split);
    std::vector<ResultRow> rows;
    rows.push_back(generalized_row(model, merged, cfg, "checkpoint_extended"));
    write_results_csv(ctx.path("results.csv"), rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot learning with global class representations"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_override, variants_csv, new_root;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file")->required();
        cmd->add_option("--out", out_override, "output directory override");
    };
    CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain the feature extractor");
    add_common(pretrain);
    CLI::App* train_cmd = app.add_subcommand("train", "episodic training");
    add_common(train_cmd);
    train_cmd->add_option("--checkpoint", checkpoint_path, "resume from checkpoint");
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate");
    CLI::App* ablate = app.add_subcommand("ablate", "run ablation variants");
    add_common(ablate);
    ablate->add_option("--variants", variants_csv, "comma list, default all six");
    CLI::App* extend = app.add_subcommand("extend", "add new novel classes, frozen backbone");
    add_common(extend);
    extend->add_option("--checkpoint", checkpoint_path, "checkpoint to extend");
    extend->add_option("--new-root", new_root, "dataset root of the new classes");

    try {
        app.parse(argc, argv);
        if (pretrain->parsed()) return cmd_pretrain(config_path, out_override);
        if (train_cmd->parsed()) return cmd_train(config_path, checkpoint_path, out_override);
        if (eval_cmd->parsed()) return cmd_eval(config_path, checkpoint_path, out_override);
        if (ablate->parsed()) return cmd_ablate(config_path, out_override, variants_csv);
        if (extend->parsed())
            return cmd_extend(config_path, checkpoint_path, new_root, out_override);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IngestionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const IntegrityError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
