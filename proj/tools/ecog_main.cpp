#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "ecog/experiment.hpp"

using ecog::ExperimentConfig;

int main(int argc, char** argv) {
    CLI::App app{"ECoG motor-imagery screening pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset_root;
    std::uint64_t seed = 0;
    int jobs = 0;
    bool seed_set = false, out_set = false, root_set = false;

    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_dir, "override output directory")->each([&](const std::string&) {
        out_set = true;
    });
    app.add_option("--data", dataset_root, "override dataset root")->each([&](const std::string&) {
        root_set = true;
    });
    app.add_option("--jobs", jobs, "worker thread count (0 = default)");

    auto* eda = app.add_subcommand("eda", "spectral exploration: PSD, coherence, cohort stats");
    auto* umap_knn = app.add_subcommand("umap-knn", "embedding quality table per participant");
    auto* train = app.add_subcommand("train", "hyperparameter search and model training");
    auto* finetune = app.add_subcommand("finetune", "transfer a trained model to a new participant");
    auto* screen = app.add_subcommand("screen", "KNN-vs-DL screening correlation report");
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");

    // let the global options appear after the subcommand name
    for (auto* sub : {eda, umap_knn, train, finetune, screen, synth}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#endif

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = ecog::load_config(config_path);
        if (seed_set) cfg.seed = seed;
        if (out_set) cfg.out_dir = out_dir;
        if (root_set) cfg.dataset_root = dataset_root;

        if (eda->parsed()) return ecog::cmd_eda(cfg);
        if (umap_knn->parsed()) return ecog::cmd_umap_knn(cfg);
        if (train->parsed()) return ecog::cmd_train(cfg);
        if (finetune->parsed()) return ecog::cmd_finetune(cfg);
        if (screen->parsed()) return ecog::cmd_screen(cfg);
        if (synth->parsed()) return ecog::cmd_synth(cfg);
        std::fprintf(stderr, "error: no command given\n");
        return ecog::kExitConfigError;
    } catch (const ecog::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return ecog::kExitConfigError;
    } catch (const ecog::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return ecog::kExitDataError;
    } catch (const ecog::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return ecog::kExitNumericError;
    } catch (const std::exception& e) {
        // library invariant violations are data-shaped (bad container, bad shape)
        std::fprintf(stderr, "error: %s\n", e.what());
        return ecog::kExitDataError;
    }
}
