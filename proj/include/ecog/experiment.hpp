#ifndef ECOG_EXPERIMENT_HPP
#define ECOG_EXPERIMENT_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecog/synth.hpp"
#include "ecog/umap.hpp"

namespace ecog {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure
constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericError = 4;

struct ExperimentConfig {
    std::string dataset_root;
    std::vector<std::string> participants;  // empty = all found in dataset_root
    std::string variant = "both";           // processed | unprocessed | both
    int channel_cap_umap = 46;
    int channel_cap_dl = 48;
    UmapParams umap;
    std::size_t knn_k = 4;
    std::string dl_task = "3-class";  // 3-class | 2-class
    std::string arch = "cnn";         // cnn | cnn-lstm
    int tuner_budget = 30;
    int dl_epochs = 30;
    int batch_size = 16;
    std::int64_t stim_window = 2000;
    std::int64_t interval_window = 3000;
    double split_ratio = 0.75;
    double screen_threshold = 0.8;
    std::size_t n_boot = 1000;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string finetune_source;       // model file for the finetune command
    std::string finetune_target;       // target participant id
    SynthConfig synth;
};

ExperimentConfig load_config(const std::string& path);

int cmd_eda(const ExperimentConfig& cfg);
int cmd_umap_knn(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_finetune(const ExperimentConfig& cfg);
int cmd_screen(const ExperimentConfig& cfg);
int cmd_synth(const ExperimentConfig& cfg);

}  // namespace ecog

#endif
