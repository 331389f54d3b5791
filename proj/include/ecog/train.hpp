#ifndef ECOG_TRAIN_HPP
#define ECOG_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecog/dataset.hpp"
#include "ecog/nn.hpp"

namespace ecog::nn {

using ModelF = Model<float>;
using TensorF = Tensor<float>;

enum class Optimizer { Adam, SGD };

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 50;
    Optimizer optimizer = Optimizer::Adam;
    std::uint64_t seed = 0;
    int early_stop_patience = 10;  // epochs without test-accuracy improvement; <=0 disables
};

struct LabeledTensor {
    TensorF x;                // (N, H, W, 1)
    std::vector<int> labels;  // argmax targets
    Matrix one_hot;           // N x n_classes
};

// EpochSet -> (N, time, channels, 1) float tensor, channels capped at channel_cap (0 = all).
LabeledTensor epochs_to_tensor(const EpochSet& epochs, int n_classes, int channel_cap = 0);

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
};

EvalResult evaluate(ModelF& model, const LabeledTensor& test);

void train(ModelF& model, const LabeledTensor& train_set, const LabeledTensor& test_set,
           const TrainConfig& cfg);

void fine_tune(ModelF& model, const LabeledTensor& train_set, const LabeledTensor& test_set,
               TrainConfig cfg, const std::string& source_tag);

// ---- architecture builders -------------------------------------------------

enum class ArchFamily { CNN, CNNLSTM };

struct ArchParams {
    ArchFamily family = ArchFamily::CNN;
    int conv1_filters = 8, conv1_kh = 5, conv1_kw = 5;
    int conv2_filters = 16, conv2_kh = 3, conv2_kw = 3;
    int pool_h = 2, pool_w = 2;
    int dense_units = 64;
    int lstm_units = 32;
    double dropout = 0.3;
    bool batchnorm = false;
};

// Pool/kernel sizes are clamped to the input dimensions so small synthetic
// inputs build valid graphs.
std::vector<LayerSpec> build_architecture(const ArchParams& p, int in_h, int in_w, int n_classes);

// ---- random search ---------------------------------------------------------

struct SearchSpace {
    double lr_lo = 1e-4, lr_hi = 1e-2;  // log-uniform
    std::vector<int> filters{4, 8, 16};
    std::vector<int> kernels{3, 5, 7};
    std::vector<int> lstm_units{16, 32, 64};
    double dropout_lo = 0.0, dropout_hi = 0.5;
    int n_trials = 30;
};

struct TrialResult {
    int trial = 0;
    ArchParams arch;
    TrainConfig cfg;
    double test_accuracy = 0;
    double test_loss = 0;
};

struct SearchResult {
    std::vector<TrialResult> leaderboard;  // sorted best first
    TrialResult best;
};

SearchResult hyper_search(const SearchSpace& space, ArchFamily family,
                          const LabeledTensor& train_set, const LabeledTensor& test_set,
                          int n_classes, int base_epochs, std::uint64_t seed);

void export_leaderboard_json(const SearchResult& result, const std::string& path);
void export_history_csv(const ModelF& model, const std::string& path);

// ---- serialization ---------------------------------------------------------

void save_model(const ModelF& model, const std::string& path);
ModelF load_model(const std::string& path);

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace ecog::nn

#endif
