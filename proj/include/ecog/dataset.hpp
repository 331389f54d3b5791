#ifndef ECOG_DATASET_HPP
#define ECOG_DATASET_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecog/matrix.hpp"

namespace ecog {

enum class Condition { Real, Imagery };

std::string condition_name(Condition c);
Condition condition_from_name(const std::string& s);

struct StimEvent {
    std::int64_t t_on = 0;
    std::int64_t t_off = 0;
    int stim_id = 0;  // 11 = tongue, 12 = hand
};

// One participant/condition multichannel voltage time series.
struct Recording {
    std::string participant_id;
    Condition condition = Condition::Real;
    int srate = 1000;
    Matrix voltages;  // time x channels
    std::vector<StimEvent> events;
    std::vector<bool> padded_channels;  // set by harmonize_channels(PadNull)

    std::int64_t n_samples() const { return static_cast<std::int64_t>(voltages.rows); }
    int n_channels() const { return static_cast<int>(voltages.cols); }

    void validate() const;  // throws std::runtime_error on invariant violation
};

struct EpochMeta {
    std::string participant_id;
    std::string condition;
    std::int64_t window = 0;
    int dropped_events = 0;                       // events that violated window bounds
    int warnings = 0;                             // degenerate-normalization warnings
    std::vector<std::int64_t> source_offsets;     // start sample of each epoch in the source
    std::vector<bool> padded_channels;
};

// Labeled fixed-length windows, epoch-major contiguous storage.
struct EpochSet {
    std::size_t n_epochs = 0;
    std::size_t n_time = 0;
    std::size_t n_channels = 0;
    std::vector<double> data;  // [epoch][time][channel]
    std::vector<int> labels;
    std::map<int, std::string> label_names;
    EpochMeta meta;

    double& at(std::size_t e, std::size_t t, std::size_t c) {
        return data[(e * n_time + t) * n_channels + c];
    }
    double at(std::size_t e, std::size_t t, std::size_t c) const {
        return data[(e * n_time + t) * n_channels + c];
    }
};

struct SplitPair {
    EpochSet train;
    EpochSet test;
    std::uint64_t seed = 0;
    double ratio = 0.75;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

enum class HarmonizeMode { PadNull, Truncate };

// ECOG-BIN v1 container (manifest.json + voltage.bin).
Recording load_recording(const std::string& path);
void save_recording(const Recording& rec, const std::string& path);

std::vector<Recording> harmonize_channels(const std::vector<Recording>& recordings,
                                          HarmonizeMode mode);

EpochSet extract_stimulus_epochs(const Recording& rec, std::int64_t window = 2000);
EpochSet extract_interval_epochs(const Recording& rec, std::int64_t window = 3000);

EpochSet normalize_unit(const EpochSet& epochs);
EpochSet normalize_mean(const EpochSet& epochs);

// feature[i][c] = time-mean of epoch i, channel c
Matrix epoch_features_mean(const EpochSet& epochs);

SplitPair split_train_test(const EpochSet& epochs, double ratio, std::uint64_t seed);

Matrix one_hot(const std::vector<int>& labels, int n_classes);

// Audit export: one row per epoch (index, label, offset, ...).
void export_epoch_metadata_csv(const EpochSet& epochs, const std::string& path);

}  // namespace ecog

#endif
