#ifndef ECOG_SYNTH_HPP
#define ECOG_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ecog/dataset.hpp"

namespace ecog {

struct SynthConfig {
    int n_participants = 5;
    std::vector<double> deltas;  // separability knob per participant, in [0,1]
    int channels = 8;
    int srate = 1000;
    int events_per_condition = 20;
    std::int64_t window = 2000;      // stimulus duration == epoch window
    std::int64_t gap = 3000;         // inter-event spacing (also rest-epoch budget)
    double noise_exponent = 1.0;     // 1/f^e baseline
    double burst_lo_hz = 70.0, burst_hi_hz = 110.0;
    double burst_amp = 1.0;
    double amp_jitter = 0.4;  // lognormal sigma of per-event burst amplitude
    double noise_scale = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CohortEntry {
    std::string participant_id;
    double delta = 0.0;
    Recording real;
    Recording imagery;
};

// Real bursts at amplitude (1+delta)/2, imagery at (1-delta)/2: delta=0 makes
// the conditions identically distributed, delta=1 maximally separable.
// Tongue and hand events burst on disjoint channel subsets so the 3-class
// task is solvable from spatial pattern alone.
std::vector<CohortEntry> generate_cohort(const SynthConfig& cfg);

// Writes ECOG-BIN v1 directories plus a cohort manifest (ground truth deltas
// kept separate from the model-visible recordings).
void write_cohort(const std::vector<CohortEntry>& cohort, const std::string& root);

}  // namespace ecog

#endif
