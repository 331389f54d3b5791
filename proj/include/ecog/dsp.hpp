#ifndef ECOG_DSP_HPP
#define ECOG_DSP_HPP

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "ecog/dataset.hpp"

namespace ecog {

enum class FilterKind { HighPass, LowPass };

struct FilterSpec {
    FilterKind kind = FilterKind::LowPass;
    double cutoff_hz = 10.0;
    int order = 4;
    double fs_hz = 1000.0;

    void validate() const;
};

struct Biquad {
    // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct SosCascade {
    std::vector<Biquad> sections;
    double fs_hz = 0.0;
    int order = 0;

    // complex frequency response at f Hz
    std::complex<double> response(double freq_hz) const;
    double gain_db(double freq_hz) const;
};

SosCascade design_filter(const FilterSpec& spec);

std::vector<double> apply_filter(const std::vector<double>& x, const SosCascade& coeffs,
                                 bool zero_phase);

// HighPass50 -> square -> LowPass10 (literal_order swaps square/lowpass back to
// the source text's sequence, which yields near-zero output; kept for comparison)
std::vector<double> power_envelope(const std::vector<double>& x, double fs,
                                   bool literal_order = false);

// Applies power_envelope to every channel of every epoch.
EpochSet power_envelope_epochs(const EpochSet& epochs, double fs, bool literal_order = false);

enum class SpectralKind { PSD, Coherence, AmplitudeSpectrum };

struct SpectralEstimate {
    std::vector<double> freqs_hz;
    std::vector<double> values;
    SpectralKind kind = SpectralKind::PSD;
    std::size_t nperseg = 0;
    double overlap = 0.0;
    std::size_t padded_n = 0;  // FFT length actually used (zero-padding documented here)
};

// Power-of-two in-place radix-2 FFT.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// One-sided amplitude spectrum; non-power-of-two lengths are zero-padded.
SpectralEstimate fft_magnitude(const std::vector<double>& x, double fs);

SpectralEstimate psd_welch(const std::vector<double>& x, double fs, std::size_t nperseg = 256,
                           double overlap_fraction = 0.5);

SpectralEstimate coherence(const std::vector<double>& x, const std::vector<double>& y, double fs,
                           std::size_t nperseg = 256);

struct CohortStatsRow {
    std::string participant_id;
    double mean_real = 0, mean_imag = 0, abs_mean_diff = 0;
    double std_real = 0, std_imag = 0;
    double range_real = 0, range_imag = 0;
};

CohortStatsRow bootstrap_cohort_stats(const EpochSet& real, const EpochSet& imag,
                                      std::size_t n_boot, std::uint64_t seed);

void export_spectral_csv(const SpectralEstimate& est, const std::string& path);
void export_cohort_stats_csv(const std::vector<CohortStatsRow>& rows, const std::string& path);

}  // namespace ecog

#endif
