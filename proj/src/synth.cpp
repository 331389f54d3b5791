#include "ecog/synth.hpp"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "ecog/dsp.hpp"
#include "ecog/rng.hpp"

namespace ecog {

constexpr double kTau = 2.0 * std::numbers::pi;

void SynthConfig::validate() const {
    if (n_participants < 1) throw std::runtime_error("synth: need at least one participant");
    if (channels < 4) throw std::runtime_error("synth: channels must be >= 4");
    if (events_per_condition < 20) throw std::runtime_error("synth: events must be >= 20");
    if (gap < 3000) throw std::runtime_error("synth: gap must be >= 3000 samples");
    if (amp_jitter < 0.0) throw std::runtime_error("synth: amp_jitter must be >= 0");
    for (double d : deltas)
        if (d < 0.0 || d > 1.0) throw std::runtime_error("synth: delta must be in [0,1]");
}

// 1/f^e-shaped Gaussian noise via spectral shaping.
static std::vector<double> pink_noise(std::int64_t n, double exponent, double scale, Rng& rng) {
    std::size_t nfft = 1;
    while (nfft < static_cast<std::size_t>(n)) nfft <<= 1;
    std::vector<std::complex<double>> spec(nfft);
    spec[0] = 0.0;
    for (std::size_t k = 1; k <= nfft / 2; ++k) {
        double mag = std::pow(static_cast<double>(k), -exponent / 2.0);
        std::complex<double> z(rng.normal(), rng.normal());
        spec[k] = z * mag;
        if (k != nfft / 2) spec[nfft - k] = std::conj(spec[k]);
    }
    fft_inplace(spec, true);
    std::vector<double> x(static_cast<std::size_t>(n));
    double ss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        x[static_cast<std::size_t>(i)] = spec[static_cast<std::size_t>(i)].real();
        ss += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 0)
        for (double& v : x) v *= scale / sd;
    return x;
}

static Recording make_condition(const SynthConfig& cfg, int participant, Condition cond,
                                double burst_amp) {
    const std::int64_t lead = 1000;
    const std::int64_t span = cfg.window + cfg.gap;
    const std::int64_t n_samples = lead + cfg.events_per_condition * span + cfg.gap;

    Recording rec;
    rec.participant_id = "p" + std::to_string(participant);
    rec.condition = cond;
    rec.srate = cfg.srate;
    rec.voltages = Matrix(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(cfg.channels));

    // Noise is shared between the two conditions of a participant: otherwise a
    // per-recording spectral fingerprint would separate the conditions even at
    // delta = 0. Only the bursts carry condition information.
    std::uint64_t cond_tag = cond == Condition::Real ? 0x11ULL : 0x22ULL;
    for (int c = 0; c < cfg.channels; ++c) {
        Rng rng(cfg.seed, Rng::mix(static_cast<std::uint64_t>(participant) << 16) +
                              static_cast<std::uint64_t>(c));
        std::vector<double> noise = pink_noise(n_samples, cfg.noise_exponent, cfg.noise_scale, rng);
        for (std::int64_t t = 0; t < n_samples; ++t)
            rec.voltages(static_cast<std::size_t>(t), static_cast<std::size_t>(c)) =
                noise[static_cast<std::size_t>(t)];
    }

    // tongue bursts on the first quarter of channels, hand on the second
    const int quarter = cfg.channels / 4;
    Rng ev_rng(cfg.seed, Rng::mix(0xE0E0ULL + (static_cast<std::uint64_t>(participant) << 8) |
                                  cond_tag));
    // Imagery events sit half a gap later so the two conditions sample
    // disjoint stretches of the shared noise (no cross-condition twin epochs).
    const std::int64_t cond_shift = cond == Condition::Imagery ? cfg.gap / 2 : 0;
    for (int e = 0; e < cfg.events_per_condition; ++e) {
        StimEvent ev;
        ev.t_on = lead + e * span + cond_shift;
        ev.t_off = ev.t_on + cfg.window;
        ev.stim_id = e % 2 == 0 ? 11 : 12;
        rec.events.push_back(ev);
        if (burst_amp <= 0.0) continue;
        double freq = ev_rng.uniform(cfg.burst_lo_hz, cfg.burst_hi_hz);
        double phase = ev_rng.uniform(0.0, kTau);
        // trial-to-trial amplitude variability: without it both conditions
        // collapse into zero-variance clusters and every delta > 0 separates
        double amp = burst_amp * std::exp(cfg.amp_jitter * ev_rng.normal());
        int c0 = ev.stim_id == 11 ? 0 : quarter;
        for (int c = c0; c < c0 + quarter; ++c) {
            for (std::int64_t t = ev.t_on; t < ev.t_off; ++t) {
                double u = static_cast<double>(t - ev.t_on) / static_cast<double>(cfg.window);
                double env = 0.5 * (1.0 - std::cos(kTau * u));  // Hann on/off ramp
                rec.voltages(static_cast<std::size_t>(t), static_cast<std::size_t>(c)) +=
                    amp * env *
                    std::sin(kTau * freq * static_cast<double>(t) / cfg.srate + phase);
            }
        }
    }
    rec.padded_channels.assign(static_cast<std::size_t>(cfg.channels), false);
    rec.validate();
    return rec;
}

std::vector<CohortEntry> generate_cohort(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<CohortEntry> cohort;
    for (int p = 0; p < cfg.n_participants; ++p) {
        double delta = p < static_cast<int>(cfg.deltas.size()) ? cfg.deltas[static_cast<std::size_t>(p)]
                                                               : 0.5;
        CohortEntry entry;
        entry.participant_id = "p" + std::to_string(p);
        entry.delta = delta;
        entry.real = make_condition(cfg, p, Condition::Real, cfg.burst_amp * (1.0 + delta) / 2.0);
        entry.imagery =
            make_condition(cfg, p, Condition::Imagery, cfg.burst_amp * (1.0 - delta) / 2.0);
        cohort.push_back(std::move(entry));
    }
    return cohort;
}

void write_cohort(const std::vector<CohortEntry>& cohort, const std::string& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    nlohmann::json manifest;
    manifest["participants"] = nlohmann::json::array();
    for (const auto& entry : cohort) {
        std::string real_dir = root + "/" + entry.participant_id + "_real";
        std::string imag_dir = root + "/" + entry.participant_id + "_imagery";
        save_recording(entry.real, real_dir);
        save_recording(entry.imagery, imag_dir);
        manifest["participants"].push_back({{"participant", entry.participant_id},
                                            {"delta", entry.delta},
                                            {"real", entry.participant_id + "_real"},
                                            {"imagery", entry.participant_id + "_imagery"}});
    }
    std::ofstream f(fs::path(root) / "cohort.json");
    f << manifest.dump(2) << "\n";
}

}  // namespace ecog
