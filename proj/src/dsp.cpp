#include "ecog/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ecog/rng.hpp"

namespace ecog {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

void FilterSpec::validate() const {
    if (order < 1) throw std::runtime_error("filter order must be >= 1");
    if (fs_hz <= 0) throw std::runtime_error("sampling rate must be positive");
    if (cutoff_hz <= 0 || cutoff_hz >= fs_hz / 2)
        throw std::runtime_error("cutoff must lie in (0, Nyquist)");
}

std::complex<double> SosCascade::response(double freq_hz) const {
    cd z = std::exp(cd(0.0, -2.0 * kPi * freq_hz / fs_hz));
    cd h(1.0, 0.0);
    for (const auto& s : sections) {
        cd num = s.b0 + s.b1 * z + s.b2 * z * z;
        cd den = 1.0 + s.a1 * z + s.a2 * z * z;
        h *= num / den;
    }
    return h;
}

double SosCascade::gain_db(double freq_hz) const {
    return 20.0 * std::log10(std::abs(response(freq_hz)));
}

SosCascade design_filter(const FilterSpec& spec) {
    spec.validate();
    const int n = spec.order;
    const double fs = spec.fs_hz;
    const double warped = 2.0 * fs * std::tan(kPi * spec.cutoff_hz / fs);

    // Butterworth analog prototype poles on the unit circle, left half plane.
    std::vector<cd> apoles;
    for (int k = 1; k <= n; ++k) {
        double theta = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        apoles.emplace_back(std::cos(theta), std::sin(theta));
    }

    // Frequency transform, then bilinear map z = (2fs + s) / (2fs - s).
    std::vector<cd> zpoles;
    for (cd p : apoles) {
        cd s = spec.kind == FilterKind::LowPass ? p * warped : warped / p;
        zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));
    }
    // All digital zeros sit at z = -1 (lowpass) or z = +1 (highpass).
    const double zero = spec.kind == FilterKind::LowPass ? -1.0 : 1.0;

    // Pair complex-conjugate poles into biquads; a lone real pole (odd order)
    // becomes a first-order section.
    std::sort(zpoles.begin(), zpoles.end(), [](cd a, cd b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return std::abs(a.imag()) < std::abs(b.imag());
    });
    SosCascade cas;
    cas.fs_hz = fs;
    cas.order = n;
    std::vector<cd> pending;
    for (cd p : zpoles) {
        if (std::abs(p.imag()) < 1e-12) {
            pending.push_back(p);
            continue;
        }
        if (p.imag() < 0) continue;  // conjugate handled with its partner
        Biquad s;
        s.b0 = 1.0;
        s.b1 = -2.0 * zero;
        s.b2 = 1.0;
        s.a1 = -2.0 * p.real();
        s.a2 = std::norm(p);
        cas.sections.push_back(s);
    }
    for (std::size_t i = 0; i + 1 < pending.size(); i += 2) {
        Biquad s;
        s.b0 = 1.0;
        s.b1 = -2.0 * zero;
        s.b2 = 1.0;
        s.a1 = -(pending[i].real() + pending[i + 1].real());
        s.a2 = pending[i].real() * pending[i + 1].real();
        cas.sections.push_back(s);
    }
    if (pending.size() % 2 == 1) {
        Biquad s;
        s.b0 = 1.0;
        s.b1 = -zero;
        s.b2 = 0.0;
        s.a1 = -pending.back().real();
        s.a2 = 0.0;
        cas.sections.push_back(s);
    }

    // Normalize passband gain to exactly 1 (DC for lowpass, Nyquist for highpass).
    double ref = spec.kind == FilterKind::LowPass ? 0.0 : fs / 2.0;
    double g = std::abs(cas.response(ref));
    if (g <= 0) throw std::runtime_error("degenerate filter design");
    double correction = 1.0 / g;
    for (auto& s : cas.sections) {
        double per = std::pow(correction, 1.0 / static_cast<double>(cas.sections.size()));
        s.b0 *= per;
        s.b1 *= per;
        s.b2 *= per;
    }
    return cas;
}

static void run_cascade(std::vector<double>& x, const SosCascade& cas) {
    for (const auto& s : cas.sections) {
        double w1 = 0.0, w2 = 0.0;  // direct form II transposed state
        for (double& v : x) {
            double in = v;
            double out = s.b0 * in + w1;
            w1 = s.b1 * in - s.a1 * out + w2;
            w2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
}

std::vector<double> apply_filter(const std::vector<double>& x, const SosCascade& coeffs,
                                 bool zero_phase) {
    if (!zero_phase) {
        std::vector<double> y = x;
        run_cascade(y, coeffs);
        return y;
    }
    const std::size_t ntaps = static_cast<std::size_t>(2 * coeffs.order + 1);
    const std::size_t pad = 3 * ntaps;
    if (x.size() <= pad)
        throw std::runtime_error("apply_filter: signal shorter than reflection padding");

    // Odd reflection at both ends, forward-backward pass, padding stripped.
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.front() - x[pad - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.back() - x[x.size() - 2 - i]);

    run_cascade(ext, coeffs);
    std::reverse(ext.begin(), ext.end());
    run_cascade(ext, coeffs);
    std::reverse(ext.begin(), ext.end());
    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.end() - static_cast<std::ptrdiff_t>(pad));
}

std::vector<double> power_envelope(const std::vector<double>& x, double fs, bool literal_order) {
    SosCascade hp = design_filter({FilterKind::HighPass, 50.0, 4, fs});
    SosCascade lp = design_filter({FilterKind::LowPass, 10.0, 4, fs});
    std::vector<double> y = apply_filter(x, hp, true);
    if (literal_order) {
        y = apply_filter(y, lp, true);
        for (double& v : y) v = v * v;
        return y;
    }
    for (double& v : y) v = v * v;
    return apply_filter(y, lp, true);
}

EpochSet power_envelope_epochs(const EpochSet& epochs, double fs, bool literal_order) {
    EpochSet out = epochs;
    const std::int64_t total = static_cast<std::int64_t>(epochs.n_epochs * epochs.n_channels);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        std::size_t e = static_cast<std::size_t>(i) / epochs.n_channels;
        std::size_t c = static_cast<std::size_t>(i) % epochs.n_channels;
        std::vector<double> x(epochs.n_time);
        for (std::size_t t = 0; t < epochs.n_time; ++t) x[t] = epochs.at(e, t, c);
        std::vector<double> y = power_envelope(x, fs, literal_order);
        for (std::size_t t = 0; t < epochs.n_time; ++t) out.at(e, t, c) = y[t];
    }
    return out;
}

void fft_inplace(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::runtime_error("fft length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                cd u = a[i + k];
                cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse)
        for (cd& v : a) v /= static_cast<double>(n);
}

static std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

SpectralEstimate fft_magnitude(const std::vector<double>& x, double fs) {
    if (x.empty()) throw std::runtime_error("fft_magnitude: empty signal");
    const std::size_t n = next_pow2(x.size());
    std::vector<cd> a(n);
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = cd(x[i], 0.0);
    fft_inplace(a, false);

    SpectralEstimate est;
    est.kind = SpectralKind::AmplitudeSpectrum;
    est.padded_n = n;
    const std::size_t half = n / 2;
    const double norm = static_cast<double>(x.size());
    for (std::size_t k = 0; k <= half; ++k) {
        est.freqs_hz.push_back(static_cast<double>(k) * fs / static_cast<double>(n));
        double amp = std::abs(a[k]) / norm;
        if (k != 0 && k != half) amp *= 2.0;
        est.values.push_back(amp);
    }
    return est;
}

static std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
    return w;
}

struct SegmentedSpectra {
    std::vector<std::vector<cd>> segs;  // one-sided FFT per segment, windowed
    std::size_t nfft = 0;
    double scale = 0.0;  // 1 / (fs * sum(w^2))
};

static SegmentedSpectra segment_ffts(const std::vector<double>& x, double fs, std::size_t nperseg,
                                     double overlap_fraction) {
    if (nperseg == 0 || nperseg > x.size())
        throw std::runtime_error("nperseg exceeds signal length");
    std::size_t step = static_cast<std::size_t>(
        std::max(1.0, std::floor(static_cast<double>(nperseg) * (1.0 - overlap_fraction))));
    std::vector<double> w = hann_window(nperseg);
    double wsum2 = 0.0;
    for (double v : w) wsum2 += v * v;

    SegmentedSpectra out;
    out.nfft = next_pow2(nperseg);
    out.scale = 1.0 / (fs * wsum2);
    for (std::size_t start = 0; start + nperseg <= x.size(); start += step) {
        std::vector<cd> a(out.nfft, cd(0, 0));
        for (std::size_t i = 0; i < nperseg; ++i) a[i] = cd(x[start + i] * w[i], 0.0);
        fft_inplace(a, false);
        a.resize(out.nfft / 2 + 1);
        out.segs.push_back(std::move(a));
    }
    return out;
}

SpectralEstimate psd_welch(const std::vector<double>& x, double fs, std::size_t nperseg,
                           double overlap_fraction) {
    SegmentedSpectra sp = segment_ffts(x, fs, nperseg, overlap_fraction);
    const std::size_t half = sp.nfft / 2;
    SpectralEstimate est;
    est.kind = SpectralKind::PSD;
    est.nperseg = nperseg;
    est.overlap = overlap_fraction;
    est.padded_n = sp.nfft;
    // density correction for zero padding: bins are nperseg/nfft closer together
    double pad_ratio = static_cast<double>(sp.nfft) / static_cast<double>(nperseg);
    for (std::size_t k = 0; k <= half; ++k) {
        est.freqs_hz.push_back(static_cast<double>(k) * fs / static_cast<double>(sp.nfft));
        double acc = 0.0;
        for (const auto& seg : sp.segs) acc += std::norm(seg[k]);
        double p = acc / static_cast<double>(sp.segs.size()) * sp.scale / pad_ratio;
        if (k != 0 && k != half) p *= 2.0;
        est.values.push_back(p);
    }
    return est;
}

SpectralEstimate coherence(const std::vector<double>& x, const std::vector<double>& y, double fs,
                           std::size_t nperseg) {
    if (x.size() != y.size()) throw std::runtime_error("coherence: signals of unequal length");
    SegmentedSpectra sx = segment_ffts(x, fs, nperseg, 0.5);
    SegmentedSpectra sy = segment_ffts(y, fs, nperseg, 0.5);
    if (sx.segs.size() < 8) throw std::runtime_error("coherence: fewer than 8 segments");

    const std::size_t half = sx.nfft / 2;
    SpectralEstimate est;
    est.kind = SpectralKind::Coherence;
    est.nperseg = nperseg;
    est.overlap = 0.5;
    est.padded_n = sx.nfft;
    for (std::size_t k = 0; k <= half; ++k) {
        est.freqs_hz.push_back(static_cast<double>(k) * fs / static_cast<double>(sx.nfft));
        double pxx = 0.0, pyy = 0.0;
        cd pxy(0.0, 0.0);
        for (std::size_t s = 0; s < sx.segs.size(); ++s) {
            pxx += std::norm(sx.segs[s][k]);
            pyy += std::norm(sy.segs[s][k]);
            pxy += sx.segs[s][k] * std::conj(sy.segs[s][k]);
        }
        double den = pxx * pyy;
        double c = den > 0.0 ? std::norm(pxy) / den : 0.0;
        est.values.push_back(std::clamp(c, 0.0, 1.0));
    }
    return est;
}

// ---- bootstrap cohort statistics -------------------------------------------

static Matrix condition_mean_signal(const EpochSet& es, const std::vector<std::size_t>& idx) {
    Matrix m(es.n_time, es.n_channels);
    for (std::size_t i : idx)
        for (std::size_t t = 0; t < es.n_time; ++t)
            for (std::size_t c = 0; c < es.n_channels; ++c) m(t, c) += es.at(i, t, c);
    double inv = 1.0 / static_cast<double>(idx.size());
    for (double& v : m.data) v *= inv;
    return m;
}

static std::size_t coherence_nperseg(std::size_t n_time) {
    // largest power of two giving at least 8 half-overlapped segments
    std::size_t np = 256;
    while (np > 8 && (n_time < np || (n_time - np) / (np / 2) + 1 < 8)) np /= 2;
    return np;
}

static double mean_coherence_to_reference(const EpochSet& es, const std::vector<std::size_t>& idx,
                                          const Matrix& reference, double fs) {
    Matrix m = condition_mean_signal(es, idx);
    std::size_t np = coherence_nperseg(es.n_time);
    double acc = 0.0;
    for (std::size_t c = 0; c < es.n_channels; ++c) {
        std::vector<double> a(es.n_time), b(es.n_time);
        for (std::size_t t = 0; t < es.n_time; ++t) {
            a[t] = m(t, c);
            b[t] = reference(t, c);
        }
        SpectralEstimate coh = coherence(a, b, fs, np);
        double s = 0.0;
        for (double v : coh.values) s += v;
        acc += s / static_cast<double>(coh.values.size());
    }
    return acc / static_cast<double>(es.n_channels);
}

CohortStatsRow bootstrap_cohort_stats(const EpochSet& real, const EpochSet& imag,
                                      std::size_t n_boot, std::uint64_t seed) {
    if (real.n_epochs == 0 || imag.n_epochs == 0)
        throw std::runtime_error("bootstrap_cohort_stats: empty epoch set");
    if (real.n_channels != imag.n_channels)
        throw std::runtime_error("bootstrap_cohort_stats: channel mismatch");

    const double fs = 1000.0;
    std::vector<std::size_t> all_real(real.n_epochs), all_imag(imag.n_epochs);
    for (std::size_t i = 0; i < real.n_epochs; ++i) all_real[i] = i;
    for (std::size_t i = 0; i < imag.n_epochs; ++i) all_imag[i] = i;
    Matrix ref_real = condition_mean_signal(real, all_real);
    Matrix ref_imag = condition_mean_signal(imag, all_imag);

    std::vector<double> stat_real(n_boot), stat_imag(n_boot);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < static_cast<std::int64_t>(n_boot); ++b) {
        Rng rng(seed, static_cast<std::uint64_t>(b));
        std::vector<std::size_t> ir(real.n_epochs), ii(imag.n_epochs);
        for (auto& v : ir) v = static_cast<std::size_t>(rng.below(real.n_epochs));
        for (auto& v : ii) v = static_cast<std::size_t>(rng.below(imag.n_epochs));
        stat_real[static_cast<std::size_t>(b)] =
            mean_coherence_to_reference(real, ir, ref_real, fs);
        stat_imag[static_cast<std::size_t>(b)] =
            mean_coherence_to_reference(imag, ii, ref_imag, fs);
    }

    auto summarize = [](const std::vector<double>& v, double& mean, double& sd, double& range) {
        double s = 0.0;
        for (double x : v) s += x;
        mean = s / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = std::sqrt(ss / static_cast<double>(v.size()));
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        range = *hi - *lo;
    };

    CohortStatsRow row;
    row.participant_id = real.meta.participant_id;
    summarize(stat_real, row.mean_real, row.std_real, row.range_real);
    summarize(stat_imag, row.mean_imag, row.std_imag, row.range_imag);
    row.abs_mean_diff = std::abs(row.mean_real - row.mean_imag);
    return row;
}

static void write_num(std::ofstream& f, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    f << buf;
}

void export_spectral_csv(const SpectralEstimate& est, const std::string& path) {
    std::ofstream f(path);
    f << "freq_hz,value\n";
    for (std::size_t i = 0; i < est.freqs_hz.size(); ++i) {
        write_num(f, est.freqs_hz[i]);
        f << ',';
        write_num(f, est.values[i]);
        f << '\n';
    }
}

void export_cohort_stats_csv(const std::vector<CohortStatsRow>& rows, const std::string& path) {
    std::ofstream f(path);
    f << "participant,mean_real,mean_imag,abs_mean_diff,std_real,std_imag,range_real,range_imag\n";
    for (const auto& r : rows) {
        f << r.participant_id;
        for (double v : {r.mean_real, r.mean_imag, r.abs_mean_diff, r.std_real, r.std_imag,
                         r.range_real, r.range_imag}) {
            f << ',';
            write_num(f, v);
        }
        f << '\n';
    }
}

}  // namespace ecog
