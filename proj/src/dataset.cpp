#include "ecog/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "ecog/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ecog {

std::string condition_name(Condition c) { return c == Condition::Real ? "real" : "imagery"; }

Condition condition_from_name(const std::string& s) {
    if (s == "real") return Condition::Real;
    if (s == "imagery") return Condition::Imagery;
    throw std::runtime_error("unknown condition '" + s + "'");
}

void Recording::validate() const {
    if (srate <= 0) throw std::runtime_error("srate must be positive");
    for (double v : voltages.data)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite voltage sample");
    std::int64_t prev_off = -1;
    for (const auto& ev : events) {
        if (ev.t_on < 0 || ev.t_off > n_samples() || ev.t_on >= ev.t_off)
            throw std::runtime_error("event out of range");
        if (ev.t_on < prev_off) throw std::runtime_error("events overlap or are unsorted");
        prev_off = ev.t_off;
    }
}

Recording load_recording(const std::string& path) {
    fs::path dir(path);
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("missing manifest.json in " + path);
    json m;
    try {
        mf >> m;
    } catch (const std::exception& e) {
        throw std::runtime_error("corrupt manifest.json: " + std::string(e.what()));
    }
    if (m.value("format_version", "") != "ecog-bin-1")
        throw std::runtime_error("unsupported container format_version");
    if (m.value("dtype", "") != "f32le") throw std::runtime_error("unsupported dtype");

    Recording rec;
    rec.participant_id = m.at("participant_id").get<std::string>();
    rec.condition = condition_from_name(m.at("condition").get<std::string>());
    rec.srate = m.at("srate").get<int>();
    std::int64_t n_samples = m.at("n_samples").get<std::int64_t>();
    std::int64_t n_channels = m.at("n_channels").get<std::int64_t>();
    if (n_samples <= 0 || n_channels <= 0) throw std::runtime_error("bad manifest dimensions");

    std::ifstream vf(dir / "voltage.bin", std::ios::binary);
    if (!vf) throw std::runtime_error("missing voltage.bin in " + path);
    vf.seekg(0, std::ios::end);
    std::int64_t bytes = vf.tellg();
    if (bytes != n_samples * n_channels * 4)
        throw std::runtime_error("voltage.bin size does not match manifest");
    vf.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(n_samples * n_channels));
    vf.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (!vf) throw std::runtime_error("short read from voltage.bin");

    rec.voltages = Matrix(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(n_channels));
    for (std::size_t i = 0; i < buf.size(); ++i) rec.voltages.data[i] = buf[i];

    for (const auto& e : m.at("events")) {
        StimEvent ev;
        ev.t_on = e.at("t_on").get<std::int64_t>();
        ev.t_off = e.at("t_off").get<std::int64_t>();
        ev.stim_id = e.at("stim_id").get<int>();
        rec.events.push_back(ev);
    }
    std::sort(rec.events.begin(), rec.events.end(),
              [](const StimEvent& a, const StimEvent& b) { return a.t_on < b.t_on; });
    rec.padded_channels.assign(static_cast<std::size_t>(n_channels), false);
    rec.validate();
    return rec;
}

void save_recording(const Recording& rec, const std::string& path) {
    fs::path dir(path);
    fs::create_directories(dir);
    json m;
    m["format_version"] = "ecog-bin-1";
    m["participant_id"] = rec.participant_id;
    m["condition"] = condition_name(rec.condition);
    m["srate"] = rec.srate;
    m["n_samples"] = rec.n_samples();
    m["n_channels"] = rec.n_channels();
    m["dtype"] = "f32le";
    m["events"] = json::array();
    for (const auto& ev : rec.events)
        m["events"].push_back({{"t_on", ev.t_on}, {"t_off", ev.t_off}, {"stim_id", ev.stim_id}});
    std::ofstream mf(dir / "manifest.json");
    mf << m.dump(2) << "\n";

    std::vector<float> buf(rec.voltages.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(rec.voltages.data[i]);
    std::ofstream vf(dir / "voltage.bin", std::ios::binary);
    vf.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<Recording> harmonize_channels(const std::vector<Recording>& recordings,
                                          HarmonizeMode mode) {
    if (recordings.empty()) throw std::runtime_error("harmonize_channels: empty input list");
    std::size_t target = recordings[0].voltages.cols;
    for (const auto& r : recordings) {
        target = mode == HarmonizeMode::PadNull ? std::max(target, r.voltages.cols)
                                                : std::min(target, r.voltages.cols);
    }
    std::vector<Recording> out;
    out.reserve(recordings.size());
    for (const auto& r : recordings) {
        Recording h = r;
        if (r.voltages.cols != target) {
            Matrix v(r.voltages.rows, target);
            std::size_t copy_cols = std::min(target, r.voltages.cols);
            for (std::size_t t = 0; t < v.rows; ++t)
                for (std::size_t c = 0; c < copy_cols; ++c) v(t, c) = r.voltages(t, c);
            h.voltages = std::move(v);
        }
        h.padded_channels.assign(target, false);
        for (std::size_t c = r.voltages.cols; c < target; ++c) h.padded_channels[c] = true;
        out.push_back(std::move(h));
    }
    return out;
}

static EpochSet make_epoch_set(const Recording& rec, std::int64_t window) {
    EpochSet es;
    es.n_time = static_cast<std::size_t>(window);
    es.n_channels = static_cast<std::size_t>(rec.n_channels());
    es.meta.participant_id = rec.participant_id;
    es.meta.condition = condition_name(rec.condition);
    es.meta.window = window;
    es.meta.padded_channels = rec.padded_channels;
    return es;
}

static void append_epoch(EpochSet& es, const Recording& rec, std::int64_t start, int label) {
    for (std::int64_t t = 0; t < es.meta.window; ++t)
        for (std::size_t c = 0; c < es.n_channels; ++c)
            es.data.push_back(rec.voltages(static_cast<std::size_t>(start + t), c));
    es.labels.push_back(label);
    es.meta.source_offsets.push_back(start);
    ++es.n_epochs;
}

EpochSet extract_stimulus_epochs(const Recording& rec, std::int64_t window) {
    EpochSet es = make_epoch_set(rec, window);
    int label = rec.condition == Condition::Real ? 0 : 1;
    for (const auto& ev : rec.events) {
        if (ev.t_on + window > rec.n_samples()) {
            ++es.meta.dropped_events;
            continue;
        }
        append_epoch(es, rec, ev.t_on, label);
    }
    if (es.n_epochs == 0) throw std::runtime_error("extract_stimulus_epochs: zero retained events");
    es.label_names = {{0, "real"}, {1, "imagery"}};
    return es;
}

EpochSet extract_interval_epochs(const Recording& rec, std::int64_t window) {
    EpochSet es = make_epoch_set(rec, window);
    es.label_names = {{0, "tongue"}, {1, "hand"}, {2, "rest"}};
    for (std::size_t i = 0; i < rec.events.size(); ++i) {
        const auto& ev = rec.events[i];
        if (ev.t_on + window <= rec.n_samples()) {
            append_epoch(es, rec, ev.t_on, ev.stim_id == 11 ? 0 : 1);
        } else {
            ++es.meta.dropped_events;
        }
        // rest interval between this event and the next
        if (i + 1 < rec.events.size()) {
            std::int64_t gap = rec.events[i + 1].t_on - ev.t_off;
            if (gap >= window) append_epoch(es, rec, ev.t_off, 2);
        }
    }
    if (es.n_epochs == 0) throw std::runtime_error("extract_interval_epochs: zero retained epochs");
    return es;
}

EpochSet normalize_unit(const EpochSet& epochs) {
    EpochSet out = epochs;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (std::size_t e = 0; e < epochs.n_epochs; ++e)
        for (std::size_t t = 0; t < epochs.n_time; ++t)
            for (std::size_t c = 0; c < epochs.n_channels; ++c) {
                if (!epochs.meta.padded_channels.empty() && epochs.meta.padded_channels[c]) continue;
                double v = epochs.at(e, t, c);
                if (first) {
                    lo = hi = v;
                    first = false;
                } else {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
    if (hi <= lo) {
        std::fill(out.data.begin(), out.data.end(), 0.0);
        ++out.meta.warnings;
        return out;
    }
    double scale = 1.0 / (hi - lo);
    for (double& v : out.data) v = (v - lo) * scale;
    return out;
}

EpochSet normalize_mean(const EpochSet& epochs) {
    EpochSet out = epochs;
    for (std::size_t c = 0; c < epochs.n_channels; ++c) {
        double s = 0.0;
        for (std::size_t e = 0; e < epochs.n_epochs; ++e)
            for (std::size_t t = 0; t < epochs.n_time; ++t) s += std::abs(epochs.at(e, t, c));
        double mean_abs = s / static_cast<double>(epochs.n_epochs * epochs.n_time);
        if (mean_abs == 0.0) {
            ++out.meta.warnings;
            continue;
        }
        double inv = 1.0 / mean_abs;
        for (std::size_t e = 0; e < epochs.n_epochs; ++e)
            for (std::size_t t = 0; t < epochs.n_time; ++t) out.at(e, t, c) *= inv;
    }
    return out;
}

Matrix epoch_features_mean(const EpochSet& epochs) {
    Matrix f(epochs.n_epochs, epochs.n_channels);
    for (std::size_t e = 0; e < epochs.n_epochs; ++e)
        for (std::size_t c = 0; c < epochs.n_channels; ++c) {
            double s = 0.0;
            for (std::size_t t = 0; t < epochs.n_time; ++t) s += epochs.at(e, t, c);
            f(e, c) = s / static_cast<double>(epochs.n_time);
        }
    return f;
}

static EpochSet take_epochs(const EpochSet& src, const std::vector<std::size_t>& idx) {
    EpochSet out;
    out.n_epochs = idx.size();
    out.n_time = src.n_time;
    out.n_channels = src.n_channels;
    out.label_names = src.label_names;
    out.meta = src.meta;
    out.meta.source_offsets.clear();
    out.data.reserve(idx.size() * src.n_time * src.n_channels);
    for (std::size_t i : idx) {
        const double* p = src.data.data() + i * src.n_time * src.n_channels;
        out.data.insert(out.data.end(), p, p + src.n_time * src.n_channels);
        out.labels.push_back(src.labels[i]);
        if (i < src.meta.source_offsets.size())
            out.meta.source_offsets.push_back(src.meta.source_offsets[i]);
    }
    return out;
}

SplitPair split_train_test(const EpochSet& epochs, double ratio, std::uint64_t seed) {
    if (epochs.n_epochs < 4) throw std::runtime_error("split_train_test: fewer than 4 epochs");
    if (ratio <= 0.0 || ratio >= 1.0) throw std::runtime_error("split ratio must be in (0,1)");
    std::vector<std::size_t> idx(epochs.n_epochs);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed, 0x51b7'1e57'5eedULL);
    rng.shuffle(idx);
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(epochs.n_epochs)));
    n_train = std::clamp<std::size_t>(n_train, 1, epochs.n_epochs - 1);
    SplitPair sp;
    sp.seed = seed;
    sp.ratio = ratio;
    sp.train_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    sp.test_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    sp.train = take_epochs(epochs, sp.train_indices);
    sp.test = take_epochs(epochs, sp.test_indices);
    return sp;
}

Matrix one_hot(const std::vector<int>& labels, int n_classes) {
    Matrix m(labels.size(), static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::runtime_error("one_hot: label out of range");
        m(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return m;
}

void export_epoch_metadata_csv(const EpochSet& epochs, const std::string& path) {
    std::ofstream f(path);
    f << "epoch,label,label_name,source_offset,participant,condition,window\n";
    for (std::size_t e = 0; e < epochs.n_epochs; ++e) {
        int lbl = epochs.labels[e];
        auto it = epochs.label_names.find(lbl);
        f << e << ',' << lbl << ',' << (it == epochs.label_names.end() ? "" : it->second) << ','
          << (e < epochs.meta.source_offsets.size() ? epochs.meta.source_offsets[e] : -1) << ','
          << epochs.meta.participant_id << ',' << epochs.meta.condition << ','
          << epochs.meta.window << '\n';
    }
}

}  // namespace ecog
