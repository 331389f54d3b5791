#include "ecog/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ecog/dataset.hpp"
#include "ecog/dsp.hpp"
#include "ecog/knn.hpp"
#include "ecog/svg.hpp"
#include "ecog/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ecog {

static constexpr const char* kToolVersion = "0.1.0";

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    ExperimentConfig cfg;
    try {
        cfg.dataset_root = j.value("dataset_root", cfg.dataset_root);
        cfg.participants = j.value("participants", cfg.participants);
        cfg.variant = j.value("variant", cfg.variant);
        cfg.channel_cap_umap = j.value("channel_cap_umap", cfg.channel_cap_umap);
        cfg.channel_cap_dl = j.value("channel_cap_dl", cfg.channel_cap_dl);
        cfg.knn_k = j.value("knn_k", cfg.knn_k);
        cfg.dl_task = j.value("dl_task", cfg.dl_task);
        cfg.arch = j.value("arch", cfg.arch);
        cfg.tuner_budget = j.value("tuner_budget", cfg.tuner_budget);
        cfg.dl_epochs = j.value("dl_epochs", cfg.dl_epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.stim_window = j.value("stim_window", cfg.stim_window);
        cfg.interval_window = j.value("interval_window", cfg.interval_window);
        cfg.split_ratio = j.value("split_ratio", cfg.split_ratio);
        cfg.screen_threshold = j.value("screen_threshold", cfg.screen_threshold);
        cfg.n_boot = j.value("n_boot", cfg.n_boot);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.finetune_source = j.value("finetune_source", cfg.finetune_source);
        cfg.finetune_target = j.value("finetune_target", cfg.finetune_target);
        if (j.contains("umap")) {
            const auto& u = j["umap"];
            cfg.umap.k = u.value("k", cfg.umap.k);
            cfg.umap.min_dist = u.value("min_dist", cfg.umap.min_dist);
            cfg.umap.dim = u.value("dim", cfg.umap.dim);
            cfg.umap.epochs = u.value("epochs", cfg.umap.epochs);
            cfg.umap.learning_rate = u.value("learning_rate", cfg.umap.learning_rate);
            cfg.umap.neg_rate = u.value("neg_rate", cfg.umap.neg_rate);
        }
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            cfg.synth.n_participants = s.value("n_participants", cfg.synth.n_participants);
            cfg.synth.deltas = s.value("deltas", cfg.synth.deltas);
            cfg.synth.channels = s.value("channels", cfg.synth.channels);
            cfg.synth.events_per_condition =
                s.value("events_per_condition", cfg.synth.events_per_condition);
            cfg.synth.window = s.value("window", cfg.synth.window);
            cfg.synth.gap = s.value("gap", cfg.synth.gap);
            cfg.synth.noise_exponent = s.value("noise_exponent", cfg.synth.noise_exponent);
            cfg.synth.burst_amp = s.value("burst_amp", cfg.synth.burst_amp);
            cfg.synth.amp_jitter = s.value("amp_jitter", cfg.synth.amp_jitter);
            cfg.synth.noise_scale = s.value("noise_scale", cfg.synth.noise_scale);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config field error: " + std::string(e.what()));
    }
    if (cfg.variant != "processed" && cfg.variant != "unprocessed" && cfg.variant != "both")
        throw ConfigError("variant must be processed|unprocessed|both");
    if (cfg.dl_task != "3-class" && cfg.dl_task != "2-class")
        throw ConfigError("dl_task must be 3-class|2-class");
    if (cfg.arch != "cnn" && cfg.arch != "cnn-lstm")
        throw ConfigError("arch must be cnn|cnn-lstm");
    if (cfg.split_ratio <= 0.0 || cfg.split_ratio >= 1.0)
        throw ConfigError("split_ratio must be in (0,1)");
    return cfg;
}

static json config_echo(const ExperimentConfig& cfg) {
    json j;
    j["dataset_root"] = cfg.dataset_root;
    j["participants"] = cfg.participants;
    j["variant"] = cfg.variant;
    j["channel_cap_umap"] = cfg.channel_cap_umap;
    j["channel_cap_dl"] = cfg.channel_cap_dl;
    j["knn_k"] = cfg.knn_k;
    j["dl_task"] = cfg.dl_task;
    j["arch"] = cfg.arch;
    j["tuner_budget"] = cfg.tuner_budget;
    j["dl_epochs"] = cfg.dl_epochs;
    j["batch_size"] = cfg.batch_size;
    j["stim_window"] = cfg.stim_window;
    j["interval_window"] = cfg.interval_window;
    j["split_ratio"] = cfg.split_ratio;
    j["screen_threshold"] = cfg.screen_threshold;
    j["n_boot"] = cfg.n_boot;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["umap"] = {{"k", cfg.umap.k},       {"min_dist", cfg.umap.min_dist},
                 {"dim", cfg.umap.dim},   {"epochs", cfg.umap.epochs},
                 {"lr", cfg.umap.learning_rate}, {"neg_rate", cfg.umap.neg_rate}};
    return j;
}

// crc over every file under the dataset root, in sorted path order
static std::uint32_t hash_inputs(const std::string& root) {
    if (root.empty() || !fs::exists(root)) return 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint32_t h = 0;
    for (const auto& p : files) {
        std::ifstream f(p, std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        h = nn::crc32(data.data(), data.size(), h);
        std::string name = p.filename().string();
        h = nn::crc32(name.data(), name.size(), h);
    }
    return h;
}

// run_report.json carries wall-clock, so it is excluded from the
// byte-identical-outputs contract; every other emitted file is deterministic.
static void write_run_report(const ExperimentConfig& cfg, const std::string& command,
                             double seconds, const json& metrics) {
    json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["config"] = config_echo(cfg);
    j["input_hash"] = hash_inputs(cfg.dataset_root);
    j["wall_clock_s"] = seconds;
    j["metrics"] = metrics;
    std::ofstream f(fs::path(cfg.out_dir) / (command + "_report.json"));
    f << j.dump(2) << "\n";
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

// ---- dataset discovery ------------------------------------------------------

struct ParticipantData {
    std::string id;
    Recording real;
    Recording imagery;
};

static std::vector<ParticipantData> load_participants(const ExperimentConfig& cfg) {
    if (cfg.dataset_root.empty()) throw ConfigError("dataset_root is required");
    if (!fs::exists(cfg.dataset_root)) throw DataError("dataset_root does not exist: " + cfg.dataset_root);

    std::map<std::string, std::pair<std::string, std::string>> dirs;  // pid -> (real, imagery)
    fs::path cohort = fs::path(cfg.dataset_root) / "cohort.json";
    if (fs::exists(cohort)) {
        std::ifstream f(cohort);
        json j;
        f >> j;
        for (const auto& p : j.at("participants")) {
            std::string pid = p.at("participant").get<std::string>();
            dirs[pid] = {(fs::path(cfg.dataset_root) / p.at("real").get<std::string>()).string(),
                         (fs::path(cfg.dataset_root) / p.at("imagery").get<std::string>()).string()};
        }
    } else {
        for (const auto& e : fs::directory_iterator(cfg.dataset_root)) {
            if (!e.is_directory() || !fs::exists(e.path() / "manifest.json")) continue;
            std::ifstream f(e.path() / "manifest.json");
            json m;
            f >> m;
            std::string pid = m.value("participant_id", "");
            std::string cond = m.value("condition", "");
            if (cond == "real")
                dirs[pid].first = e.path().string();
            else if (cond == "imagery")
                dirs[pid].second = e.path().string();
        }
    }

    std::vector<ParticipantData> out;
    for (const auto& [pid, paths] : dirs) {
        if (!cfg.participants.empty() &&
            std::find(cfg.participants.begin(), cfg.participants.end(), pid) ==
                cfg.participants.end())
            continue;
        if (paths.first.empty() || paths.second.empty())
            throw DataError("participant " + pid + " is missing a condition recording");
        ParticipantData pd;
        pd.id = pid;
        pd.real = load_recording(paths.first);
        pd.imagery = load_recording(paths.second);
        out.push_back(std::move(pd));
    }
    if (out.empty()) throw DataError("no participants found under " + cfg.dataset_root);
    for (const auto& pid : cfg.participants) {
        bool found = false;
        for (const auto& pd : out) found = found || pd.id == pid;
        if (!found) throw DataError("requested participant " + pid + " not found");
    }
    return out;
}

static void cap_channels(Recording& rec, int cap) {
    if (cap <= 0 || rec.n_channels() <= cap) return;
    Matrix v(rec.voltages.rows, static_cast<std::size_t>(cap));
    for (std::size_t t = 0; t < v.rows; ++t)
        for (std::size_t c = 0; c < v.cols; ++c) v(t, c) = rec.voltages(t, c);
    rec.voltages = std::move(v);
    rec.padded_channels.resize(static_cast<std::size_t>(cap));
}

// Combined real+imagery stimulus epochs, labels 0/1 by condition.
static EpochSet combined_condition_epochs(const ParticipantData& pd, std::int64_t window,
                                          int channel_cap) {
    Recording real = pd.real, imag = pd.imagery;
    auto harmonized = harmonize_channels({real, imag}, HarmonizeMode::Truncate);
    cap_channels(harmonized[0], channel_cap);
    cap_channels(harmonized[1], channel_cap);
    EpochSet er = extract_stimulus_epochs(harmonized[0], window);
    EpochSet ei = extract_stimulus_epochs(harmonized[1], window);
    EpochSet both = er;
    both.data.insert(both.data.end(), ei.data.begin(), ei.data.end());
    both.labels.insert(both.labels.end(), ei.labels.begin(), ei.labels.end());
    both.meta.source_offsets.insert(both.meta.source_offsets.end(),
                                    ei.meta.source_offsets.begin(), ei.meta.source_offsets.end());
    both.n_epochs += ei.n_epochs;
    both.meta.condition = "both";
    return both;
}

// ---- eda -------------------------------------------------------------------

static SpectralEstimate channel_mean_coherence(const Matrix& a, const Matrix& b, double fs) {
    std::size_t np = 256;
    while (np > 8 && (a.rows < np || (a.rows - np) / (np / 2) + 1 < 8)) np /= 2;
    SpectralEstimate avg;
    for (std::size_t c = 0; c < a.cols; ++c) {
        std::vector<double> x(a.rows), y(b.rows);
        for (std::size_t t = 0; t < a.rows; ++t) {
            x[t] = a(t, c);
            y[t] = b(t, c);
        }
        SpectralEstimate est = coherence(x, y, fs, np);
        if (avg.values.empty()) {
            avg = est;
        } else {
            for (std::size_t i = 0; i < avg.values.size(); ++i) avg.values[i] += est.values[i];
        }
    }
    for (double& v : avg.values) v /= static_cast<double>(a.cols);
    return avg;
}

static Matrix epoch_mean_signal(const EpochSet& es) {
    Matrix m(es.n_time, es.n_channels);
    for (std::size_t e = 0; e < es.n_epochs; ++e)
        for (std::size_t t = 0; t < es.n_time; ++t)
            for (std::size_t c = 0; c < es.n_channels; ++c) m(t, c) += es.at(e, t, c);
    for (double& v : m.data) v /= static_cast<double>(es.n_epochs);
    return m;
}

int cmd_eda(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    auto participants = load_participants(cfg);

    std::vector<CohortStatsRow> stats;
    for (const auto& pd : participants) {
        auto harmonized = harmonize_channels({pd.real, pd.imagery}, HarmonizeMode::Truncate);
        EpochSet er = extract_stimulus_epochs(harmonized[0], cfg.stim_window);
        EpochSet ei = extract_stimulus_epochs(harmonized[1], cfg.stim_window);

        Matrix mr = epoch_mean_signal(er), mi = epoch_mean_signal(ei);
        double fs = static_cast<double>(pd.real.srate);

        // PSD of the condition-mean signal, averaged over channels
        auto emit_psd = [&](const Matrix& m, const std::string& tag, const char* color) {
            SpectralEstimate avg;
            std::size_t np = std::min<std::size_t>(256, m.rows);
            for (std::size_t c = 0; c < m.cols; ++c) {
                std::vector<double> x(m.rows);
                for (std::size_t t = 0; t < m.rows; ++t) x[t] = m(t, c);
                SpectralEstimate est = psd_welch(x, fs, np, 0.5);
                if (avg.values.empty())
                    avg = est;
                else
                    for (std::size_t i = 0; i < avg.values.size(); ++i)
                        avg.values[i] += est.values[i];
            }
            for (double& v : avg.values) v /= static_cast<double>(m.cols);
            std::string base = cfg.out_dir + "/psd_" + pd.id + "_" + tag;
            export_spectral_csv(avg, base + ".csv");
            SvgPlot plot(720, 480, "PSD " + pd.id + " " + tag);
            plot.add_line(avg.freqs_hz, avg.values, color);
            plot.write(base + ".svg");
        };
        emit_psd(mr, "real", "#1f77b4");
        emit_psd(mi, "imagery", "#d62728");

        SpectralEstimate coh = channel_mean_coherence(mr, mi, fs);
        export_spectral_csv(coh, cfg.out_dir + "/coherence_" + pd.id + ".csv");
        SvgPlot cplot(720, 480, "Coherence real vs imagery " + pd.id);
        cplot.add_line(coh.freqs_hz, coh.values, "#2ca02c");
        cplot.write(cfg.out_dir + "/coherence_" + pd.id + ".svg");

        CohortStatsRow row = bootstrap_cohort_stats(er, ei, cfg.n_boot, cfg.seed);
        row.participant_id = pd.id;
        stats.push_back(row);
    }
    export_cohort_stats_csv(stats, cfg.out_dir + "/table2.csv");

    json metrics;
    for (const auto& r : stats) metrics["abs_mean_diff"][r.participant_id] = r.abs_mean_diff;
    write_run_report(cfg, "eda", timer.seconds(), metrics);
    return 0;
}

// ---- umap-knn --------------------------------------------------------------

static void split_features(const EpochSet& epochs, double ratio, std::uint64_t seed,
                           Matrix& train_X, Matrix& test_X, std::vector<int>& train_y,
                           std::vector<int>& test_y) {
    SplitPair sp = split_train_test(epochs, ratio, seed);
    train_X = epoch_features_mean(sp.train);
    test_X = epoch_features_mean(sp.test);
    train_y = sp.train.labels;
    test_y = sp.test.labels;
}

static std::vector<ParticipantFeatures> build_feature_sets(
    const std::vector<ParticipantData>& participants, const ExperimentConfig& cfg) {
    std::vector<ParticipantFeatures> sets;
    for (const auto& pd : participants) {
        EpochSet raw = combined_condition_epochs(pd, cfg.stim_window, cfg.channel_cap_umap);
        EpochSet unproc = normalize_unit(raw);
        EpochSet proc = normalize_unit(
            power_envelope_epochs(raw, static_cast<double>(pd.real.srate)));

        ParticipantFeatures pf;
        pf.participant_id = pd.id;
        split_features(proc, cfg.split_ratio, cfg.seed, pf.processed_train, pf.processed_test,
                       pf.train_labels_proc, pf.test_labels_proc);
        split_features(unproc, cfg.split_ratio, cfg.seed, pf.unprocessed_train,
                       pf.unprocessed_test, pf.train_labels_unproc, pf.test_labels_unproc);
        sets.push_back(std::move(pf));
    }
    return sets;
}

static void write_embedding_svg(const Matrix& train, const std::vector<int>& train_y,
                                const Matrix& test, const std::vector<int>& test_y,
                                const std::string& title, const std::string& path) {
    SvgPlot plot(600, 600, title);
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
    for (int lbl = 0; lbl < 3; ++lbl) {
        std::vector<double> xs, ys, txs, tys;
        for (std::size_t i = 0; i < train.rows; ++i)
            if (train_y[i] == lbl) {
                xs.push_back(train(i, 0));
                ys.push_back(train(i, 1));
            }
        for (std::size_t i = 0; i < test.rows; ++i)
            if (test_y[i] == lbl) {
                txs.push_back(test(i, 0));
                tys.push_back(test(i, 1));
            }
        if (!xs.empty()) plot.add_scatter(xs, ys, colors[lbl], 0);       // train: circles
        if (!txs.empty()) plot.add_scatter(txs, tys, colors[lbl], 2);    // test: triangles
    }
    plot.write(path);
}

int cmd_umap_knn(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    auto participants = load_participants(cfg);
    auto sets = build_feature_sets(participants, cfg);

    std::vector<ParticipantEmbeddings> embeddings;
    EvaluationTable table = evaluate_participants(sets, cfg.umap, cfg.knn_k, cfg.seed, &embeddings);
    export_table1_csv(table, cfg.out_dir + "/table1.csv");

    for (std::size_t p = 0; p < sets.size(); ++p) {
        const auto& pf = sets[p];
        const auto& pe = embeddings[p];
        if (cfg.variant != "unprocessed")
            write_embedding_svg(pe.proc_train, pf.train_labels_proc, pe.proc_test,
                                pf.test_labels_proc, "UMAP processed " + pf.participant_id,
                                cfg.out_dir + "/embedding_" + pf.participant_id + "_processed.svg");
        if (cfg.variant != "processed")
            write_embedding_svg(pe.unproc_train, pf.train_labels_unproc, pe.unproc_test,
                                pf.test_labels_unproc, "UMAP unprocessed " + pf.participant_id,
                                cfg.out_dir + "/embedding_" + pf.participant_id +
                                    "_unprocessed.svg");
    }

    json metrics;
    metrics["preprocessed_test_avg"] = table.averages.processed_test;
    metrics["unprocessed_test_avg"] = table.averages.unprocessed_test;
    write_run_report(cfg, "umap-knn", timer.seconds(), metrics);
    return 0;
}

// ---- train / finetune ------------------------------------------------------

static nn::LabeledTensor dl_tensor_for_task(const ParticipantData& pd, const ExperimentConfig& cfg,
                                            int* n_classes_out) {
    if (cfg.dl_task == "3-class") {
        Recording rec = pd.real;
        cap_channels(rec, cfg.channel_cap_dl);
        EpochSet es = normalize_mean(extract_interval_epochs(rec, cfg.interval_window));
        *n_classes_out = 3;
        return nn::epochs_to_tensor(es, 3);
    }
    EpochSet es = normalize_mean(
        combined_condition_epochs(pd, cfg.stim_window, cfg.channel_cap_dl));
    *n_classes_out = 2;
    return nn::epochs_to_tensor(es, 2);
}

static void split_tensor(const nn::LabeledTensor& all, double ratio, std::uint64_t seed,
                         int n_classes, nn::LabeledTensor& train, nn::LabeledTensor& test) {
    // reuse the dataset split for determinism
    EpochSet dummy;
    dummy.n_epochs = static_cast<std::size_t>(all.x.shape[0]);
    dummy.n_time = 1;
    dummy.n_channels = 1;
    dummy.data.assign(dummy.n_epochs, 0.0);
    dummy.labels = all.labels;
    SplitPair sp = split_train_test(dummy, ratio, seed);

    auto take = [&](const std::vector<std::size_t>& idx, nn::LabeledTensor& out) {
        std::vector<int> shape = all.x.shape;
        shape[0] = static_cast<int>(idx.size());
        out.x = nn::TensorF(shape);
        std::int64_t stride = all.x.size() / all.x.shape[0];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(all.x.v.begin() + static_cast<std::ptrdiff_t>(
                                              static_cast<std::int64_t>(idx[i]) * stride),
                        stride,
                        out.x.v.begin() + static_cast<std::ptrdiff_t>(
                                              static_cast<std::int64_t>(i) * stride));
            out.labels.push_back(all.labels[idx[i]]);
        }
        out.one_hot = one_hot(out.labels, n_classes);
    };
    take(sp.train_indices, train);
    take(sp.test_indices, test);
}

int cmd_train(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    auto participants = load_participants(cfg);
    nn::ArchFamily family = cfg.arch == "cnn" ? nn::ArchFamily::CNN : nn::ArchFamily::CNNLSTM;

    json metrics;
    for (const auto& pd : participants) {
        int n_classes = 0;
        nn::LabeledTensor all = dl_tensor_for_task(pd, cfg, &n_classes);
        nn::LabeledTensor train_set, test_set;
        split_tensor(all, cfg.split_ratio, cfg.seed, n_classes, train_set, test_set);

        nn::SearchSpace space;
        space.n_trials = cfg.tuner_budget;
        nn::SearchResult search = nn::hyper_search(space, family, train_set, test_set, n_classes,
                                                   cfg.dl_epochs, cfg.seed);
        nn::export_leaderboard_json(search,
                                    cfg.out_dir + "/leaderboard_" + pd.id + ".json");

        // retrain the winning configuration and persist it
        nn::ModelF model;
        model.specs = nn::build_architecture(search.best.arch, all.x.shape[1], all.x.shape[2],
                                             n_classes);
        model.build({all.x.shape[1], all.x.shape[2], 1}, n_classes, search.best.cfg.seed);
        nn::TrainConfig tc = search.best.cfg;
        tc.batch_size = cfg.batch_size;
        try {
            nn::train(model, train_set, test_set, tc);
        } catch (const std::runtime_error& e) {
            throw NumericError(e.what());
        }
        nn::save_model(model, cfg.out_dir + "/model_" + pd.id + ".ecnn");
        nn::export_history_csv(model, cfg.out_dir + "/history_" + pd.id + ".csv");
        metrics["best_test_accuracy"][pd.id] = search.best.test_accuracy;
    }
    write_run_report(cfg, "train", timer.seconds(), metrics);
    return 0;
}

int cmd_finetune(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    if (cfg.finetune_source.empty() || cfg.finetune_target.empty())
        throw ConfigError("finetune requires finetune_source and finetune_target");
    if (!fs::exists(cfg.finetune_source))
        throw DataError("finetune source model not found: " + cfg.finetune_source);

    nn::ModelF model = nn::load_model(cfg.finetune_source);

    ExperimentConfig target_cfg = cfg;
    target_cfg.participants = {cfg.finetune_target};
    auto participants = load_participants(target_cfg);
    int n_classes = 0;
    nn::LabeledTensor all = dl_tensor_for_task(participants[0], cfg, &n_classes);
    if (n_classes != model.n_classes)
        throw DataError("task head size does not match source model");
    if (all.x.shape[1] != model.input_shape[0] || all.x.shape[2] != model.input_shape[1])
        throw DataError("target data shape does not match source model input");

    nn::LabeledTensor train_set, test_set;
    split_tensor(all, cfg.split_ratio, cfg.seed, n_classes, train_set, test_set);

    std::ifstream sf(cfg.finetune_source, std::ios::binary);
    std::string src_bytes((std::istreambuf_iterator<char>(sf)), std::istreambuf_iterator<char>());
    char hash_tag[16];
    std::snprintf(hash_tag, sizeof(hash_tag), "%08x", nn::crc32(src_bytes.data(), src_bytes.size()));

    nn::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.dl_epochs;
    tc.seed = cfg.seed;
    try {
        nn::fine_tune(model, train_set, test_set, tc, std::string("crc32:") + hash_tag);
    } catch (const std::runtime_error& e) {
        throw NumericError(e.what());
    }

    nn::EvalResult ev = nn::evaluate(model, test_set);
    nn::save_model(model, cfg.out_dir + "/model_finetuned_" + cfg.finetune_target + ".ecnn");
    nn::export_history_csv(model, cfg.out_dir + "/history_finetuned_" + cfg.finetune_target + ".csv");

    json metrics;
    metrics["test_accuracy"] = ev.accuracy;
    metrics["test_loss"] = ev.loss;
    metrics["source_model_crc32"] = hash_tag;
    write_run_report(cfg, "finetune", timer.seconds(), metrics);
    return 0;
}

// ---- screen ----------------------------------------------------------------

int cmd_screen(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    auto participants = load_participants(cfg);
    if (participants.size() < 3) throw DataError("screening: n ≥ 3 required");

    auto sets = build_feature_sets(participants, cfg);
    EvaluationTable table = evaluate_participants(sets, cfg.umap, cfg.knn_k, cfg.seed);

    nn::ArchFamily family = cfg.arch == "cnn" ? nn::ArchFamily::CNN : nn::ArchFamily::CNNLSTM;
    ExperimentConfig dl_cfg = cfg;
    dl_cfg.dl_task = "2-class";

    std::vector<ScreeningRow> rows;
    for (std::size_t p = 0; p < participants.size(); ++p) {
        int n_classes = 0;
        nn::LabeledTensor all = dl_tensor_for_task(participants[p], dl_cfg, &n_classes);
        nn::LabeledTensor train_set, test_set;
        split_tensor(all, cfg.split_ratio, cfg.seed, n_classes, train_set, test_set);
        nn::SearchSpace space;
        space.n_trials = cfg.tuner_budget;
        nn::SearchResult search = nn::hyper_search(space, family, train_set, test_set, n_classes,
                                                   cfg.dl_epochs, cfg.seed);
        ScreeningRow row;
        row.participant_id = participants[p].id;
        row.knn_test_score = table.rows[p].processed_test;
        row.dl_test_accuracy = search.best.test_accuracy;
        row.dl_architecture = cfg.arch;
        rows.push_back(row);
    }

    ScreeningReport report = screening_correlation(rows, cfg.screen_threshold);
    export_screening_json(report, cfg.out_dir + "/screening.json");

    SvgPlot plot(600, 600, "KNN screen vs DL accuracy");
    std::vector<double> xs, ys;
    for (const auto& r : report.rows) {
        xs.push_back(r.knn_test_score);
        ys.push_back(r.dl_test_accuracy);
    }
    plot.add_scatter(xs, ys, "#1f77b4", 0);
    plot.write(cfg.out_dir + "/screening.svg");

    json metrics;
    metrics["spearman_rho"] = report.spearman_rho;
    write_run_report(cfg, "screen", timer.seconds(), metrics);
    return 0;
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    try {
        sc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    auto cohort = generate_cohort(sc);
    std::string root = cfg.dataset_root.empty() ? cfg.out_dir + "/synthetic" : cfg.dataset_root;
    write_cohort(cohort, root);
    json metrics;
    metrics["participants"] = cohort.size();
    metrics["root"] = root;
    write_run_report(cfg, "synth", timer.seconds(), metrics);
    return 0;
}

}  // namespace ecog
