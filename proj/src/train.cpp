#include "ecog/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace ecog::nn {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::MaxPool2D: return "maxpool2d";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
        case LayerKind::LSTM: return "lstm";
        case LayerKind::Softmax: return "softmax";
        case LayerKind::BatchNorm: return "batchnorm";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
    for (LayerKind k : {LayerKind::Conv2D, LayerKind::MaxPool2D, LayerKind::ReLU,
                        LayerKind::Dropout, LayerKind::Flatten, LayerKind::Dense, LayerKind::LSTM,
                        LayerKind::Softmax, LayerKind::BatchNorm})
        if (layer_kind_name(k) == s) return k;
    throw std::runtime_error("unknown layer kind '" + s + "'");
}

LabeledTensor epochs_to_tensor(const EpochSet& epochs, int n_classes, int channel_cap) {
    int ch = static_cast<int>(epochs.n_channels);
    if (channel_cap > 0) ch = std::min(ch, channel_cap);
    LabeledTensor out;
    out.x = TensorF({static_cast<int>(epochs.n_epochs), static_cast<int>(epochs.n_time), ch, 1});
    std::size_t o = 0;
    for (std::size_t e = 0; e < epochs.n_epochs; ++e)
        for (std::size_t t = 0; t < epochs.n_time; ++t)
            for (int c = 0; c < ch; ++c)
                out.x.v[o++] = static_cast<float>(epochs.at(e, t, static_cast<std::size_t>(c)));
    out.labels = epochs.labels;
    out.one_hot = ecog::one_hot(epochs.labels, n_classes);
    return out;
}

static TensorF slice_batch(const TensorF& x, const std::vector<std::size_t>& idx,
                           std::size_t begin, std::size_t end) {
    std::vector<int> shape = x.shape;
    shape[0] = static_cast<int>(end - begin);
    TensorF out(shape);
    std::int64_t stride = x.size() / x.shape[0];
    for (std::size_t i = begin; i < end; ++i)
        std::copy_n(x.v.begin() + static_cast<std::ptrdiff_t>(idx[i] * static_cast<std::size_t>(stride)),
                    stride,
                    out.v.begin() + static_cast<std::ptrdiff_t>((i - begin) * static_cast<std::size_t>(stride)));
    return out;
}

EvalResult evaluate(ModelF& model, const LabeledTensor& test) {
    if (test.x.shape[0] == 0) throw std::runtime_error("evaluate: empty test set");
    TensorF probs = model.forward(test.x, false);
    TensorF targets({test.x.shape[0], model.n_classes});
    for (std::size_t i = 0; i < targets.v.size(); ++i)
        targets.v[i] = static_cast<float>(test.one_hot.data[i]);
    EvalResult r;
    r.loss = cross_entropy(probs, targets);
    r.accuracy = accuracy(probs, test.labels);
    return r;
}

namespace {

struct AdamState {
    std::vector<std::vector<float>> m, v;
    int t = 0;
};

void optimizer_step(ModelF& model, AdamState& state, const TrainConfig& cfg) {
    auto params = model.parameters();
    auto grads = model.gradients();
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->v.size(), 0.0f);
            state.v.emplace_back(p->v.size(), 0.0f);
        }
    }
    if (cfg.optimizer == Optimizer::SGD) {
        for (std::size_t i = 0; i < params.size(); ++i)
            for (std::size_t j = 0; j < params[i]->v.size(); ++j)
                params[i]->v[j] -= static_cast<float>(cfg.learning_rate) * grads[i]->v[j];
        return;
    }
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    ++state.t;
    float corr1 = 1.0f - std::pow(b1, static_cast<float>(state.t));
    float corr2 = 1.0f - std::pow(b2, static_cast<float>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i]->v.size(); ++j) {
            float g = grads[i]->v[j];
            state.m[i][j] = b1 * state.m[i][j] + (1.0f - b1) * g;
            state.v[i][j] = b2 * state.v[i][j] + (1.0f - b2) * g * g;
            float mh = state.m[i][j] / corr1;
            float vh = state.v[i][j] / corr2;
            params[i]->v[j] -= static_cast<float>(cfg.learning_rate) * mh /
                               (std::sqrt(vh) + eps);
        }
}

}  // namespace

void train(ModelF& model, const LabeledTensor& train_set, const LabeledTensor& test_set,
           const TrainConfig& cfg) {
    const int n = train_set.x.shape[0];
    Rng shuffle_rng(cfg.seed, 0x5470FFULL);
    Rng dropout_rng(cfg.seed, 0xD80D80ULL);
    AdamState state;
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    double best_test = -1.0;
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(idx);
        double loss_sum = 0.0;
        int correct = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            std::size_t end = static_cast<std::size_t>(std::min(n, start + cfg.batch_size));
            TensorF xb = slice_batch(train_set.x, idx, static_cast<std::size_t>(start), end);
            int bn = xb.shape[0];
            TensorF yb({bn, model.n_classes});
            std::vector<int> lb(static_cast<std::size_t>(bn));
            for (int i = 0; i < bn; ++i) {
                std::size_t src = idx[static_cast<std::size_t>(start) + static_cast<std::size_t>(i)];
                lb[static_cast<std::size_t>(i)] = train_set.labels[src];
                for (int c = 0; c < model.n_classes; ++c)
                    yb.v[static_cast<std::size_t>(i * model.n_classes + c)] =
                        static_cast<float>(train_set.one_hot(src, static_cast<std::size_t>(c)));
            }
            TensorF probs = model.forward(xb, true, &dropout_rng);
            TensorF dprobs;
            double loss = cross_entropy(probs, yb, &dprobs);
            if (!std::isfinite(loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            loss_sum += loss * bn;
            correct += static_cast<int>(std::lround(accuracy(probs, lb) * bn));
            model.backward(dprobs);
            optimizer_step(model, state, cfg);
        }
        EpochStats st;
        st.epoch = static_cast<int>(model.history.size());
        st.train_loss = loss_sum / n;
        st.train_acc = static_cast<double>(correct) / n;
        st.test_acc = test_set.x.shape[0] > 0 ? evaluate(model, test_set).accuracy : 0.0;
        model.history.push_back(st);
        if (cfg.early_stop_patience > 0 && test_set.x.shape[0] > 0) {
            if (st.test_acc > best_test) {
                best_test = st.test_acc;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                break;
            }
        }
    }
}

void fine_tune(ModelF& model, const LabeledTensor& train_set, const LabeledTensor& test_set,
               TrainConfig cfg, const std::string& source_tag) {
    model.provenance = source_tag;
    if (cfg.epochs <= 0) return;  // zero-epoch fine-tune leaves parameters untouched
    train(model, train_set, test_set, cfg);
}

std::vector<LayerSpec> build_architecture(const ArchParams& p, int in_h, int in_w, int n_classes) {
    auto clampk = [](int k, int dim) { return std::max(1, std::min(k, dim)); };
    std::vector<LayerSpec> specs;
    specs.push_back(LayerSpec::conv2d(p.conv1_filters, clampk(p.conv1_kh, in_h),
                                      clampk(p.conv1_kw, in_w), 1, Padding::Same));
    if (p.batchnorm) specs.push_back(LayerSpec::batchnorm());
    specs.push_back(LayerSpec::relu());
    int h = in_h, w = in_w;
    int ph = clampk(p.pool_h, h), pw = clampk(p.pool_w, w);
    specs.push_back(LayerSpec::maxpool(ph, pw));
    h /= ph;
    w /= pw;
    specs.push_back(LayerSpec::conv2d(p.conv2_filters, clampk(p.conv2_kh, h), clampk(p.conv2_kw, w),
                                      1, Padding::Same));
    specs.push_back(LayerSpec::relu());
    ph = clampk(p.pool_h, h);
    pw = clampk(p.pool_w, w);
    specs.push_back(LayerSpec::maxpool(ph, pw));
    if (p.family == ArchFamily::CNN) {
        specs.push_back(LayerSpec::flatten());
        specs.push_back(LayerSpec::dropout(p.dropout));
        specs.push_back(LayerSpec::dense(p.dense_units));
        specs.push_back(LayerSpec::relu());
        specs.push_back(LayerSpec::dense(n_classes));
    } else {
        // conv trunk output (N, T, W, C): LSTM folds W*C per time step
        specs.push_back(LayerSpec::dropout(p.dropout));
        specs.push_back(LayerSpec::lstm(p.lstm_units));
        specs.push_back(LayerSpec::dense(n_classes));
    }
    specs.push_back(LayerSpec::softmax());
    return specs;
}

SearchResult hyper_search(const SearchSpace& space, ArchFamily family,
                          const LabeledTensor& train_set, const LabeledTensor& test_set,
                          int n_classes, int base_epochs, std::uint64_t seed) {
    if (space.n_trials <= 0) throw std::runtime_error("hyper_search: zero-trial budget");
    const int in_h = train_set.x.shape[1], in_w = train_set.x.shape[2];
    std::vector<TrialResult> results(static_cast<std::size_t>(space.n_trials));

#pragma omp parallel for schedule(dynamic)
    for (int trial = 0; trial < space.n_trials; ++trial) {
        Rng rng(seed, 0x7121A1ULL + static_cast<std::uint64_t>(trial));
        ArchParams arch;
        arch.family = family;
        arch.conv1_filters = space.filters[rng.below(space.filters.size())];
        arch.conv2_filters = space.filters[rng.below(space.filters.size())];
        arch.conv1_kh = space.kernels[rng.below(space.kernels.size())];
        arch.conv1_kw = std::min(arch.conv1_kh, in_w);
        arch.conv2_kh = space.kernels[rng.below(space.kernels.size())];
        arch.conv2_kw = std::min(arch.conv2_kh, in_w);
        arch.lstm_units = space.lstm_units[rng.below(space.lstm_units.size())];
        arch.dropout = rng.uniform(space.dropout_lo, space.dropout_hi);

        TrainConfig cfg;
        cfg.learning_rate =
            std::exp(rng.uniform(std::log(space.lr_lo), std::log(space.lr_hi)));
        cfg.epochs = base_epochs;
        cfg.seed = seed + static_cast<std::uint64_t>(trial) * 1000003ULL;

        TrialResult tr;
        tr.trial = trial;
        tr.arch = arch;
        tr.cfg = cfg;
        try {
            ModelF model;
            model.specs = build_architecture(arch, in_h, in_w, n_classes);
            model.build({in_h, in_w, 1}, n_classes, cfg.seed);
            train(model, train_set, test_set, cfg);
            EvalResult ev = evaluate(model, test_set);
            tr.test_accuracy = ev.accuracy;
            tr.test_loss = ev.loss;
        } catch (const std::exception&) {
            tr.test_accuracy = 0.0;
            tr.test_loss = 1e9;
        }
        results[static_cast<std::size_t>(trial)] = tr;
    }

    SearchResult out;
    out.leaderboard = results;
    std::sort(out.leaderboard.begin(), out.leaderboard.end(),
              [](const TrialResult& a, const TrialResult& b) {
                  if (a.test_accuracy != b.test_accuracy) return a.test_accuracy > b.test_accuracy;
                  if (a.test_loss != b.test_loss) return a.test_loss < b.test_loss;
                  return a.trial < b.trial;
              });
    out.best = out.leaderboard.front();
    return out;
}

static json arch_to_json(const ArchParams& a) {
    return json{{"family", a.family == ArchFamily::CNN ? "cnn" : "cnn-lstm"},
                {"conv1_filters", a.conv1_filters},
                {"conv1_kernel", {a.conv1_kh, a.conv1_kw}},
                {"conv2_filters", a.conv2_filters},
                {"conv2_kernel", {a.conv2_kh, a.conv2_kw}},
                {"pool", {a.pool_h, a.pool_w}},
                {"dense_units", a.dense_units},
                {"lstm_units", a.lstm_units},
                {"dropout", a.dropout},
                {"batchnorm", a.batchnorm}};
}

void export_leaderboard_json(const SearchResult& result, const std::string& path) {
    json j = json::array();
    for (const auto& tr : result.leaderboard)
        j.push_back({{"trial", tr.trial},
                     {"test_accuracy", tr.test_accuracy},
                     {"test_loss", tr.test_loss},
                     {"learning_rate", tr.cfg.learning_rate},
                     {"epochs", tr.cfg.epochs},
                     {"seed", tr.cfg.seed},
                     {"architecture", arch_to_json(tr.arch)}});
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

void export_history_csv(const ModelF& model, const std::string& path) {
    std::ofstream f(path);
    f << "epoch,train_loss,train_acc,test_acc\n";
    for (const auto& st : model.history) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", st.epoch, st.train_loss,
                      st.train_acc, st.test_acc);
        f << buf;
    }
}

// ---- serialization ---------------------------------------------------------

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
    static std::uint32_t table[256];
    static bool have_table = false;
    if (!have_table) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        have_table = true;
    }
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

static json spec_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = layer_kind_name(s.kind);
    j["filters"] = s.filters;
    j["kernel_h"] = s.kernel_h;
    j["kernel_w"] = s.kernel_w;
    j["stride"] = s.stride;
    j["padding"] = s.padding == Padding::Valid ? "valid" : "same";
    j["pool_h"] = s.pool_h;
    j["pool_w"] = s.pool_w;
    j["rate"] = s.rate;
    j["units"] = s.units;
    return j;
}

static LayerSpec spec_from_json(const json& j) {
    LayerSpec s;
    s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    s.filters = j.at("filters").get<int>();
    s.kernel_h = j.at("kernel_h").get<int>();
    s.kernel_w = j.at("kernel_w").get<int>();
    s.stride = j.at("stride").get<int>();
    s.padding = j.at("padding").get<std::string>() == "valid" ? Padding::Valid : Padding::Same;
    s.pool_h = j.at("pool_h").get<int>();
    s.pool_w = j.at("pool_w").get<int>();
    s.rate = j.at("rate").get<double>();
    s.units = j.at("units").get<int>();
    return s;
}

void save_model(const ModelF& model, const std::string& path) {
    json header;
    header["version"] = 1;
    header["n_classes"] = model.n_classes;
    header["seed"] = model.seed;
    header["input_shape"] = model.input_shape;
    header["provenance"] = model.provenance;
    header["layers"] = json::array();
    for (const auto& s : model.specs) header["layers"].push_back(spec_to_json(s));
    std::string hs = header.dump();

    std::string body;
    body.append("ECNN1", 5);
    std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    body.append(reinterpret_cast<const char*>(&hlen), 4);
    body.append(hs);
    ModelF& m = const_cast<ModelF&>(model);
    for (auto* p : m.parameters())
        body.append(reinterpret_cast<const char*>(p->v.data()), p->v.size() * sizeof(float));
    std::uint32_t crc = crc32(body.data(), body.size());
    body.append(reinterpret_cast<const char*>(&crc), 4);

    std::ofstream f(path, std::ios::binary);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
}

ModelF load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open model file " + path);
    std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (body.size() < 13 || body.compare(0, 5, "ECNN1") != 0)
        throw std::runtime_error("not an ECNN1 model file");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, body.data() + body.size() - 4, 4);
    if (crc32(body.data(), body.size() - 4) != stored_crc)
        throw std::runtime_error("model file checksum failure");
    std::uint32_t hlen;
    std::memcpy(&hlen, body.data() + 5, 4);
    json header = json::parse(body.substr(9, hlen));
    if (header.at("version").get<int>() != 1) throw std::runtime_error("model version mismatch");

    ModelF model;
    for (const auto& lj : header.at("layers")) model.specs.push_back(spec_from_json(lj));
    model.provenance = header.value("provenance", "");
    model.build(header.at("input_shape").get<std::vector<int>>(),
                header.at("n_classes").get<int>(), header.at("seed").get<std::uint64_t>());
    std::size_t off = 9 + hlen;
    for (auto* p : model.parameters()) {
        std::size_t bytes = p->v.size() * sizeof(float);
        if (off + bytes > body.size() - 4) throw std::runtime_error("model file truncated");
        std::memcpy(p->v.data(), body.data() + off, bytes);
        off += bytes;
    }
    if (off != body.size() - 4) throw std::runtime_error("model file has trailing bytes");
    return model;
}

}  // namespace ecog::nn
