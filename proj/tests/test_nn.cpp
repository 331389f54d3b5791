#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ecog/nn.hpp"
#include "ecog/train.hpp"

using namespace ecog;
using nn::LayerSpec;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

using ModelD = nn::Model<double>;
using TensorD = Tensor<double>;

// Loss of a built double-precision model on one fixed batch.
double model_loss(ModelD& model, const TensorD& x, const TensorD& y, bool train_mode) {
    TensorD probs = model.forward(x, train_mode);
    return nn::cross_entropy(probs, y, static_cast<TensorD*>(nullptr));
}

struct GradCheckResult {
    double max_rel = 0.0;
    int checked = 0;
};

// Central finite differences against analytic gradients for both parameters
// and the input, on a model ending in n_classes logits + softmax. BatchNorm
// needs train_mode: its backward implements the batch-statistics gradient.
GradCheckResult grad_check(ModelD& model, TensorD x, const TensorD& y, bool train_mode = false) {
    TensorD probs = model.forward(x, train_mode);
    TensorD dprobs;
    nn::cross_entropy(probs, y, &dprobs);
    TensorD dx = model.backward(dprobs);
    auto params = model.parameters();
    auto grads = model.gradients();

    const double eps = 1e-6;
    GradCheckResult res;
    auto probe = [&](double* value, double analytic) {
        double saved = *value;
        *value = saved + eps;
        double lp = model_loss(model, x, y, train_mode);
        *value = saved - eps;
        double lm = model_loss(model, x, y, train_mode);
        *value = saved;
        double fd = (lp - lm) / (2.0 * eps);
        double rel = std::abs(fd - analytic) / std::max({1e-6, std::abs(fd), std::abs(analytic)});
        res.max_rel = std::max(res.max_rel, rel);
        ++res.checked;
    };

    for (std::size_t p = 0; p < params.size(); ++p) {
        std::size_t n = params[p]->v.size();
        std::size_t stride = std::max<std::size_t>(1, n / 12);
        for (std::size_t i = 0; i < n; i += stride)
            probe(&params[p]->v[i], grads[p]->v[i]);
    }
    std::size_t n = x.v.size();
    std::size_t stride = std::max<std::size_t>(1, n / 12);
    for (std::size_t i = 0; i < n; i += stride) probe(&x.v[i], dx.v[i]);
    return res;
}

// Random batch with labels; values are shifted away from 0 so ReLU/maxpool
// kinks do not sit on the finite-difference step.
void random_batch(const std::vector<int>& shape_no_batch, int batch, int n_classes,
                  std::uint64_t seed, TensorD& x, TensorD& y) {
    std::vector<int> s = shape_no_batch;
    s.insert(s.begin(), batch);
    x = TensorD(s);
    Rng rng(seed);
    for (double& v : x.v) {
        v = rng.normal();
        if (std::abs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
    }
    y = TensorD({batch, n_classes});
    for (int i = 0; i < batch; ++i)
        y.v[static_cast<std::size_t>(i) * n_classes +
            rng.below(static_cast<std::uint64_t>(n_classes))] = 1.0;
}

void check_layer_stack(const std::vector<LayerSpec>& head,
                       const std::vector<int>& in_shape_no_batch, int batch, bool needs_flatten,
                       std::uint64_t seed, bool train_mode = false) {
    const int n_classes = 3;
    ModelD model;
    model.specs = head;
    if (needs_flatten) model.specs.push_back(LayerSpec::flatten());
    model.specs.push_back(LayerSpec::dense(n_classes));
    model.specs.push_back(LayerSpec::softmax());
    model.build(in_shape_no_batch, n_classes, seed);

    TensorD x, y;
    random_batch(in_shape_no_batch, batch, n_classes, seed * 7 + 1, x, y);
    GradCheckResult res = grad_check(model, x, y, train_mode);
    CHECK(res.checked > 0);
    CHECK(res.max_rel <= 1e-4);
}

}  // namespace

TEST_CASE("gradient check: Conv2D over 20 random shapes") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        int h = 4 + static_cast<int>(rng.below(5));
        int w = 4 + static_cast<int>(rng.below(5));
        int cin = 1 + static_cast<int>(rng.below(3));
        int f = 1 + static_cast<int>(rng.below(4));
        int kh = 2 + static_cast<int>(rng.below(2));
        int kw = 2 + static_cast<int>(rng.below(2));
        auto pad = rng.below(2) ? nn::Padding::Same : nn::Padding::Valid;
        int batch = 1 + static_cast<int>(rng.below(2));
        check_layer_stack({LayerSpec::conv2d(f, kh, kw, 1, pad)}, {h, w, cin}, batch,
                          true, 1000 + static_cast<std::uint64_t>(trial));
    }
}

TEST_CASE("gradient check: MaxPool over 20 random shapes") {
    Rng rng(102);
    for (int trial = 0; trial < 20; ++trial) {
        int ph = 2 + static_cast<int>(rng.below(2));
        int pw = 2 + static_cast<int>(rng.below(2));
        int h = ph * (1 + static_cast<int>(rng.below(3)));
        int w = pw * (1 + static_cast<int>(rng.below(3)));
        int c = 1 + static_cast<int>(rng.below(3));
        int batch = 1 + static_cast<int>(rng.below(2));
        check_layer_stack({LayerSpec::maxpool(ph, pw)}, {h, w, c}, batch, true,
                          2000 + static_cast<std::uint64_t>(trial));
    }
}

TEST_CASE("gradient check: Dense and ReLU over 20 random shapes") {
    Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
        int f = 2 + static_cast<int>(rng.below(10));
        int u = 2 + static_cast<int>(rng.below(8));
        int batch = 1 + static_cast<int>(rng.below(3));
        check_layer_stack({LayerSpec::dense(u), LayerSpec::relu()}, {f}, batch, false,
                          3000 + static_cast<std::uint64_t>(trial));
    }
}

TEST_CASE("gradient check: LSTM over 20 random shapes") {
    Rng rng(104);
    for (int trial = 0; trial < 20; ++trial) {
        int steps = 2 + static_cast<int>(rng.below(4));
        int f = 1 + static_cast<int>(rng.below(4));
        int u = 1 + static_cast<int>(rng.below(4));
        int batch = 1 + static_cast<int>(rng.below(2));
        // rank-3 (N,T,F) and rank-4 (N,T,W,C) input paths
        if (trial % 2 == 0) {
            check_layer_stack({LayerSpec::lstm(u)}, {steps, f}, batch, false,
                              4000 + static_cast<std::uint64_t>(trial));
        } else {
            check_layer_stack({LayerSpec::lstm(u)}, {steps, f, 2}, batch, false,
                              4000 + static_cast<std::uint64_t>(trial));
        }
    }
}

TEST_CASE("gradient check: Softmax + cross-entropy over 20 random shapes") {
    Rng rng(105);
    for (int trial = 0; trial < 20; ++trial) {
        int f = 2 + static_cast<int>(rng.below(8));
        int batch = 1 + static_cast<int>(rng.below(4));
        check_layer_stack({}, {f}, batch, false, 5000 + static_cast<std::uint64_t>(trial));
    }
}

TEST_CASE("gradient check: Dropout in eval mode is a transparent identity") {
    Rng rng(106);
    for (int trial = 0; trial < 20; ++trial) {
        int f = 2 + static_cast<int>(rng.below(8));
        int batch = 1 + static_cast<int>(rng.below(3));
        check_layer_stack({LayerSpec::dropout(0.5)}, {f}, batch, false,
                          6000 + static_cast<std::uint64_t>(trial));
    }
}

TEST_CASE("gradient check: BatchNorm with batch statistics") {
    Rng rng(107);
    for (int trial = 0; trial < 10; ++trial) {
        int f = 2 + static_cast<int>(rng.below(6));
        int batch = 2 + static_cast<int>(rng.below(3));
        check_layer_stack({LayerSpec::batchnorm()}, {f}, batch, false,
                          7000 + static_cast<std::uint64_t>(trial), true);
    }
}

TEST_CASE("softmax rows are probability distributions") {
    nn::SoftmaxLayer<double> sm;
    TensorD x({3, 5});
    Rng rng(3);
    for (double& v : x.v) v = 4.0 * rng.normal();
    TensorD y = sm.forward(x, false, nullptr);
    for (int r = 0; r < 3; ++r) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
            double p = y.v[static_cast<std::size_t>(r) * 5 + c];
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            s += p;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("maxpool routes gradients only to the argmax cells") {
    nn::MaxPool2DLayer<double> pool(LayerSpec::maxpool(2, 2));
    TensorD x({1, 2, 4, 1});
    // windows: [1 2 / 5 6] max at 5? values laid out NHWC
    x.v = {1, 2, 3, 9,
           5, 6, 7, 8};
    TensorD y = pool.forward(x, false, nullptr);
    CHECK(y.v == std::vector<double>{6, 9});
    TensorD dout({1, 1, 2, 1});
    dout.v = {10, 20};
    TensorD dx = pool.backward(dout);
    CHECK(dx.v == std::vector<double>{0, 0, 0, 20, 0, 10, 0, 0});
}

TEST_CASE("LSTM single step matches a scalar hand calculation") {
    nn::LSTMLayer<double> lstm(LayerSpec::lstm(1));
    lstm.build({1, 1, 1});
    lstm.wx.v = {0.4, -0.3, 0.2, 0.5};  // i, f, g, o
    lstm.wh.v = {0.0, 0.0, 0.0, 0.0};
    lstm.b.v = {0.1, 1.0, -0.2, 0.3};

    TensorD x({1, 1, 1});
    x.v = {0.7};
    TensorD h = lstm.forward(x, false, nullptr);

    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    double ig = sig(0.4 * 0.7 + 0.1);
    double gg = std::tanh(0.2 * 0.7 - 0.2);
    double og = sig(0.5 * 0.7 + 0.3);
    double c = ig * gg;  // previous cell state is zero
    CHECK(h.v[0] == doctest::Approx(og * std::tanh(c)).epsilon(1e-12));

    // a second time step feeds the hidden state back through wh
    lstm.wh.v = {0.3, -0.2, 0.6, 0.1};
    TensorD x2({1, 2, 1});
    x2.v = {0.7, -0.4};
    TensorD h2 = lstm.forward(x2, false, nullptr);
    double h1 = h.v[0], c1 = c;
    double ig2 = sig(0.4 * -0.4 + 0.3 * h1 + 0.1);
    double fg2 = sig(-0.3 * -0.4 + -0.2 * h1 + 1.0);
    double gg2 = std::tanh(0.2 * -0.4 + 0.6 * h1 - 0.2);
    double og2 = sig(0.5 * -0.4 + 0.1 * h1 + 0.3);
    double c2 = fg2 * c1 + ig2 * gg2;
    CHECK(h2.v[0] == doctest::Approx(og2 * std::tanh(c2)).epsilon(1e-12));
}

TEST_CASE("dropout keeps expectation in train mode and identity in eval") {
    nn::DropoutLayer<double> drop(LayerSpec::dropout(0.4));
    TensorD x({1, 10000});
    for (double& v : x.v) v = 1.0;

    Rng rng(5);
    TensorD y = drop.forward(x, true, &rng);
    double mean = 0;
    std::size_t zeros = 0;
    for (double v : y.v) {
        mean += v;
        if (v == 0.0) ++zeros;
    }
    mean /= static_cast<double>(y.v.size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));  // inverted scaling
    CHECK(static_cast<double>(zeros) / static_cast<double>(y.v.size()) ==
          doctest::Approx(0.4).epsilon(0.1));

    // identical stream reproduces the identical mask
    Rng rng2(5);
    TensorD y2 = drop.forward(x, true, &rng2);
    CHECK(y.v == y2.v);

    TensorD ye = drop.forward(x, false, nullptr);
    CHECK(ye.v == x.v);
}

TEST_CASE("cross entropy and accuracy reference values") {
    Tensor<float> probs({2, 2});
    probs.v = {0.9f, 0.1f, 0.2f, 0.8f};
    Tensor<float> targets({2, 2});
    targets.v = {1, 0, 1, 0};  // second row is wrong
    double expected = -(std::log(0.9) + std::log(0.2)) / 2.0;
    CHECK(nn::cross_entropy(probs, targets) == doctest::Approx(expected).epsilon(1e-6));
    CHECK(nn::accuracy(probs, {0, 0}) == doctest::Approx(0.5));
    CHECK(nn::accuracy(probs, {0, 1}) == doctest::Approx(1.0));
}

TEST_CASE("model build rejects a head that does not match the class count") {
    nn::ModelF model;
    model.specs = {LayerSpec::dense(5), LayerSpec::softmax()};
    CHECK_THROWS(model.build({8}, 3, 1));
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    auto make_data = [](std::uint64_t seed) {
        nn::LabeledTensor d;
        d.x = nn::TensorF({12, 6, 4, 1});
        Rng rng(seed);
        for (float& v : d.x.v) v = static_cast<float>(rng.normal());
        for (int i = 0; i < 12; ++i) d.labels.push_back(i % 2);
        d.one_hot = one_hot(d.labels, 2);
        return d;
    };
    nn::LabeledTensor train_set = make_data(1), test_set = make_data(2);

    auto run = [&]() {
        nn::ModelF model;
        model.specs = {LayerSpec::conv2d(4, 3, 3, 1, nn::Padding::Same), LayerSpec::relu(),
                       LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::softmax()};
        model.build({6, 4, 1}, 2, 77);
        nn::TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 4;
        cfg.seed = 9;
        cfg.early_stop_patience = 0;
        nn::train(model, train_set, test_set, cfg);
        return model;
    };
    nn::ModelF a = run(), b = run();
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->v == pb[i]->v);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    nn::LabeledTensor d;
    d.x = nn::TensorF({8, 5, 1, 1});
    Rng rng(4);
    for (float& v : d.x.v) v = static_cast<float>(rng.normal());
    for (int i = 0; i < 8; ++i) d.labels.push_back(i % 2);
    d.one_hot = one_hot(d.labels, 2);

    for (auto opt : {nn::Optimizer::SGD, nn::Optimizer::Adam}) {
        nn::ModelF model;
        model.specs = {LayerSpec::flatten(), LayerSpec::dense(2), LayerSpec::softmax()};
        model.build({5, 1, 1}, 2, 3);
        std::vector<std::vector<float>> before;
        for (auto* p : model.parameters()) before.push_back(p->v);
        nn::TrainConfig cfg;
        cfg.learning_rate = 0.0;
        cfg.epochs = 2;
        cfg.batch_size = 4;
        cfg.optimizer = opt;
        cfg.early_stop_patience = 0;
        nn::train(model, d, d, cfg);
        auto params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->v == before[i]);
    }
}

TEST_CASE("a small CNN overfits ten separable samples") {
    nn::LabeledTensor d;
    d.x = nn::TensorF({10, 8, 4, 1});
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
        int cls = i % 2;
        d.labels.push_back(cls);
        for (int j = 0; j < 32; ++j)
            d.x.v[static_cast<std::size_t>(i) * 32 + j] =
                static_cast<float>(0.3 * rng.normal() + (cls ? 1.5 : -1.5));
    }
    d.one_hot = one_hot(d.labels, 2);

    nn::ModelF model;
    model.specs = {LayerSpec::conv2d(4, 3, 3, 1, nn::Padding::Same), LayerSpec::relu(),
                   LayerSpec::maxpool(2, 2), LayerSpec::flatten(), LayerSpec::dense(8),
                   LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()};
    model.build({8, 4, 1}, 2, 11);
    nn::TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 5;
    cfg.seed = 2;
    cfg.early_stop_patience = 0;
    nn::train(model, d, d, cfg);
    nn::EvalResult ev = nn::evaluate(model, d);
    CHECK(ev.accuracy == doctest::Approx(1.0));
}

TEST_CASE("model save/load round-trips weights and predictions") {
    nn::ModelF model;
    model.specs = {LayerSpec::conv2d(3, 3, 3, 1, nn::Padding::Same), LayerSpec::relu(),
                   LayerSpec::flatten(), LayerSpec::dense(3), LayerSpec::softmax()};
    model.build({6, 4, 1}, 3, 21);

    fs::path path = fs::temp_directory_path() / "ecog_test_model.ecnn";
    nn::save_model(model, path.string());
    nn::ModelF back = nn::load_model(path.string());

    CHECK(back.input_shape == model.input_shape);
    CHECK(back.n_classes == model.n_classes);
    auto pa = model.parameters(), pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->v == pb[i]->v);

    nn::TensorF x({2, 6, 4, 1});
    Rng rng(8);
    for (float& v : x.v) v = static_cast<float>(rng.normal());
    nn::TensorF ya = model.forward(x, false);
    nn::TensorF yb = back.forward(x, false);
    CHECK(ya.v == yb.v);

    SUBCASE("truncated file is rejected") {
        auto sz = fs::file_size(path);
        fs::resize_file(path, sz - 7);
        CHECK_THROWS_WITH_AS(static_cast<void>(nn::load_model(path.string())),
                             doctest::Contains("checksum"), std::runtime_error);
    }
    SUBCASE("flipped payload byte is rejected") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(fs::file_size(path)) / 2);
        char b = 0x5a;
        f.write(&b, 1);
        f.close();
        CHECK_THROWS(static_cast<void>(nn::load_model(path.string())));
    }
    SUBCASE("wrong magic is rejected") {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << "NOPE";
        f.close();
        CHECK_THROWS(static_cast<void>(nn::load_model(path.string())));
    }
    fs::remove(path);
}

TEST_CASE("a committed model fixture still loads") {
    // guards the serialization format against accidental drift
    fs::path fixture = fs::path(TEST_DATA_DIR) / "fixture_model.ecnn";
    REQUIRE(fs::exists(fixture));
    nn::ModelF model = nn::load_model(fixture.string());
    CHECK(model.n_classes == 2);
    nn::TensorF x({1, 4, 3, 1});
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = static_cast<float>(i) * 0.1f;
    nn::TensorF y = model.forward(x, false);
    CHECK(y.shape == std::vector<int>{1, 2});
    double s = y.v[0] + y.v[1];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("epochs_to_tensor shapes, caps channels, and one-hot matches labels") {
    EpochSet es;
    es.n_epochs = 3;
    es.n_time = 4;
    es.n_channels = 5;
    es.data.resize(60);
    for (std::size_t i = 0; i < 60; ++i) es.data[i] = static_cast<double>(i);
    es.labels = {0, 2, 1};

    nn::LabeledTensor t = nn::epochs_to_tensor(es, 3, 4);
    CHECK(t.x.shape == std::vector<int>{3, 4, 4, 1});
    CHECK(t.labels == es.labels);
    CHECK(t.one_hot.rows == 3);
    CHECK(t.one_hot(1, 2) == 1.0);
    // channel cap keeps the first 4 channels of each time step
    CHECK(t.x.v[0] == 0.0f);
    CHECK(t.x.v[4] == 5.0f);  // second time step starts at source channel index 5

    nn::LabeledTensor full = nn::epochs_to_tensor(es, 3, 0);
    CHECK(full.x.shape == std::vector<int>{3, 4, 5, 1});
}
