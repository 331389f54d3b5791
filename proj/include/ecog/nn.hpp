#ifndef ECOG_NN_HPP
#define ECOG_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecog/rng.hpp"

namespace ecog::nn {

// ---- tensor ----------------------------------------------------------------

template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(count(shape)), T(0));
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t c = 1;
        for (int d : s) c *= d;
        return c;
    }
    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

// ---- layer specs -----------------------------------------------------------

enum class LayerKind { Conv2D, MaxPool2D, ReLU, Dropout, Flatten, Dense, LSTM, Softmax, BatchNorm };
enum class Padding { Valid, Same };

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int filters = 0, kernel_h = 0, kernel_w = 0, stride = 1;
    Padding padding = Padding::Valid;
    int pool_h = 0, pool_w = 0;
    double rate = 0.0;  // dropout
    int units = 0;      // dense / lstm

    static LayerSpec conv2d(int filters, int kh, int kw, int stride = 1,
                            Padding pad = Padding::Valid) {
        LayerSpec s;
        s.kind = LayerKind::Conv2D;
        s.filters = filters;
        s.kernel_h = kh;
        s.kernel_w = kw;
        s.stride = stride;
        s.padding = pad;
        return s;
    }
    static LayerSpec maxpool(int ph, int pw) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool2D;
        s.pool_h = ph;
        s.pool_w = pw;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::ReLU}; }
    static LayerSpec dropout(double rate) {
        LayerSpec s;
        s.kind = LayerKind::Dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec flatten() { return LayerSpec{LayerKind::Flatten}; }
    static LayerSpec dense(int units) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        return s;
    }
    static LayerSpec lstm(int units) {
        LayerSpec s;
        s.kind = LayerKind::LSTM;
        s.units = units;
        return s;
    }
    static LayerSpec softmax() { return LayerSpec{LayerKind::Softmax}; }
    static LayerSpec batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
};

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

// ---- layers ----------------------------------------------------------------

template <class T>
struct Layer {
    virtual ~Layer() = default;
    virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, bool train_mode, Rng* dropout_rng) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dout) = 0;
    virtual std::vector<Tensor<T>*> params() { return {}; }
    virtual std::vector<Tensor<T>*> grads() { return {}; }
    virtual void init(Rng& rng) {}
};

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void glorot_fill(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-limit, limit));
}

template <class T>
struct Conv2DLayer : Layer<T> {
    LayerSpec spec;
    Tensor<T> w, b, dw, db;  // w: (kh, kw, cin, cout)
    Tensor<T> x_cache;
    int pad_top = 0, pad_left = 0;

    explicit Conv2DLayer(LayerSpec s) : spec(s) {}

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        if (in.size() != 4) throw std::runtime_error("Conv2D expects rank-4 input, got " + shape_str(in));
        int h = in[1], wd = in[2];
        int ho, wo;
        if (spec.padding == Padding::Valid) {
            ho = (h - spec.kernel_h) / spec.stride + 1;
            wo = (wd - spec.kernel_w) / spec.stride + 1;
        } else {
            ho = (h + spec.stride - 1) / spec.stride;
            wo = (wd + spec.stride - 1) / spec.stride;
        }
        if (ho <= 0 || wo <= 0)
            throw std::runtime_error("Conv2D kernel larger than input " + shape_str(in));
        return {in[0], ho, wo, spec.filters};
    }

    void build(const std::vector<int>& in) {
        int cin = in[3];
        w = Tensor<T>({spec.kernel_h, spec.kernel_w, cin, spec.filters});
        b = Tensor<T>({spec.filters});
        dw = Tensor<T>(w.shape);
        db = Tensor<T>(b.shape);
        if (spec.padding == Padding::Same) {
            auto out = out_shape(in);
            int pad_h = std::max(0, (out[1] - 1) * spec.stride + spec.kernel_h - in[1]);
            int pad_w = std::max(0, (out[2] - 1) * spec.stride + spec.kernel_w - in[2]);
            pad_top = pad_h / 2;
            pad_left = pad_w / 2;
        }
    }

    void init(Rng& rng) override {
        glorot_fill(w, static_cast<std::int64_t>(spec.kernel_h) * spec.kernel_w * w.shape[2],
                    static_cast<std::int64_t>(spec.kernel_h) * spec.kernel_w * spec.filters, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        x_cache = x;
        auto os = out_shape(x.shape);
        Tensor<T> y(os);
        const int n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3];
        const int ho = os[1], wo = os[2], cout = os[3];
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni) {
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow)
                    for (int co = 0; co < cout; ++co) {
                        T acc = b.v[static_cast<std::size_t>(co)];
                        for (int kh = 0; kh < spec.kernel_h; ++kh) {
                            int ih = oh * spec.stride + kh - pad_top;
                            if (ih < 0 || ih >= h) continue;
                            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                                int iw = ow * spec.stride + kw - pad_left;
                                if (iw < 0 || iw >= wd) continue;
                                const T* xp = &x.v[static_cast<std::size_t>(
                                    ((static_cast<std::int64_t>(ni) * h + ih) * wd + iw) * cin)];
                                const T* wp = &w.v[static_cast<std::size_t>(
                                    ((static_cast<std::int64_t>(kh) * spec.kernel_w + kw) * cin) *
                                    cout + co)];
                                for (int ci = 0; ci < cin; ++ci) acc += xp[ci] * wp[ci * cout];
                            }
                        }
                        y.v[static_cast<std::size_t>(
                            ((static_cast<std::int64_t>(ni) * ho + oh) * wo + ow) * cout + co)] =
                            acc;
                    }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dout) override {
        const auto& x = x_cache;
        const int n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3];
        const int ho = dout.shape[1], wo = dout.shape[2], cout = dout.shape[3];
        std::fill(dw.v.begin(), dw.v.end(), T(0));
        std::fill(db.v.begin(), db.v.end(), T(0));

        auto dout_at = [&](int ni, int oh, int ow, int co) {
            return dout.v[static_cast<std::size_t>(
                ((static_cast<std::int64_t>(ni) * ho + oh) * wo + ow) * cout + co)];
        };
        auto x_at = [&](int ni, int ih, int iw, int ci) {
            return x.v[static_cast<std::size_t>(
                ((static_cast<std::int64_t>(ni) * h + ih) * wd + iw) * cin + ci)];
        };

        // dW/dB: one output channel per task, sums run in a fixed order
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            T bacc = T(0);
            for (int ni = 0; ni < n; ++ni)
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow) bacc += dout_at(ni, oh, ow, co);
            db.v[static_cast<std::size_t>(co)] = bacc;
            for (int kh = 0; kh < spec.kernel_h; ++kh)
                for (int kw = 0; kw < spec.kernel_w; ++kw)
                    for (int ci = 0; ci < cin; ++ci) {
                        T acc = T(0);
                        for (int ni = 0; ni < n; ++ni)
                            for (int oh = 0; oh < ho; ++oh) {
                                int ih = oh * spec.stride + kh - pad_top;
                                if (ih < 0 || ih >= h) continue;
                                for (int ow = 0; ow < wo; ++ow) {
                                    int iw = ow * spec.stride + kw - pad_left;
                                    if (iw < 0 || iw >= wd) continue;
                                    acc += x_at(ni, ih, iw, ci) * dout_at(ni, oh, ow, co);
                                }
                            }
                        dw.v[static_cast<std::size_t>(
                            ((static_cast<std::int64_t>(kh) * spec.kernel_w + kw) * cin + ci) *
                            cout + co)] += acc;
                    }
        }

        Tensor<T> dx(x.shape);
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni) {
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow)
                    for (int co = 0; co < cout; ++co) {
                        T g = dout_at(ni, oh, ow, co);
                        if (g == T(0)) continue;
                        for (int kh = 0; kh < spec.kernel_h; ++kh) {
                            int ih = oh * spec.stride + kh - pad_top;
                            if (ih < 0 || ih >= h) continue;
                            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                                int iw = ow * spec.stride + kw - pad_left;
                                if (iw < 0 || iw >= wd) continue;
                                for (int ci = 0; ci < cin; ++ci)
                                    dx.v[static_cast<std::size_t>(
                                        ((static_cast<std::int64_t>(ni) * h + ih) * wd + iw) *
                                        cin + ci)] +=
                                        g * w.v[static_cast<std::size_t>(
                                                ((static_cast<std::int64_t>(kh) * spec.kernel_w +
                                                  kw) * cin + ci) * cout + co)];
                            }
                        }
                    }
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() override { return {&w, &b}; }
    std::vector<Tensor<T>*> grads() override { return {&dw, &db}; }
};

template <class T>
struct MaxPool2DLayer : Layer<T> {
    LayerSpec spec;
    std::vector<int> in_shape;
    std::vector<std::int64_t> argmax;  // flat input index per output element

    explicit MaxPool2DLayer(LayerSpec s) : spec(s) {}

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        if (in.size() != 4) throw std::runtime_error("MaxPool2D expects rank-4 input");
        return {in[0], in[1] / spec.pool_h, in[2] / spec.pool_w, in[3]};
    }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        in_shape = x.shape;
        auto os = out_shape(x.shape);
        if (os[1] <= 0 || os[2] <= 0) throw std::runtime_error("MaxPool2D pool exceeds input");
        Tensor<T> y(os);
        argmax.assign(static_cast<std::size_t>(y.size()), 0);
        const int n = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3];
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni)
            for (int oh = 0; oh < os[1]; ++oh)
                for (int ow = 0; ow < os[2]; ++ow)
                    for (int ci = 0; ci < c; ++ci) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::int64_t best_idx = 0;
                        for (int ph = 0; ph < spec.pool_h; ++ph)
                            for (int pw = 0; pw < spec.pool_w; ++pw) {
                                int ih = oh * spec.pool_h + ph, iw = ow * spec.pool_w + pw;
                                std::int64_t idx =
                                    ((static_cast<std::int64_t>(ni) * h + ih) * wd + iw) * c + ci;
                                if (x.v[static_cast<std::size_t>(idx)] > best) {
                                    best = x.v[static_cast<std::size_t>(idx)];
                                    best_idx = idx;
                                }
                            }
                        std::int64_t oidx =
                            ((static_cast<std::int64_t>(ni) * os[1] + oh) * os[2] + ow) * c + ci;
                        y.v[static_cast<std::size_t>(oidx)] = best;
                        argmax[static_cast<std::size_t>(oidx)] = best_idx;
                    }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dout) override {
        Tensor<T> dx(in_shape);
        for (std::size_t i = 0; i < dout.v.size(); ++i)
            dx.v[static_cast<std::size_t>(argmax[i])] += dout.v[i];
        return dx;
    }
};

template <class T>
struct ReLULayer : Layer<T> {
    std::vector<char> mask;
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        Tensor<T> y = x;
        mask.resize(x.v.size());
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            mask[i] = y.v[i] > T(0);
            if (!mask[i]) y.v[i] = T(0);
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dout) override {
        Tensor<T> dx = dout;
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (!mask[i]) dx.v[i] = T(0);
        return dx;
    }
};

template <class T>
struct DropoutLayer : Layer<T> {
    LayerSpec spec;
    std::vector<char> keep;
    bool active = false;
    explicit DropoutLayer(LayerSpec s) : spec(s) {}
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    Tensor<T> forward(const Tensor<T>& x, bool train_mode, Rng* rng) override {
        active = train_mode && spec.rate > 0.0 && rng != nullptr;
        if (!active) return x;
        Tensor<T> y = x;
        keep.resize(x.v.size());
        T scale = static_cast<T>(1.0 / (1.0 - spec.rate));
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            keep[i] = rng->uniform01() >= spec.rate;
            y.v[i] = keep[i] ? y.v[i] * scale : T(0);
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dout) override {
        if (!active) return dout;
        Tensor<T> dx = dout;
        T scale = static_cast<T>(1.0 / (1.0 - spec.rate));
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = keep[i] ? dx.v[i] * scale : T(0);
        return dx;
    }
};

template <class T>
struct FlattenLayer : Layer<T> {
    std::vector<int> in_shape;
    std::vector<int> out_shape(const std::vector<int>& in) const override {
        int f = 1;
        for (std::size_t i = 1; i < in.size(); ++i) f *= in[i];
        return {in[0], f};
    }
    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        in_shape = x.shape;
        Tensor<T> y = x;
        y.shape = out_shape(x.shape);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dout) override {
        Tensor<T> dx = dout;
        dx.shape = in_shape;
        return dx;
    }
};

template <class T>
struct DenseLayer : Layer<T> {
    LayerSpec spec;
    Tensor<T> w, b, dw, db;  // w: (F, U)
    Tensor<T> x_cache;
    explicit DenseLayer(LayerSpec s) : spec(s) {}

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        if (in.size() != 2) throw std::runtime_error("Dense expects rank-2 input, got " + shape_str(in));
        return {in[0], spec.units};
    }
    void build(const std::vector<int>& in) {
        w = Tensor<T>({in[1], spec.units});
        b = Tensor<T>({spec.units});
        dw = Tensor<T>(w.shape);
        db = Tensor<T>(b.shape);
    }
    void init(Rng& rng) override { glorot_fill(w, w.shape[0], w.shape[1], rng); }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        x_cache = x;
        const int n = x.shape[0], f = x.shape[1], u = spec.units;
        Tensor<T> y({n, u});
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni) {
            const T* xp = &x.v[static_cast<std::size_t>(ni) * f];
            T* yp = &y.v[static_cast<std::size_t>(ni) * u];
            for (int ui = 0; ui < u; ++ui) yp[ui] = b.v[static_cast<std::size_t>(ui)];
            for (int fi = 0; fi < f; ++fi) {
                T xv = xp[fi];
                if (xv == T(0)) continue;
                const T* wp = &w.v[static_cast<std::size_t>(fi) * u];
                for (int ui = 0; ui < u; ++ui) yp[ui] += xv * wp[ui];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dout) override {
        const int n = x_cache.shape[0], f = x_cache.shape[1], u = spec.units;
#pragma omp parallel for schedule(static)
        for (int ui = 0; ui < u; ++ui) {
            T bacc = T(0);
            for (int ni = 0; ni < n; ++ni) bacc += dout.v[static_cast<std::size_t>(ni) * u + ui];
            db.v[static_cast<std::size_t>(ui)] = bacc;
        }
#pragma omp parallel for schedule(static)
        for (int fi = 0; fi < f; ++fi)
            for (int ui = 0; ui < u; ++ui) {
                T acc = T(0);
                for (int ni = 0; ni < n; ++ni)
                    acc += x_cache.v[static_cast<std::size_t>(ni) * f + fi] *
                           dout.v[static_cast<std::size_t>(ni) * u + ui];
                dw.v[static_cast<std::size_t>(fi) * u + ui] = acc;
            }
        Tensor<T> dx(x_cache.shape);
#pragma omp parallel for schedule(static)
        for (int ni = 0; ni < n; ++ni)
            for (int fi = 0; fi < f; ++fi) {
                T acc = T(0);
                const T* wp = &w.v[static_cast<std::size_t>(fi) * u];
                const T* dp = &dout.v[static_cast<std::size_t>(ni) * u];
                for (int ui = 0; ui < u; ++ui) acc += wp[ui] * dp[ui];
                dx.v[static_cast<std::size_t>(ni) * f + fi] = acc;
            }
        return dx;
    }

    std::vector<Tensor<T>*> params() override { return {&w, &b}; }
    std::vector<Tensor<T>*> grads() override { return {&dw, &db}; }
};

// LSTM over time steps; rank-4 input (N,H,W,C) is read as (N, T=H, F=W*C).
// Output is the last hidden state (N, U). Gate order: i, f, g, o.
template <class T>
struct LSTMLayer : Layer<T> {
    LayerSpec spec;
    Tensor<T> wx, wh, b, dwx, dwh, db;
    Tensor<T> x_cache;
    std::vector<Tensor<T>> h_states, c_states, gates;  // per time step
    int feat = 0;

    explicit LSTMLayer(LayerSpec s) : spec(s) {}

    static std::pair<int, int> time_feat(const std::vector<int>& in) {
        if (in.size() == 3) return {in[1], in[2]};
        if (in.size() == 4) return {in[1], in[2] * in[3]};
        throw std::runtime_error("LSTM expects rank-3 or rank-4 input, got " + shape_str(in));
    }

    std::vector<int> out_shape(const std::vector<int>& in) const override {
        time_feat(in);
        return {in[0], spec.units};
    }

    void build(const std::vector<int>& in) {
        feat = time_feat(in).second;
        wx = Tensor<T>({feat, 4 * spec.units});
        wh = Tensor<T>({spec.units, 4 * spec.units});
        b = Tensor<T>({4 * spec.units});
        dwx = Tensor<T>(wx.shape);
        dwh = Tensor<T>(wh.shape);
        db = Tensor<T>(b.shape);
    }

    void init(Rng& rng) override {
        glorot_fill(wx, feat, spec.units, rng);
        glorot_fill(wh, spec.units, spec.units, rng);
        // forget gate bias starts at 1
        for (int u = 0; u < spec.units; ++u) b.v[static_cast<std::size_t>(spec.units + u)] = T(1);
    }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        x_cache = x;
        auto [steps, f] = time_feat(x.shape);
        const int n = x.shape[0], u = spec.units;
        h_states.assign(static_cast<std::size_t>(steps) + 1, Tensor<T>({n, u}));
        c_states.assign(static_cast<std::size_t>(steps) + 1, Tensor<T>({n, u}));
        gates.assign(static_cast<std::size_t>(steps), Tensor<T>({n, 4 * u}));
        for (int t = 0; t < steps; ++t) {
            const Tensor<T>& hp = h_states[static_cast<std::size_t>(t)];
            const Tensor<T>& cp = c_states[static_cast<std::size_t>(t)];
            Tensor<T>& g = gates[static_cast<std::size_t>(t)];
            Tensor<T>& hn = h_states[static_cast<std::size_t>(t) + 1];
            Tensor<T>& cn = c_states[static_cast<std::size_t>(t) + 1];
            for (int ni = 0; ni < n; ++ni) {
                const T* xp = &x.v[(static_cast<std::size_t>(ni) * steps + t) * f];
                T* gp = &g.v[static_cast<std::size_t>(ni) * 4 * u];
                for (int j = 0; j < 4 * u; ++j) gp[j] = b.v[static_cast<std::size_t>(j)];
                for (int fi = 0; fi < f; ++fi) {
                    T xv = xp[fi];
                    if (xv == T(0)) continue;
                    const T* wp = &wx.v[static_cast<std::size_t>(fi) * 4 * u];
                    for (int j = 0; j < 4 * u; ++j) gp[j] += xv * wp[j];
                }
                const T* hpp = &hp.v[static_cast<std::size_t>(ni) * u];
                for (int ui = 0; ui < u; ++ui) {
                    T hv = hpp[ui];
                    if (hv == T(0)) continue;
                    const T* wp = &wh.v[static_cast<std::size_t>(ui) * 4 * u];
                    for (int j = 0; j < 4 * u; ++j) gp[j] += hv * wp[j];
                }
                for (int ui = 0; ui < u; ++ui) {
                    T ig = sigmoid(gp[ui]);
                    T fg = sigmoid(gp[u + ui]);
                    T gg = std::tanh(gp[2 * u + ui]);
                    T og = sigmoid(gp[3 * u + ui]);
                    gp[ui] = ig;
                    gp[u + ui] = fg;
                    gp[2 * u + ui] = gg;
                    gp[3 * u + ui] = og;
                    T cv = fg * cp.v[static_cast<std::size_t>(ni) * u + ui] + ig * gg;
                    cn.v[static_cast<std::size_t>(ni) * u + ui] = cv;
                    hn.v[static_cast<std::size_t>(ni) * u + ui] = og * std::tanh(cv);
                }
            }
        }
        return h_states.back();
    }

    Tensor<T> backward(const Tensor<T>& dout) override {
        auto [steps, f] = time_feat(x_cache.shape);
        const int n = x_cache.shape[0], u = spec.units;
        std::fill(dwx.v.begin(), dwx.v.end(), T(0));
        std::fill(dwh.v.begin(), dwh.v.end(), T(0));
        std::fill(db.v.begin(), db.v.end(), T(0));
        Tensor<T> dx(x_cache.shape);
        Tensor<T> dh = dout;
        Tensor<T> dc({n, u});
        for (int t = steps - 1; t >= 0; --t) {
            const Tensor<T>& g = gates[static_cast<std::size_t>(t)];
            const Tensor<T>& cp = c_states[static_cast<std::size_t>(t)];
            const Tensor<T>& cn = c_states[static_cast<std::size_t>(t) + 1];
            const Tensor<T>& hp = h_states[static_cast<std::size_t>(t)];
            Tensor<T> dz({n, 4 * u});
            for (int ni = 0; ni < n; ++ni) {
                const T* gp = &g.v[static_cast<std::size_t>(ni) * 4 * u];
                T* dzp = &dz.v[static_cast<std::size_t>(ni) * 4 * u];
                for (int ui = 0; ui < u; ++ui) {
                    T ig = gp[ui], fg = gp[u + ui], gg = gp[2 * u + ui], og = gp[3 * u + ui];
                    T cv = cn.v[static_cast<std::size_t>(ni) * u + ui];
                    T tc = std::tanh(cv);
                    T dhv = dh.v[static_cast<std::size_t>(ni) * u + ui];
                    T dct = dhv * og * (T(1) - tc * tc) + dc.v[static_cast<std::size_t>(ni) * u + ui];
                    T dov = dhv * tc;
                    T div = dct * gg;
                    T dfv = dct * cp.v[static_cast<std::size_t>(ni) * u + ui];
                    T dgv = dct * ig;
                    dzp[ui] = div * ig * (T(1) - ig);
                    dzp[u + ui] = dfv * fg * (T(1) - fg);
                    dzp[2 * u + ui] = dgv * (T(1) - gg * gg);
                    dzp[3 * u + ui] = dov * og * (T(1) - og);
                    dc.v[static_cast<std::size_t>(ni) * u + ui] = dct * fg;
                }
            }
            // parameter grads and propagated grads
            for (int ni = 0; ni < n; ++ni) {
                const T* dzp = &dz.v[static_cast<std::size_t>(ni) * 4 * u];
                const T* xp = &x_cache.v[(static_cast<std::size_t>(ni) * steps + t) * f];
                T* dxp = &dx.v[(static_cast<std::size_t>(ni) * steps + t) * f];
                for (int fi = 0; fi < f; ++fi) {
                    T* dwp = &dwx.v[static_cast<std::size_t>(fi) * 4 * u];
                    const T* wp = &wx.v[static_cast<std::size_t>(fi) * 4 * u];
                    T xv = xp[fi];
                    T acc = T(0);
                    for (int j = 0; j < 4 * u; ++j) {
                        dwp[j] += xv * dzp[j];
                        acc += wp[j] * dzp[j];
                    }
                    dxp[fi] = acc;
                }
                const T* hpp = &hp.v[static_cast<std::size_t>(ni) * u];
                T* dhp = &dh.v[static_cast<std::size_t>(ni) * u];
                for (int ui = 0; ui < u; ++ui) {
                    T* dwp = &dwh.v[static_cast<std::size_t>(ui) * 4 * u];
                    const T* wp = &wh.v[static_cast<std::size_t>(ui) * 4 * u];
                    T hv = hpp[ui];
                    T acc = T(0);
                    for (int j = 0; j < 4 * u; ++j) {
                        dwp[j] += hv * dzp[j];
                        acc += wp[j] * dzp[j];
                    }
                    dhp[ui] = acc;  // overwritten: gradient w.r.t. h_{t-1}
                }
                for (int j = 0; j < 4 * u; ++j) db.v[static_cast<std::size_t>(j)] += dzp[j];
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() override { return {&wx, &wh, &b}; }
    std::vector<Tensor<T>*> grads() override { return {&dwx, &dwh, &db}; }
};

template <class T>
struct SoftmaxLayer : Layer<T> {
    Tensor<T> y_cache;
    std::vector<int> out_shape(const std::vector<int>& in) const override {
        if (in.size() != 2) throw std::runtime_error("Softmax expects rank-2 input");
        return in;
    }
    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        Tensor<T> y = x;
        const int n = x.shape[0], c = x.shape[1];
        for (int ni = 0; ni < n; ++ni) {
            T* p = &y.v[static_cast<std::size_t>(ni) * c];
            T mx = p[0];
            for (int i = 1; i < c; ++i) mx = std::max(mx, p[i]);
            T sum = T(0);
            for (int i = 0; i < c; ++i) {
                p[i] = std::exp(p[i] - mx);
                sum += p[i];
            }
            for (int i = 0; i < c; ++i) p[i] /= sum;
        }
        y_cache = y;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dout) override {
        const int n = y_cache.shape[0], c = y_cache.shape[1];
        Tensor<T> dx(y_cache.shape);
        for (int ni = 0; ni < n; ++ni) {
            const T* p = &y_cache.v[static_cast<std::size_t>(ni) * c];
            const T* dp = &dout.v[static_cast<std::size_t>(ni) * c];
            T dot = T(0);
            for (int i = 0; i < c; ++i) dot += dp[i] * p[i];
            for (int i = 0; i < c; ++i)
                dx.v[static_cast<std::size_t>(ni) * c + i] = p[i] * (dp[i] - dot);
        }
        return dx;
    }
};

// Per-feature batch norm over all non-feature axes (feature = last axis).
template <class T>
struct BatchNormLayer : Layer<T> {
    Tensor<T> gamma, beta, dgamma, dbeta;
    Tensor<T> xhat_cache;
    std::vector<T> mean_, var_;
    Tensor<T> running_mean, running_var;
    double momentum = 0.9, eps = 1e-5;
    int feat = 0;

    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    void build(const std::vector<int>& in) {
        feat = in.back();
        gamma = Tensor<T>({feat});
        beta = Tensor<T>({feat});
        dgamma = Tensor<T>(gamma.shape);
        dbeta = Tensor<T>(beta.shape);
        running_mean = Tensor<T>({feat});
        running_var = Tensor<T>({feat});
        for (auto& v : gamma.v) v = T(1);
        for (auto& v : running_var.v) v = T(1);
    }

    Tensor<T> forward(const Tensor<T>& x, bool train_mode, Rng*) override {
        const std::int64_t rows = x.size() / feat;
        Tensor<T> y = x;
        xhat_cache = Tensor<T>(x.shape);
        mean_.assign(static_cast<std::size_t>(feat), T(0));
        var_.assign(static_cast<std::size_t>(feat), T(0));
        for (int c = 0; c < feat; ++c) {
            T m, vv;
            if (train_mode) {
                T s = T(0);
                for (std::int64_t r = 0; r < rows; ++r) s += x.v[static_cast<std::size_t>(r * feat + c)];
                m = s / static_cast<T>(rows);
                T ss = T(0);
                for (std::int64_t r = 0; r < rows; ++r) {
                    T d = x.v[static_cast<std::size_t>(r * feat + c)] - m;
                    ss += d * d;
                }
                vv = ss / static_cast<T>(rows);
                running_mean.v[static_cast<std::size_t>(c)] =
                    static_cast<T>(momentum) * running_mean.v[static_cast<std::size_t>(c)] +
                    static_cast<T>(1.0 - momentum) * m;
                running_var.v[static_cast<std::size_t>(c)] =
                    static_cast<T>(momentum) * running_var.v[static_cast<std::size_t>(c)] +
                    static_cast<T>(1.0 - momentum) * vv;
            } else {
                m = running_mean.v[static_cast<std::size_t>(c)];
                vv = running_var.v[static_cast<std::size_t>(c)];
            }
            mean_[static_cast<std::size_t>(c)] = m;
            var_[static_cast<std::size_t>(c)] = vv;
            T inv = T(1) / std::sqrt(vv + static_cast<T>(eps));
            for (std::int64_t r = 0; r < rows; ++r) {
                T xh = (x.v[static_cast<std::size_t>(r * feat + c)] - m) * inv;
                xhat_cache.v[static_cast<std::size_t>(r * feat + c)] = xh;
                y.v[static_cast<std::size_t>(r * feat + c)] =
                    gamma.v[static_cast<std::size_t>(c)] * xh + beta.v[static_cast<std::size_t>(c)];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dout) override {
        const std::int64_t rows = dout.size() / feat;
        Tensor<T> dx(dout.shape);
        for (int c = 0; c < feat; ++c) {
            T inv = T(1) / std::sqrt(var_[static_cast<std::size_t>(c)] + static_cast<T>(eps));
            T sum_d = T(0), sum_dx = T(0);
            for (std::int64_t r = 0; r < rows; ++r) {
                T d = dout.v[static_cast<std::size_t>(r * feat + c)];
                sum_d += d;
                sum_dx += d * xhat_cache.v[static_cast<std::size_t>(r * feat + c)];
            }
            dbeta.v[static_cast<std::size_t>(c)] = sum_d;
            dgamma.v[static_cast<std::size_t>(c)] = sum_dx;
            T g = gamma.v[static_cast<std::size_t>(c)];
            for (std::int64_t r = 0; r < rows; ++r) {
                T d = dout.v[static_cast<std::size_t>(r * feat + c)];
                T xh = xhat_cache.v[static_cast<std::size_t>(r * feat + c)];
                dx.v[static_cast<std::size_t>(r * feat + c)] =
                    g * inv / static_cast<T>(rows) *
                    (static_cast<T>(rows) * d - sum_d - xh * sum_dx);
            }
        }
        return dx;
    }

    std::vector<Tensor<T>*> params() override { return {&gamma, &beta}; }
    std::vector<Tensor<T>*> grads() override { return {&dgamma, &dbeta}; }
};

// ---- model -----------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0, train_acc = 0, test_acc = 0;
};

template <class T>
struct Model {
    std::vector<LayerSpec> specs;
    std::vector<std::unique_ptr<Layer<T>>> layers;
    std::vector<int> input_shape;  // without batch dimension
    int n_classes = 0;
    std::uint64_t seed = 0;
    std::vector<EpochStats> history;
    std::string provenance;  // source model hash when fine-tuned

    void build(const std::vector<int>& input, int classes, std::uint64_t s);
    Tensor<T> forward(const Tensor<T>& batch, bool train_mode, Rng* dropout_rng = nullptr);
    Tensor<T> backward(const Tensor<T>& dprobs);
    std::vector<Tensor<T>*> parameters();
    std::vector<Tensor<T>*> gradients();
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::Conv2D: return std::make_unique<Conv2DLayer<T>>(s);
        case LayerKind::MaxPool2D: return std::make_unique<MaxPool2DLayer<T>>(s);
        case LayerKind::ReLU: return std::make_unique<ReLULayer<T>>();
        case LayerKind::Dropout: return std::make_unique<DropoutLayer<T>>(s);
        case LayerKind::Flatten: return std::make_unique<FlattenLayer<T>>();
        case LayerKind::Dense: return std::make_unique<DenseLayer<T>>(s);
        case LayerKind::LSTM: return std::make_unique<LSTMLayer<T>>(s);
        case LayerKind::Softmax: return std::make_unique<SoftmaxLayer<T>>();
        case LayerKind::BatchNorm: return std::make_unique<BatchNormLayer<T>>();
    }
    throw std::runtime_error("unknown layer kind");
}

template <class T>
void Model<T>::build(const std::vector<int>& input, int classes, std::uint64_t s) {
    input_shape = input;
    n_classes = classes;
    seed = s;
    layers.clear();
    std::vector<int> shape = input;
    shape.insert(shape.begin(), 1);  // probe batch of 1
    std::size_t li = 0;
    for (const auto& spec : specs) {
        auto layer = make_layer<T>(spec);
        if (auto* c = dynamic_cast<Conv2DLayer<T>*>(layer.get())) c->build(shape);
        if (auto* d = dynamic_cast<DenseLayer<T>*>(layer.get())) d->build(shape);
        if (auto* l = dynamic_cast<LSTMLayer<T>*>(layer.get())) l->build(shape);
        if (auto* bn = dynamic_cast<BatchNormLayer<T>*>(layer.get())) bn->build(shape);
        shape = layer->out_shape(shape);
        Rng rng(seed, 0xC0DE0000ULL + li);
        layer->init(rng);
        layers.push_back(std::move(layer));
        ++li;
    }
    if (shape.size() != 2 || shape[1] != n_classes)
        throw std::runtime_error("final layer shape " + shape_str(shape) + " does not match head size " +
                                 std::to_string(n_classes));
}

template <class T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, bool train_mode, Rng* dropout_rng) {
    Tensor<T> x = batch;
    std::size_t li = 0;
    for (auto& layer : layers) {
        try {
            x = layer->forward(x, train_mode, dropout_rng);
        } catch (const std::exception& e) {
            throw std::runtime_error("layer " + std::to_string(li) + " (" +
                                     layer_kind_name(specs[li].kind) + "): " + e.what());
        }
        ++li;
    }
    return x;
}

template <class T>
Tensor<T> Model<T>::backward(const Tensor<T>& dprobs) {
    Tensor<T> g = dprobs;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
    return g;
}

template <class T>
std::vector<Tensor<T>*> Model<T>::parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers)
        for (auto* p : l->params()) out.push_back(p);
    return out;
}

template <class T>
std::vector<Tensor<T>*> Model<T>::gradients() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers)
        for (auto* g : l->grads()) out.push_back(g);
    return out;
}

// ---- loss ------------------------------------------------------------------

// mean categorical cross-entropy; dprobs is d(loss)/d(probabilities)
template <class T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets, Tensor<T>* dprobs = nullptr) {
    const int n = probs.shape[0], c = probs.shape[1];
    double loss = 0.0;
    if (dprobs) *dprobs = Tensor<T>(probs.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            double y = static_cast<double>(targets.v[static_cast<std::size_t>(ni) * c + ci]);
            if (y == 0.0) continue;
            double p = std::max(static_cast<double>(probs.v[static_cast<std::size_t>(ni) * c + ci]),
                                1e-12);
            loss -= y * std::log(p);
            if (dprobs)
                dprobs->v[static_cast<std::size_t>(ni) * c + ci] =
                    static_cast<T>(-y / p / static_cast<double>(n));
        }
    return loss / static_cast<double>(n);
}

template <class T>
double accuracy(const Tensor<T>& probs, const std::vector<int>& labels) {
    const int n = probs.shape[0], c = probs.shape[1];
    int correct = 0;
    for (int ni = 0; ni < n; ++ni) {
        int best = 0;
        for (int ci = 1; ci < c; ++ci)
            if (probs.v[static_cast<std::size_t>(ni) * c + ci] >
                probs.v[static_cast<std::size_t>(ni) * c + best])
                best = ci;
        if (best == labels[static_cast<std::size_t>(ni)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace ecog::nn

#endif
