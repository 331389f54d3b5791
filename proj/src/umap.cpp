#include "ecog/umap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <unordered_map>

#include "ecog/rng.hpp"

namespace ecog {

double FuzzyGraph::weight(std::size_t i, std::size_t j) const {
    for (const auto& e : edges)
        if ((e.i == i && e.j == j) || (e.i == j && e.j == i)) return e.w;
    return 0.0;
}

NeighborGraph knn_graph(const Matrix& X, std::size_t k) {
    const std::size_t n = X.rows;
    if (k < 2 || k >= n) throw std::runtime_error("knn_graph requires n > k >= 2");
    NeighborGraph g;
    g.k = k;
    g.indices.resize(n);
    g.distances.resize(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back(sq_dist(X.row(i), X.row(j), X.cols), j);
        }
        // ties broken by smaller index (pair ordering)
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        g.indices[i].resize(k);
        g.distances[i].resize(k);
        for (std::size_t m = 0; m < k; ++m) {
            g.indices[i][m] = cand[m].second;
            g.distances[i][m] = std::sqrt(cand[m].first);
        }
    }
    return g;
}

void smooth_knn_calibrate(const std::vector<double>& row_distances, std::size_t k, double& rho,
                          double& sigma) {
    rho = 0.0;
    for (double d : row_distances)
        if (d > 0.0) {
            rho = d;
            break;
        }
    double mean_d = 0.0;
    for (double d : row_distances) mean_d += d;
    mean_d /= static_cast<double>(row_distances.size());
    const double lo_bound = std::max(1e-3 * mean_d, 1e-8);
    const double target = std::log2(static_cast<double>(k));

    auto mass = [&](double s) {
        double sum = 0.0;
        for (double d : row_distances) sum += std::exp(-std::max(0.0, d - rho) / s);
        return sum;
    };

    if (mass(lo_bound) >= target) {
        sigma = lo_bound;
        return;
    }
    double lo = lo_bound, hi = 1.0;
    int guard = 0;
    while (mass(hi) < target && guard++ < 64) hi *= 2.0;
    for (int it = 0; it < 64; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mass(mid) < target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-5 * hi) break;
    }
    sigma = 0.5 * (lo + hi);
}

static std::uint64_t hash_doubles(const double* p, std::size_t n, std::uint64_t salt) {
    std::uint64_t h = 0x811c9dc5cbf29ce4ULL ^ salt;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &p[i], sizeof(bits));
        h = Rng::mix(h ^ bits);
    }
    return h;
}

FuzzyGraph fuzzy_simplicial_set(const NeighborGraph& g) {
    const std::size_t n = g.indices.size();
    FuzzyGraph fg;
    fg.n = n;
    fg.rho.resize(n);
    fg.sigma.resize(n);
    fg.stream_key.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        smooth_knn_calibrate(g.distances[i], g.k, fg.rho[i], fg.sigma[i]);
        fg.stream_key[i] = hash_doubles(g.distances[i].data(), g.distances[i].size(), 0x5a17ULL);
    }
    // directed weights, then probabilistic union w = a + b - a*b
    std::unordered_map<std::uint64_t, std::pair<double, double>> pairs;
    pairs.reserve(n * g.k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < g.k; ++m) {
            std::size_t j = g.indices[i][m];
            double w = std::exp(-std::max(0.0, g.distances[i][m] - fg.rho[i]) / fg.sigma[i]);
            std::uint64_t key = i < j ? (static_cast<std::uint64_t>(i) << 32 | j)
                                      : (static_cast<std::uint64_t>(j) << 32 | i);
            auto& slot = pairs[key];
            if (i < j)
                slot.first = w;
            else
                slot.second = w;
        }
    }
    for (const auto& [key, ab] : pairs) {
        FuzzyEdge e;
        e.i = static_cast<std::size_t>(key >> 32);
        e.j = static_cast<std::size_t>(key & 0xffffffffULL);
        e.w = ab.first + ab.second - ab.first * ab.second;
        fg.edges.push_back(e);
    }
    std::sort(fg.edges.begin(), fg.edges.end(), [](const FuzzyEdge& a, const FuzzyEdge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    return fg;
}

void fit_ab(double min_dist, double spread, double& a, double& b) {
    if (spread <= 0.0) throw std::runtime_error("fit_ab: spread must be positive");
    const int n = 300;
    std::vector<double> xs(n), ys(n);
    for (int i = 0; i < n; ++i) {
        double x = 3.0 * spread * static_cast<double>(i) / static_cast<double>(n - 1);
        xs[i] = x;
        ys[i] = x <= min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
    }
    // Levenberg-Marquardt on f(x) = 1 / (1 + a x^(2b))
    a = 1.0;
    b = 1.0;
    double lambda = 1e-3;
    auto residual_ss = [&](double aa, double bb) {
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
            double f = 1.0 / (1.0 + aa * std::pow(xs[i], 2.0 * bb));
            ss += (f - ys[i]) * (f - ys[i]);
        }
        return ss;
    };
    double ss = residual_ss(a, b);
    for (int it = 0; it < 200; ++it) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, jtr0 = 0, jtr1 = 0;
        for (int i = 0; i < n; ++i) {
            double x = xs[i];
            double xp = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
            double den = 1.0 + a * xp;
            double f = 1.0 / den;
            double r = f - ys[i];
            double dfda = -xp / (den * den);
            double dfdb = x > 0.0 ? -2.0 * a * xp * std::log(x) / (den * den) : 0.0;
            jtj00 += dfda * dfda;
            jtj01 += dfda * dfdb;
            jtj11 += dfdb * dfdb;
            jtr0 += dfda * r;
            jtr1 += dfdb * r;
        }
        double d00 = jtj00 * (1.0 + lambda), d11 = jtj11 * (1.0 + lambda);
        double det = d00 * d11 - jtj01 * jtj01;
        if (std::abs(det) < 1e-300) break;
        double da = (-jtr0 * d11 + jtr1 * jtj01) / det;
        double db = (jtr0 * jtj01 - jtr1 * d00) / det;
        double na = std::max(a + da, 1e-6), nb = std::max(b + db, 1e-6);
        double nss = residual_ss(na, nb);
        if (nss < ss) {
            a = na;
            b = nb;
            if (ss - nss < 1e-14) break;
            ss = nss;
            lambda = std::max(lambda * 0.5, 1e-12);
        } else {
            lambda *= 4.0;
            if (lambda > 1e12) break;
        }
    }
}

// ---- spectral initialization ------------------------------------------------

namespace {

struct Adjacency {
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    std::vector<double> degree;
};

Adjacency build_adjacency(const FuzzyGraph& fg) {
    Adjacency adj;
    adj.rows.resize(fg.n);
    adj.degree.assign(fg.n, 0.0);
    for (const auto& e : fg.edges) {
        adj.rows[e.i].emplace_back(e.j, e.w);
        adj.rows[e.j].emplace_back(e.i, e.w);
        adj.degree[e.i] += e.w;
        adj.degree[e.j] += e.w;
    }
    for (auto& r : adj.rows) std::sort(r.begin(), r.end());
    return adj;
}

bool graph_connected(const Adjacency& adj) {
    if (adj.rows.empty()) return true;
    std::vector<bool> seen(adj.rows.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
        std::size_t i = q.front();
        q.pop();
        for (auto [j, w] : adj.rows[i])
            if (!seen[j]) {
                seen[j] = true;
                ++count;
                q.push(j);
            }
    }
    return count == adj.rows.size();
}

// Bottom nontrivial eigenvectors of the normalized Laplacian, found as top
// eigenvectors of I + D^-1/2 W D^-1/2 with the trivial direction deflated.
bool spectral_layout(const FuzzyGraph& fg, const Adjacency& adj, int dim, std::uint64_t seed,
                     Matrix& out) {
    const std::size_t n = fg.n;
    std::vector<double> dinv(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (adj.degree[i] <= 0.0) return false;
        dinv[i] = 1.0 / std::sqrt(adj.degree[i]);
    }
    std::vector<std::vector<double>> basis;  // deflated directions
    {
        std::vector<double> u0(n);
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            u0[i] = std::sqrt(adj.degree[i]);
            norm += u0[i] * u0[i];
        }
        norm = std::sqrt(norm);
        for (double& v : u0) v /= norm;
        basis.push_back(std::move(u0));
    }
    auto matvec = [&](const std::vector<double>& v, std::vector<double>& w) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = v[i];
            for (auto [j, wt] : adj.rows[i]) acc += dinv[i] * wt * dinv[j] * v[j];
            w[i] = acc;
        }
    };
    out = Matrix(n, static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        std::vector<double> v(n), w(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = Rng(seed ^ fg.stream_key[i],
                                                       static_cast<std::uint64_t>(d))
                                                       .uniform(-1.0, 1.0);
        double prev = 0.0;
        for (int it = 0; it < 1000; ++it) {
            for (const auto& bvec : basis) {
                double dot = std::inner_product(v.begin(), v.end(), bvec.begin(), 0.0);
                for (std::size_t i = 0; i < n; ++i) v[i] -= dot * bvec[i];
            }
            matvec(v, w);
            double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
            if (norm < 1e-30) return false;
            for (std::size_t i = 0; i < n; ++i) w[i] /= norm;
            double diff = 0.0;
            for (std::size_t i = 0; i < n; ++i) diff += (w[i] - v[i]) * (w[i] - v[i]);
            v.swap(w);
            if (it > 2 && std::abs(std::sqrt(diff) - prev) < 1e-6 && std::sqrt(diff) < 1e-6) break;
            prev = std::sqrt(diff);
        }
        basis.push_back(v);
        double maxabs = 0.0;
        for (double x : v) maxabs = std::max(maxabs, std::abs(x));
        if (maxabs < 1e-30) return false;
        for (std::size_t i = 0; i < n; ++i) out(i, static_cast<std::size_t>(d)) = 10.0 * v[i] / maxabs;
    }
    return true;
}

double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

UmapModel optimize_embedding(const FuzzyGraph& fg, const Matrix& X, const UmapParams& params) {
    if (fg.n < 10) throw std::runtime_error("optimize_embedding requires n >= 10");
    for (const auto& e : fg.edges)
        if (!std::isfinite(e.w)) throw std::runtime_error("non-finite fuzzy weight");

    // Canonicalize vertex order by content hash so the whole optimization is
    // bitwise permutation-equivariant: permuted inputs produce the identical
    // internal problem, and the output is un-permuted at the end.
    const std::size_t n = fg.n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return fg.stream_key[a] != fg.stream_key[b] ? fg.stream_key[a] < fg.stream_key[b] : a < b;
    });
    std::vector<std::size_t> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

    FuzzyGraph cfg;
    cfg.n = n;
    cfg.rho.resize(n);
    cfg.sigma.resize(n);
    cfg.stream_key.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cfg.rho[rank[i]] = fg.rho[i];
        cfg.sigma[rank[i]] = fg.sigma[i];
        cfg.stream_key[rank[i]] = fg.stream_key[i];
    }
    for (const auto& e : fg.edges) {
        FuzzyEdge ce;
        ce.i = std::min(rank[e.i], rank[e.j]);
        ce.j = std::max(rank[e.i], rank[e.j]);
        ce.w = e.w;
        cfg.edges.push_back(ce);
    }
    std::sort(cfg.edges.begin(), cfg.edges.end(), [](const FuzzyEdge& a, const FuzzyEdge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });

    double a, b;
    fit_ab(params.min_dist, params.spread, a, b);

    Adjacency adj = build_adjacency(cfg);
    Matrix emb;
    bool have_init = false;
    if (params.init == UmapInit::Spectral && graph_connected(adj))
        have_init = spectral_layout(cfg, adj, params.dim, params.seed, emb);
    if (!have_init) {
        emb = Matrix(n, static_cast<std::size_t>(params.dim));
        for (std::size_t i = 0; i < n; ++i) {
            Rng r(params.seed ^ cfg.stream_key[i], 0x1234ULL);
            for (int d = 0; d < params.dim; ++d)
                emb(i, static_cast<std::size_t>(d)) = r.uniform(-10.0, 10.0);
        }
    }

    // Per-point RNG streams keyed by content hash.
    std::vector<Rng> streams;
    streams.reserve(n);
    for (std::size_t i = 0; i < n; ++i) streams.emplace_back(params.seed, cfg.stream_key[i]);

    double max_w = 0.0;
    for (const auto& e : cfg.edges) max_w = std::max(max_w, e.w);
    std::vector<double> epochs_per_sample(cfg.edges.size());
    std::vector<double> next_sample(cfg.edges.size());
    for (std::size_t e = 0; e < cfg.edges.size(); ++e) {
        epochs_per_sample[e] = cfg.edges[e].w > 0 ? max_w / cfg.edges[e].w : 1e18;
        next_sample[e] = epochs_per_sample[e];
    }

    const int dim = params.dim;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        double alpha =
            params.learning_rate * (1.0 - static_cast<double>(epoch) / params.epochs);
        for (std::size_t e = 0; e < cfg.edges.size(); ++e) {
            if (next_sample[e] > static_cast<double>(epoch + 1)) continue;
            next_sample[e] += epochs_per_sample[e];
            std::size_t hi = cfg.edges[e].i, ti = cfg.edges[e].j;
            double* yh = emb.row(hi);
            double* yt = emb.row(ti);
            double d2 = sq_dist(yh, yt, static_cast<std::size_t>(dim));
            double coeff = 0.0;
            if (d2 > 0.0)
                coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
            for (int d = 0; d < dim; ++d) {
                double g = clip4(coeff * (yh[d] - yt[d]));
                yh[d] += alpha * g;
                yt[d] -= alpha * g;
            }
            for (int s = 0; s < params.neg_rate; ++s) {
                std::size_t j = static_cast<std::size_t>(streams[hi].below(n));
                if (j == hi) continue;
                double* yn = emb.row(j);
                double nd2 = sq_dist(yh, yn, static_cast<std::size_t>(dim));
                double rc = 2.0 * b / ((0.001 + nd2) * (1.0 + a * std::pow(nd2, b)));
                for (int d = 0; d < dim; ++d) {
                    double g = nd2 > 0.0 ? clip4(rc * (yh[d] - yn[d])) : 4.0;
                    yh[d] += alpha * g;
                }
            }
        }
    }
    for (double v : emb.data)
        if (!std::isfinite(v)) throw std::runtime_error("embedding diverged to non-finite values");

    UmapModel model;
    model.params = params;
    model.a = a;
    model.b = b;
    model.train_data = X;
    model.embedding = Matrix(n, static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d)
            model.embedding(i, static_cast<std::size_t>(d)) = emb(rank[i], static_cast<std::size_t>(d));
    return model;
}

UmapModel umap_fit(const Matrix& X, const UmapParams& params) {
    NeighborGraph g = knn_graph(X, params.k);
    FuzzyGraph fg = fuzzy_simplicial_set(g);
    return optimize_embedding(fg, X, params);
}

EmbeddingResult umap_transform(const UmapModel& model, const Matrix& X_new) {
    if (X_new.cols != model.train_data.cols)
        throw std::runtime_error("umap_transform: dimension mismatch with training data");
    const std::size_t n_train = model.train_data.rows;
    const std::size_t k = std::min(model.params.k, n_train - 1);
    const int dim = model.params.dim;
    EmbeddingResult res;
    res.points = Matrix(X_new.rows, static_cast<std::size_t>(dim));

#pragma omp parallel for schedule(static)
    for (std::int64_t pi = 0; pi < static_cast<std::int64_t>(X_new.rows); ++pi) {
        std::size_t p = static_cast<std::size_t>(pi);
        std::vector<std::pair<double, std::size_t>> cand(n_train);
        for (std::size_t j = 0; j < n_train; ++j)
            cand[j] = {sq_dist(X_new.row(p), model.train_data.row(j), X_new.cols), j};
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        std::vector<double> dists(k);
        for (std::size_t m = 0; m < k; ++m) dists[m] = std::sqrt(cand[m].first);
        double rho, sigma;
        smooth_knn_calibrate(dists, k, rho, sigma);
        std::vector<double> w(k);
        double wsum = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            w[m] = std::exp(-std::max(0.0, dists[m] - rho) / sigma);
            wsum += w[m];
        }
        std::vector<double> y(static_cast<std::size_t>(dim), 0.0);
        for (std::size_t m = 0; m < k; ++m)
            for (int d = 0; d < dim; ++d)
                y[static_cast<std::size_t>(d)] +=
                    w[m] / wsum * model.embedding(cand[m].second, static_cast<std::size_t>(d));

        // 30 refinement epochs against the frozen training embedding
        Rng rng(model.params.seed ^ 0xabcdefULL, p);
        const int n_epochs = 30;
        for (int epoch = 0; epoch < n_epochs; ++epoch) {
            double alpha = model.params.learning_rate *
                           (1.0 - static_cast<double>(epoch) / n_epochs);
            for (std::size_t m = 0; m < k; ++m) {
                const double* yt = model.embedding.row(cand[m].second);
                double d2 = 0.0;
                for (int d = 0; d < dim; ++d) {
                    double diff = y[static_cast<std::size_t>(d)] - yt[d];
                    d2 += diff * diff;
                }
                double coeff = 0.0;
                if (d2 > 0.0)
                    coeff = -2.0 * model.a * model.b * std::pow(d2, model.b - 1.0) /
                            (1.0 + model.a * std::pow(d2, model.b));
                coeff *= w[m];
                for (int d = 0; d < dim; ++d)
                    y[static_cast<std::size_t>(d)] +=
                        alpha * clip4(coeff * (y[static_cast<std::size_t>(d)] - yt[d]));
            }
            for (int s = 0; s < model.params.neg_rate; ++s) {
                std::size_t j = static_cast<std::size_t>(rng.below(n_train));
                const double* yn = model.embedding.row(j);
                double d2 = 0.0;
                for (int d = 0; d < dim; ++d) {
                    double diff = y[static_cast<std::size_t>(d)] - yn[d];
                    d2 += diff * diff;
                }
                double rc = 2.0 * model.b /
                            ((0.001 + d2) * (1.0 + model.a * std::pow(d2, model.b)));
                for (int d = 0; d < dim; ++d)
                    y[static_cast<std::size_t>(d)] +=
                        alpha * clip4(rc * (y[static_cast<std::size_t>(d)] - yn[d]));
            }
        }
        for (int d = 0; d < dim; ++d) res.points(p, static_cast<std::size_t>(d)) = y[static_cast<std::size_t>(d)];
    }
    return res;
}

double trustworthiness(const Matrix& X, const Matrix& E, std::size_t k) {
    const std::size_t n = X.rows;
    if (2 * k >= n) throw std::runtime_error("trustworthiness requires k < n/2");
    std::vector<std::vector<std::size_t>> orig_rank(n);   // rank of j among i's original neighbors
    std::vector<std::vector<std::size_t>> orig_knn(n), emb_knn(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
        std::size_t i = static_cast<std::size_t>(ii);
        std::vector<std::pair<double, std::size_t>> co, ce;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            co.emplace_back(sq_dist(X.row(i), X.row(j), X.cols), j);
            ce.emplace_back(sq_dist(E.row(i), E.row(j), E.cols), j);
        }
        std::sort(co.begin(), co.end());
        std::sort(ce.begin(), ce.end());
        orig_rank[i].assign(n, 0);
        for (std::size_t r = 0; r < co.size(); ++r) orig_rank[i][co[r].second] = r + 1;
        for (std::size_t m = 0; m < k; ++m) {
            orig_knn[i].push_back(co[m].second);
            emb_knn[i].push_back(ce[m].second);
        }
    }
    double penalty = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : emb_knn[i]) {
            bool in_orig = std::find(orig_knn[i].begin(), orig_knn[i].end(), j) != orig_knn[i].end();
            if (!in_orig)
                penalty += static_cast<double>(orig_rank[i][j]) - static_cast<double>(k);
        }
    }
    double nn = static_cast<double>(n), kk = static_cast<double>(k);
    return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

}  // namespace ecog
