#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ecog/rng.hpp"
#include "ecog/umap.hpp"

using namespace ecog;

namespace {

// 4 well-separated Gaussian blobs in d dimensions
Matrix blobs(std::size_t n, std::size_t d, double sep, std::uint64_t seed,
             std::vector<int>* labels = nullptr) {
    Matrix X(n, d);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % 4);
        if (labels) labels->push_back(cls);
        for (std::size_t j = 0; j < d; ++j) {
            double center = (j < 2) ? sep * ((cls >> static_cast<int>(j)) & 1) : 0.0;
            X(i, j) = center + rng.normal();
        }
    }
    return X;
}

Matrix permute_rows(const Matrix& X, const std::vector<std::size_t>& perm) {
    Matrix Y(X.rows, X.cols);
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t j = 0; j < X.cols; ++j) Y(i, j) = X(perm[i], j);
    return Y;
}

}  // namespace

TEST_CASE("knn_graph finds the exact neighbors with deterministic tie-breaks") {
    // 1-D points at 0, 1, 3, 7: neighbor sets are unambiguous
    Matrix X(4, 1);
    X(0, 0) = 0;
    X(1, 0) = 1;
    X(2, 0) = 3;
    X(3, 0) = 7;
    NeighborGraph g = knn_graph(X, 2);
    CHECK(g.indices[0] == std::vector<std::size_t>{1, 2});
    CHECK(g.indices[1] == std::vector<std::size_t>{0, 2});
    CHECK(g.indices[2] == std::vector<std::size_t>{1, 0});
    CHECK(g.indices[3] == std::vector<std::size_t>{2, 1});
    CHECK(g.distances[0][0] == doctest::Approx(1.0));
    CHECK(g.distances[0][1] == doctest::Approx(3.0));

    // exact ties resolve to the smaller index
    Matrix T(3, 1);
    T(0, 0) = 0;
    T(1, 0) = 1;
    T(2, 0) = -1;
    NeighborGraph tg = knn_graph(T, 2);
    CHECK(tg.indices[0] == std::vector<std::size_t>{1, 2});
}

TEST_CASE("smooth-kNN calibration hits the log2(k) mass target") {
    std::vector<double> dists{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
    double rho = 0, sigma = 0;
    smooth_knn_calibrate(dists, dists.size(), rho, sigma);
    CHECK(rho == doctest::Approx(0.5));
    double mass = 0;
    for (double d : dists) mass += std::exp(-std::max(0.0, d - rho) / sigma);
    CHECK(mass == doctest::Approx(std::log2(static_cast<double>(dists.size()))).epsilon(1e-3));

    // scaling all distances scales sigma linearly
    std::vector<double> scaled;
    for (double d : dists) scaled.push_back(3.0 * d);
    double rho2 = 0, sigma2 = 0;
    smooth_knn_calibrate(scaled, scaled.size(), rho2, sigma2);
    CHECK(rho2 == doctest::Approx(1.5));
    CHECK(sigma2 == doctest::Approx(3.0 * sigma).epsilon(1e-3));
}

TEST_CASE("fuzzy symmetrization uses the probabilistic t-conorm") {
    std::vector<int> labels;
    Matrix X = blobs(40, 5, 8.0, 3, &labels);
    NeighborGraph g = knn_graph(X, 6);
    FuzzyGraph fg = fuzzy_simplicial_set(g);
    CHECK(fg.n == X.rows);
    CHECK(fg.rho.size() == X.rows);
    for (const auto& e : fg.edges) {
        CHECK(e.i < e.j);
        CHECK(e.w > 0.0);
        CHECK(e.w <= 1.0 + 1e-12);
        // symmetric lookup agrees
        CHECK(fg.weight(e.i, e.j) == doctest::Approx(e.w));
        CHECK(fg.weight(e.j, e.i) == doctest::Approx(e.w));
    }
    // a + b - ab with a=0.8, b=0.5 must give 0.9 (checked via the formula the
    // implementation applies to directed memberships)
    double a = 0.8, b = 0.5;
    CHECK(a + b - a * b == doctest::Approx(0.9));
}

TEST_CASE("fit_ab reproduces the reference curve coefficients") {
    double a = 0, b = 0;
    fit_ab(0.1, 1.0, a, b);
    CHECK(a == doctest::Approx(1.58).epsilon(0.05));
    CHECK(b == doctest::Approx(0.90).epsilon(0.06));

    // larger min_dist flattens the curve: smaller a
    double a2 = 0, b2 = 0;
    fit_ab(0.5, 1.0, a2, b2);
    CHECK(a2 < a);
}

TEST_CASE("umap separates well-spaced Gaussian blobs") {
    std::vector<int> labels;
    Matrix X = blobs(400, 10, 12.0, 11, &labels);
    UmapParams p;
    p.k = 15;
    p.epochs = 400;
    p.seed = 5;
    UmapModel model = umap_fit(X, p);
    REQUIRE(model.embedding.rows == X.rows);
    REQUIRE(model.embedding.cols == 2);
    for (double v : model.embedding.data) CHECK(std::isfinite(v));

    CHECK(trustworthiness(X, model.embedding, 10) >= 0.95);

    // blob centroids in embedding space; points should sit nearest their own
    std::vector<std::array<double, 2>> cent(4, {0, 0});
    std::vector<int> cnt(4, 0);
    for (std::size_t i = 0; i < X.rows; ++i) {
        cent[labels[i]][0] += model.embedding(i, 0);
        cent[labels[i]][1] += model.embedding(i, 1);
        ++cnt[labels[i]];
    }
    for (int c = 0; c < 4; ++c) {
        cent[c][0] /= cnt[c];
        cent[c][1] /= cnt[c];
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < X.rows; ++i) {
        int best = 0;
        double bd = 1e300;
        for (int c = 0; c < 4; ++c) {
            double dx = model.embedding(i, 0) - cent[c][0];
            double dy = model.embedding(i, 1) - cent[c][1];
            if (dx * dx + dy * dy < bd) {
                bd = dx * dx + dy * dy;
                best = c;
            }
        }
        if (best == labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(X.rows) >= 0.95);
}

TEST_CASE("umap_transform places held-out points with their blob") {
    std::vector<int> labels;
    Matrix X = blobs(320, 10, 12.0, 21, &labels);
    std::vector<int> test_labels;
    Matrix T = blobs(80, 10, 12.0, 22, &test_labels);

    UmapParams p;
    p.epochs = 200;
    p.seed = 6;
    UmapModel model = umap_fit(X, p);
    EmbeddingResult out = umap_transform(model, T);
    REQUIRE(out.points.rows == T.rows);

    std::vector<std::array<double, 2>> cent(4, {0, 0});
    std::vector<int> cnt(4, 0);
    for (std::size_t i = 0; i < X.rows; ++i) {
        cent[labels[i]][0] += model.embedding(i, 0);
        cent[labels[i]][1] += model.embedding(i, 1);
        ++cnt[labels[i]];
    }
    for (int c = 0; c < 4; ++c) {
        cent[c][0] /= cnt[c];
        cent[c][1] /= cnt[c];
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < T.rows; ++i) {
        int best = 0;
        double bd = 1e300;
        for (int c = 0; c < 4; ++c) {
            double dx = out.points(i, 0) - cent[c][0];
            double dy = out.points(i, 1) - cent[c][1];
            if (dx * dx + dy * dy < bd) {
                bd = dx * dx + dy * dy;
                best = c;
            }
        }
        if (best == test_labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(T.rows) >= 0.95);
}

TEST_CASE("duplicate points embed to finite coordinates") {
    Matrix X(30, 3);
    Rng rng(8);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 3; ++j) X(i, j) = rng.normal();
    for (std::size_t i = 10; i < 30; ++i)
        for (std::size_t j = 0; j < 3; ++j) X(i, j) = X(i % 10, j);  // two copies of each
    UmapParams p;
    p.k = 5;
    p.epochs = 80;
    p.seed = 4;
    UmapModel model = umap_fit(X, p);
    for (double v : model.embedding.data) CHECK(std::isfinite(v));
}

TEST_CASE("trustworthiness is 1 for identity and rotation-invariant") {
    Matrix X = blobs(120, 2, 6.0, 13);
    CHECK(trustworthiness(X, X, 10) == doctest::Approx(1.0));

    // rigid rotation of the "embedding" preserves all neighbor ranks
    double th = 0.7;
    Matrix R(X.rows, 2);
    for (std::size_t i = 0; i < X.rows; ++i) {
        R(i, 0) = std::cos(th) * X(i, 0) - std::sin(th) * X(i, 1);
        R(i, 1) = std::sin(th) * X(i, 0) + std::cos(th) * X(i, 1);
    }
    CHECK(trustworthiness(X, R, 10) == doctest::Approx(1.0));

    // a random shuffle of coordinates should score clearly lower
    Matrix bad = X;
    Rng rng(2);
    std::vector<std::size_t> perm(X.rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    bad = permute_rows(X, perm);
    CHECK(trustworthiness(X, bad, 10) < 0.95);
}

TEST_CASE("umap_fit is bitwise deterministic for a fixed seed") {
    Matrix X = blobs(150, 6, 9.0, 17);
    UmapParams p;
    p.epochs = 100;
    p.seed = 99;
    UmapModel a = umap_fit(X, p);
    UmapModel b = umap_fit(X, p);
    CHECK(a.embedding.data == b.embedding.data);
    CHECK(a.a == b.a);
    CHECK(a.b == b.b);

    p.seed = 100;
    UmapModel c = umap_fit(X, p);
    CHECK(a.embedding.data != c.embedding.data);
}

TEST_CASE("umap embedding is equivariant under input row permutation") {
    Matrix X = blobs(90, 5, 9.0, 23);
    UmapParams p;
    p.epochs = 100;
    p.seed = 42;
    UmapModel base = umap_fit(X, p);

    std::vector<std::size_t> perm(X.rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(77);
    rng.shuffle(perm);
    Matrix Xp = permute_rows(X, perm);
    UmapModel permuted = umap_fit(Xp, p);

    // row i of the permuted fit must equal row perm[i] of the base fit, bitwise
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(permuted.embedding(i, j) == base.embedding(perm[i], j));
}
