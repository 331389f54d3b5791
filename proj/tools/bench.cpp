// Benchmark comparing the OpenMP kernels against their serial reference paths.
// Run with OMP_NUM_THREADS to control parallel width.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ecog/dsp.hpp"
#include "ecog/matrix.hpp"
#include "ecog/nn.hpp"
#include "ecog/rng.hpp"
#include "ecog/umap.hpp"

using namespace ecog;

static double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <class F>
static double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

static void report(const char* name, double serial_s, double parallel_s) {
    std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n", name,
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s);
}

// serial twin of the parallel distance pass inside knn_graph
static void knn_rows_serial(const Matrix& x, Matrix& d) {
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.rows; ++j)
            d(i, j) = sq_dist(x.row(i), x.row(j), x.cols);
}

static void knn_rows_parallel(const Matrix& x, Matrix& d) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(x.rows); ++ii) {
        auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < x.rows; ++j)
            d(i, j) = sq_dist(x.row(i), x.row(j), x.cols);
    }
}

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled; parallel paths run serially\n");
#endif

    Rng rng(42);

    {
        Matrix x(600, 64);
        for (double& v : x.data) v = rng.normal();
        Matrix d(x.rows, x.rows);
        double ts = time_best_of(3, [&] { knn_rows_serial(x, d); });
        Matrix d2(x.rows, x.rows);
        double tp = time_best_of(3, [&] { knn_rows_parallel(x, d2); });
        double diff = 0;
        for (std::size_t i = 0; i < d.data.size(); ++i)
            diff = std::max(diff, std::abs(d.data[i] - d2.data[i]));
        report("pairwise distances 600x64", ts, tp);
        std::printf("%-28s max |serial - parallel| = %g\n", "", diff);
    }

    {
        EpochSet es;
        es.n_epochs = 24;
        es.n_time = 2000;
        es.n_channels = 16;
        es.data.resize(es.n_epochs * es.n_time * es.n_channels);
        for (double& v : es.data) v = rng.normal();
        es.labels.assign(es.n_epochs, 0);

        // serial reference: one channel at a time through the same filters
        double ts = time_best_of(2, [&] {
            for (std::size_t e = 0; e < es.n_epochs; ++e)
                for (std::size_t c = 0; c < es.n_channels; ++c) {
                    std::vector<double> x(es.n_time);
                    for (std::size_t t = 0; t < es.n_time; ++t) x[t] = es.at(e, t, c);
                    volatile double sink = power_envelope(x, 1000.0)[0];
                    (void)sink;
                }
        });
        double tp = time_best_of(2, [&] { power_envelope_epochs(es, 1000.0); });
        report("power envelope 24x2000x16", ts, tp);
    }

    {
        nn::Tensor<float> x({32, 64, 16, 1});
        for (float& v : x.v) v = static_cast<float>(rng.normal());
        nn::Model<float> model;
        model.specs = {nn::LayerSpec::conv2d(8, 5, 5, 1, nn::Padding::Same),
                       nn::LayerSpec::relu(),
                       nn::LayerSpec::maxpool(2, 2),
                       nn::LayerSpec::flatten(),
                       nn::LayerSpec::dense(32)};
        model.build({64, 16, 1}, 32, 7);
        double tp = time_best_of(3, [&] { model.forward(x, false); });
#ifdef _OPENMP
        int saved = omp_get_max_threads();
        omp_set_num_threads(1);
        double ts = time_best_of(3, [&] { model.forward(x, false); });
        omp_set_num_threads(saved);
#else
        double ts = tp;
#endif
        report("conv forward 32x64x16", ts, tp);
    }

    return 0;
}
