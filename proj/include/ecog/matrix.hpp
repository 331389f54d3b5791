#ifndef ECOG_MATRIX_HPP
#define ECOG_MATRIX_HPP

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ecog {

// Dense row-major double matrix. Feature tables, embeddings, graph weights
// all go through this; the NN engine has its own float tensor type.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool empty() const { return rows == 0 || cols == 0; }
};

inline double sq_dist(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace ecog

#endif
