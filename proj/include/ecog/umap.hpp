#ifndef ECOG_UMAP_HPP
#define ECOG_UMAP_HPP

#include <cstdint>
#include <vector>

#include "ecog/matrix.hpp"

namespace ecog {

struct NeighborGraph {
    std::vector<std::vector<std::size_t>> indices;  // n rows of k neighbor ids
    std::vector<std::vector<double>> distances;     // ascending within each row
    std::size_t k = 0;
};

struct FuzzyEdge {
    std::size_t i = 0;
    std::size_t j = 0;
    double w = 0.0;
};

struct FuzzyGraph {
    std::size_t n = 0;
    std::vector<FuzzyEdge> edges;  // symmetric, stored once per unordered pair (i < j)
    std::vector<double> rho;
    std::vector<double> sigma;
    std::vector<std::uint64_t> stream_key;  // content hash per point, follows the point
                                            // under row permutation
    double weight(std::size_t i, std::size_t j) const;
};

enum class UmapInit { Spectral, Random };

struct UmapParams {
    std::size_t k = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    int dim = 2;
    int epochs = 300;
    double learning_rate = 1.0;
    int neg_rate = 5;
    UmapInit init = UmapInit::Spectral;
    std::uint64_t seed = 0;
};

struct UmapModel {
    Matrix embedding;  // n x dim
    double a = 0.0, b = 0.0;
    Matrix train_data;  // retained for out-of-sample transform
    UmapParams params;
};

struct EmbeddingResult {
    Matrix points;
    std::vector<int> labels;
};

NeighborGraph knn_graph(const Matrix& X, std::size_t k);

// rho = smallest positive neighbor distance; sigma calibrated so the fuzzy
// membership mass equals log2(k)
void smooth_knn_calibrate(const std::vector<double>& row_distances, std::size_t k, double& rho,
                          double& sigma);

FuzzyGraph fuzzy_simplicial_set(const NeighborGraph& g);

// least-squares fit of 1/(1 + a x^(2b)) to the min_dist/spread target curve
void fit_ab(double min_dist, double spread, double& a, double& b);

UmapModel optimize_embedding(const FuzzyGraph& fg, const Matrix& X, const UmapParams& params);

UmapModel umap_fit(const Matrix& X, const UmapParams& params);

EmbeddingResult umap_transform(const UmapModel& model, const Matrix& X_new);

double trustworthiness(const Matrix& X, const Matrix& E, std::size_t k);

}  // namespace ecog

#endif
