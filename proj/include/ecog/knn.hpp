#ifndef ECOG_KNN_HPP
#define ECOG_KNN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ecog/matrix.hpp"
#include "ecog/umap.hpp"

namespace ecog {

struct KnnModel {
    Matrix points;  // m x d reference embedding
    std::vector<int> labels;
    std::size_t k = 4;
};

KnnModel knn_fit(const Matrix& points, const std::vector<int>& labels, std::size_t k = 4);

int knn_predict(const KnnModel& model, const double* query, std::size_t dim);

double knn_score(const KnnModel& model, const Matrix& points, const std::vector<int>& labels);

// One participant's features, both preprocessing variants, already split.
struct ParticipantFeatures {
    std::string participant_id;
    Matrix processed_train, processed_test;
    Matrix unprocessed_train, unprocessed_test;
    std::vector<int> train_labels_proc, test_labels_proc;
    std::vector<int> train_labels_unproc, test_labels_unproc;
};

struct EvaluationRow {
    std::string participant_id;
    double processed_train = 0, processed_test = 0;
    double unprocessed_train = 0, unprocessed_test = 0;
};

struct EvaluationTable {
    std::vector<EvaluationRow> rows;
    EvaluationRow averages;  // arithmetic mean of rows
};

struct ParticipantEmbeddings {
    Matrix proc_train, proc_test, unproc_train, unproc_test;
};

EvaluationTable evaluate_participants(const std::vector<ParticipantFeatures>& datasets,
                                      const UmapParams& umap_params, std::size_t knn_k,
                                      std::uint64_t seed,
                                      std::vector<ParticipantEmbeddings>* embeddings_out = nullptr);

void export_table1_csv(const EvaluationTable& table, const std::string& path);

struct ScreeningRow {
    std::string participant_id;
    double knn_test_score = 0;
    double dl_test_accuracy = 0;
    std::string dl_architecture;
    bool screen_in = false;
};

struct ScreeningReport {
    std::vector<ScreeningRow> rows;
    double spearman_rho = 0.0;
    double threshold = 0.8;
};

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

ScreeningReport screening_correlation(const std::vector<ScreeningRow>& inputs,
                                      double threshold = 0.8);

void export_screening_json(const ScreeningReport& report, const std::string& path);

}  // namespace ecog

#endif
