#include "ecog/knn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace ecog {

KnnModel knn_fit(const Matrix& points, const std::vector<int>& labels, std::size_t k) {
    if (points.rows != labels.size()) throw std::runtime_error("knn_fit: label count mismatch");
    if (k >= points.rows) throw std::runtime_error("knn_fit: k must be < number of points");
    return KnnModel{points, labels, k};
}

int knn_predict(const KnnModel& model, const double* query, std::size_t dim) {
    if (dim != model.points.cols) throw std::runtime_error("knn_predict: dimension mismatch");
    std::vector<std::pair<double, std::size_t>> cand(model.points.rows);
    for (std::size_t j = 0; j < model.points.rows; ++j)
        cand[j] = {sq_dist(query, model.points.row(j), dim), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(model.k),
                      cand.end());
    std::map<int, int> votes;
    for (std::size_t m = 0; m < model.k; ++m) ++votes[model.labels[cand[m].second]];
    // majority vote; ties go to the smallest class index (map iterates ascending)
    int best = -1, best_count = -1;
    for (const auto& [cls, count] : votes)
        if (count > best_count) {
            best = cls;
            best_count = count;
        }
    return best;
}

double knn_score(const KnnModel& model, const Matrix& points, const std::vector<int>& labels) {
    if (points.rows != labels.size()) throw std::runtime_error("knn_score: label count mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < points.rows; ++i)
        if (knn_predict(model, points.row(i), points.cols) == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(points.rows);
}

namespace {

struct VariantScores {
    double train = 0, test = 0;
    Matrix train_emb, test_emb;
};

VariantScores score_variant(const Matrix& train_X, const std::vector<int>& train_y,
                            const Matrix& test_X, const std::vector<int>& test_y,
                            UmapParams umap_params, std::size_t knn_k, std::uint64_t seed) {
    umap_params.seed = seed;
    umap_params.k = std::min(umap_params.k, train_X.rows - 1);
    UmapModel model = umap_fit(train_X, umap_params);
    EmbeddingResult test_emb = umap_transform(model, test_X);
    KnnModel knn = knn_fit(model.embedding, train_y, std::min(knn_k, train_X.rows - 1));
    VariantScores s;
    s.train = knn_score(knn, model.embedding, train_y);
    s.test = knn_score(knn, test_emb.points, test_y);
    s.train_emb = model.embedding;
    s.test_emb = test_emb.points;
    return s;
}

}  // namespace

EvaluationTable evaluate_participants(const std::vector<ParticipantFeatures>& datasets,
                                      const UmapParams& umap_params, std::size_t knn_k,
                                      std::uint64_t seed,
                                      std::vector<ParticipantEmbeddings>* embeddings_out) {
    if (datasets.empty()) throw std::runtime_error("evaluate_participants: missing participant data");
    EvaluationTable table;
    table.rows.resize(datasets.size());
    if (embeddings_out) embeddings_out->resize(datasets.size());
    for (std::size_t p = 0; p < datasets.size(); ++p) {
        const auto& d = datasets[p];
        EvaluationRow row;
        row.participant_id = d.participant_id;
        VariantScores proc = score_variant(d.processed_train, d.train_labels_proc,
                                           d.processed_test, d.test_labels_proc, umap_params,
                                           knn_k, seed + 2 * p);
        VariantScores unproc = score_variant(d.unprocessed_train, d.train_labels_unproc,
                                             d.unprocessed_test, d.test_labels_unproc,
                                             umap_params, knn_k, seed + 2 * p + 1);
        row.processed_train = proc.train;
        row.processed_test = proc.test;
        row.unprocessed_train = unproc.train;
        row.unprocessed_test = unproc.test;
        if (embeddings_out) {
            auto& pe = (*embeddings_out)[p];
            pe.proc_train = std::move(proc.train_emb);
            pe.proc_test = std::move(proc.test_emb);
            pe.unproc_train = std::move(unproc.train_emb);
            pe.unproc_test = std::move(unproc.test_emb);
        }
        table.rows[p] = row;
    }
    auto& avg = table.averages;
    avg.participant_id = "Avg";
    for (const auto& r : table.rows) {
        avg.processed_train += r.processed_train;
        avg.processed_test += r.processed_test;
        avg.unprocessed_train += r.unprocessed_train;
        avg.unprocessed_test += r.unprocessed_test;
    }
    double inv = 1.0 / static_cast<double>(table.rows.size());
    avg.processed_train *= inv;
    avg.processed_test *= inv;
    avg.unprocessed_train *= inv;
    avg.unprocessed_test *= inv;
    return table;
}

void export_table1_csv(const EvaluationTable& table, const std::string& path) {
    std::ofstream f(path);
    f << "participant,preprocessed_train,preprocessed_test,unprocessed_train,unprocessed_test\n";
    auto emit = [&f](const EvaluationRow& r) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f\n", r.participant_id.c_str(),
                      r.processed_train, r.processed_test, r.unprocessed_train,
                      r.unprocessed_test);
        f << buf;
    };
    for (const auto& r : table.rows) emit(r);
    emit(table.averages);
}

static std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
        for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::runtime_error("spearman_rho: length mismatch");
    if (a.size() < 3) throw std::runtime_error("spearman_rho: n >= 3 required");
    std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

ScreeningReport screening_correlation(const std::vector<ScreeningRow>& inputs, double threshold) {
    ScreeningReport report;
    report.threshold = threshold;
    report.rows = inputs;
    std::vector<double> knn, dl;
    for (auto& r : report.rows) {
        r.screen_in = r.knn_test_score >= threshold;
        knn.push_back(r.knn_test_score);
        dl.push_back(r.dl_test_accuracy);
    }
    report.spearman_rho = spearman_rho(knn, dl);
    return report;
}

void export_screening_json(const ScreeningReport& report, const std::string& path) {
    nlohmann::json j;
    j["spearman_rho"] = report.spearman_rho;
    j["threshold"] = report.threshold;
    j["participants"] = nlohmann::json::array();
    for (const auto& r : report.rows) {
        j["participants"].push_back({{"participant", r.participant_id},
                                     {"knn_test_score", r.knn_test_score},
                                     {"dl_test_accuracy", r.dl_test_accuracy},
                                     {"dl_architecture", r.dl_architecture},
                                     {"verdict", r.screen_in ? "screen-in" : "screen-out"}});
    }
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

}  // namespace ecog
