#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

static std::string g_ecog;
static fs::path g_sandbox;

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-ecog-binary>\n");
        return 1;
    }
    g_ecog = argv[1];
    g_sandbox = fs::temp_directory_path() / "ecog_cli_test";
    fs::remove_all(g_sandbox);
    fs::create_directories(g_sandbox);
    doctest::Context ctx;
    int rc = ctx.run();
    fs::remove_all(g_sandbox);
    return rc;
}

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    fs::path log = g_sandbox / "last_run.log";
    std::string cmd = g_ecog + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream f(log);
    r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    return r;
}

fs::path write_config(const std::string& name, const std::string& body) {
    fs::path p = g_sandbox / name;
    std::ofstream f(p);
    f << body;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// Relative paths of all regular files, excluding the wall-clock-bearing reports.
std::vector<fs::path> listing(const fs::path& root, bool skip_reports) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::string name = e.path().filename().string();
        if (skip_reports && name.size() > 12 &&
            name.substr(name.size() - 12) == "_report.json")
            continue;
        out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

void check_dirs_identical(const fs::path& a, const fs::path& b, bool skip_reports) {
    auto la = listing(a, skip_reports), lb = listing(b, skip_reports);
    REQUIRE(la == lb);
    CHECK(!la.empty());
    for (const auto& rel : la) {
        INFO("file ", rel.string());
        CHECK(slurp(a / rel) == slurp(b / rel));
    }
}

}  // namespace

TEST_CASE("missing and malformed configs exit with the config code") {
    CHECK(run_cli("umap-knn --config /nonexistent/cfg.json").code == 2);

    fs::path bad_json = write_config("bad.json", "{not json");
    CHECK(run_cli("umap-knn --config " + bad_json.string()).code == 2);

    fs::path bad_variant = write_config("bad_variant.json", R"({"variant": "bogus"})");
    RunResult r = run_cli("umap-knn --config " + bad_variant.string());
    CHECK(r.code == 2);
    CHECK(r.output.find("variant") != std::string::npos);

    fs::path bad_task = write_config("bad_task.json", R"({"dl_task": "4-class"})");
    CHECK(run_cli("train --config " + bad_task.string()).code == 2);

    // no dataset_root at all is a configuration problem
    fs::path no_root = write_config("no_root.json", "{}");
    CHECK(run_cli("umap-knn --config " + no_root.string()).code == 2);
}

TEST_CASE("missing data exits with the data code") {
    fs::path cfg = write_config("missing_data.json",
                                R"({"dataset_root": ")" + (g_sandbox / "no_such_dir").string() +
                                    R"("})");
    RunResult r = run_cli("umap-knn --config " + cfg.string());
    CHECK(r.code == 3);
    CHECK(r.output.find("data error") != std::string::npos);

    fs::path ft = write_config(
        "missing_model.json",
        R"({"finetune_source": ")" + (g_sandbox / "no_model.ecnn").string() +
            R"(", "finetune_target": "p0", "out_dir": ")" + (g_sandbox / "ft_out").string() +
            R"("})");
    CHECK(run_cli("finetune --config " + ft.string()).code == 3);
}

TEST_CASE("synth then umap-knn succeed and rerun byte-identically") {
    fs::path d1 = g_sandbox / "cohort_a", d2 = g_sandbox / "cohort_b";
    fs::path synth_cfg = write_config("synth.json", R"({
        "seed": 7,
        "synth": {"n_participants": 2, "deltas": [0.2, 0.9]}
    })");
    std::string base = "synth --config " + synth_cfg.string() + " --out " +
                       (g_sandbox / "synth_out").string();
    CHECK(run_cli(base + " --data " + d1.string()).code == 0);
    CHECK(run_cli(base + " --data " + d2.string()).code == 0);
    REQUIRE(fs::exists(d1 / "cohort.json"));
    check_dirs_identical(d1, d2, false);  // dataset itself carries no reports

    fs::path run_cfg = write_config("run.json", R"({
        "dataset_root": ")" + d1.string() + R"(",
        "seed": 7,
        "n_boot": 50,
        "umap": {"epochs": 100}
    })");
    fs::path o1 = g_sandbox / "out_a", o2 = g_sandbox / "out_b";
    CHECK(run_cli("umap-knn --config " + run_cfg.string() + " --out " + o1.string()).code == 0);
    CHECK(run_cli("umap-knn --config " + run_cfg.string() + " --out " + o2.string()).code == 0);
    CHECK(fs::exists(o1 / "table1.csv"));
    CHECK(fs::exists(o1 / "embedding_p0_processed.svg"));
    CHECK(fs::exists(o1 / "umap-knn_report.json"));
    check_dirs_identical(o1, o2, true);

    fs::path e1 = g_sandbox / "eda_a", e2 = g_sandbox / "eda_b";
    CHECK(run_cli("eda --config " + run_cfg.string() + " --out " + e1.string()).code == 0);
    CHECK(run_cli("eda --config " + run_cfg.string() + " --out " + e2.string()).code == 0);
    CHECK(fs::exists(e1 / "table2.csv"));
    CHECK(fs::exists(e1 / "psd_p0_real.csv"));
    check_dirs_identical(e1, e2, true);

    // a different seed must change the embedding outputs
    fs::path o3 = g_sandbox / "out_c";
    CHECK(run_cli("umap-knn --config " + run_cfg.string() + " --seed 8 --out " +
                  o3.string()).code == 0);
    CHECK(slurp(o1 / "table1.csv") != slurp(o3 / "table1.csv"));
}

TEST_CASE("screening requires at least three participants") {
    fs::path d = g_sandbox / "cohort_small";
    fs::path synth_cfg = write_config("synth_small.json", R"({
        "seed": 3,
        "synth": {"n_participants": 2, "deltas": [0.1, 0.8]}
    })");
    REQUIRE(run_cli("synth --config " + synth_cfg.string() + " --out " +
                    (g_sandbox / "synth_small_out").string() + " --data " + d.string()).code == 0);

    fs::path cfg = write_config("screen_small.json", R"({
        "dataset_root": ")" + d.string() + R"(",
        "out_dir": ")" + (g_sandbox / "screen_out").string() + R"("
    })");
    RunResult r = run_cli("screen --config " + cfg.string());
    CHECK(r.code == 3);
    CHECK(r.output.find("n ≥ 3 required") != std::string::npos);
}
