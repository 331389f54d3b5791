#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ecog/dataset.hpp"
#include "ecog/rng.hpp"

using namespace ecog;
namespace fs = std::filesystem;

namespace {

Recording make_recording(std::int64_t n_samples = 12000, int channels = 4,
                         std::uint64_t seed = 3) {
    Recording rec;
    rec.participant_id = "t0";
    rec.condition = Condition::Real;
    rec.srate = 1000;
    rec.voltages = Matrix(static_cast<std::size_t>(n_samples), static_cast<std::size_t>(channels));
    Rng rng(seed);
    for (double& v : rec.voltages.data) v = rng.normal();
    // events every 3000 samples: 2000-long stimulus, 1000 rest
    for (std::int64_t t = 500; t + 2000 <= n_samples - 500; t += 3000)
        rec.events.push_back({t, t + 2000, rec.events.size() % 2 == 0 ? 11 : 12});
    rec.padded_channels.assign(static_cast<std::size_t>(channels), false);
    rec.validate();
    return rec;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("container round-trip preserves every sample bit-for-bit") {
    Recording rec = make_recording();
    // force values through f32 first so the round-trip comparison is exact
    for (double& v : rec.voltages.data) v = static_cast<float>(v);
    fs::path dir = fs::temp_directory_path() / "ecog_test_roundtrip";
    fs::remove_all(dir);
    save_recording(rec, dir.string());
    Recording back = load_recording(dir.string());

    CHECK(back.participant_id == rec.participant_id);
    CHECK(back.condition == rec.condition);
    CHECK(back.srate == rec.srate);
    REQUIRE(back.voltages.data.size() == rec.voltages.data.size());
    CHECK(back.voltages.data == rec.voltages.data);
    REQUIRE(back.events.size() == rec.events.size());
    for (std::size_t i = 0; i < back.events.size(); ++i) {
        CHECK(back.events[i].t_on == rec.events[i].t_on);
        CHECK(back.events[i].t_off == rec.events[i].t_off);
        CHECK(back.events[i].stim_id == rec.events[i].stim_id);
    }

    // saving the loaded recording again produces identical bytes
    fs::path dir2 = fs::temp_directory_path() / "ecog_test_roundtrip2";
    fs::remove_all(dir2);
    save_recording(back, dir2.string());
    CHECK(read_bytes(dir / "voltage.bin") == read_bytes(dir2 / "voltage.bin"));
    CHECK(read_bytes(dir / "manifest.json") == read_bytes(dir2 / "manifest.json"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("loader rejects corrupt containers") {
    Recording rec = make_recording(4000, 2);
    fs::path dir = fs::temp_directory_path() / "ecog_test_corrupt";
    fs::remove_all(dir);
    save_recording(rec, dir.string());

    SUBCASE("truncated voltage.bin") {
        fs::resize_file(dir / "voltage.bin", 100);
        CHECK_THROWS(load_recording(dir.string()));
    }
    SUBCASE("missing manifest") {
        fs::remove(dir / "manifest.json");
        CHECK_THROWS(load_recording(dir.string()));
    }
    SUBCASE("bad format version") {
        std::string m = read_bytes(dir / "manifest.json");
        auto pos = m.find("ecog-bin-1");
        m.replace(pos, 10, "ecog-bin-9");
        std::ofstream(dir / "manifest.json") << m;
        CHECK_THROWS(load_recording(dir.string()));
    }
    fs::remove_all(dir);
}

TEST_CASE("validate flags bad events and non-finite samples") {
    Recording rec = make_recording(4000, 2);
    SUBCASE("event past end") {
        rec.events.push_back({3500, 4500, 11});
        CHECK_THROWS(rec.validate());
    }
    SUBCASE("inverted event") {
        rec.events.insert(rec.events.begin(), {400, 300, 11});
        CHECK_THROWS(rec.validate());
    }
    SUBCASE("NaN sample") {
        rec.voltages(0, 0) = std::nan("");
        CHECK_THROWS(rec.validate());
    }
}

TEST_CASE("harmonize_channels pads or truncates to a common width") {
    Recording a = make_recording(4000, 4, 1);
    Recording b = make_recording(4000, 6, 2);

    auto trunc = harmonize_channels({a, b}, HarmonizeMode::Truncate);
    CHECK(trunc[0].n_channels() == 4);
    CHECK(trunc[1].n_channels() == 4);
    CHECK(trunc[1].voltages(7, 3) == b.voltages(7, 3));

    auto pad = harmonize_channels({a, b}, HarmonizeMode::PadNull);
    CHECK(pad[0].n_channels() == 6);
    CHECK(pad[0].voltages(5, 5) == 0.0);
    CHECK(pad[0].padded_channels[5]);
    CHECK_FALSE(pad[0].padded_channels[3]);
    CHECK_FALSE(pad[1].padded_channels[5]);
}

TEST_CASE("stimulus epoch slicing copies the exact window per event") {
    Recording rec = make_recording();
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    REQUIRE(es.n_epochs == rec.events.size());
    CHECK(es.n_time == 2000);
    for (std::size_t e = 0; e < es.n_epochs; ++e) {
        CHECK(es.meta.source_offsets[e] == rec.events[e].t_on);
        CHECK(es.labels[e] == 0);  // real condition
        for (std::size_t t : {std::size_t{0}, std::size_t{999}, std::size_t{1999}})
            for (std::size_t c = 0; c < es.n_channels; ++c)
                CHECK(es.at(e, t, c) ==
                      rec.voltages(static_cast<std::size_t>(rec.events[e].t_on) + t, c));
    }

    Recording imag = rec;
    imag.condition = Condition::Imagery;
    CHECK(extract_stimulus_epochs(imag, 2000).labels[0] == 1);
}

TEST_CASE("stimulus epochs drop events whose window runs past the end") {
    Recording rec = make_recording(5000, 2);
    rec.events = {{100, 2100, 11}, {4000, 4500, 12}};  // second window would need 6000 samples
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    CHECK(es.n_epochs == 1);
    CHECK(es.meta.dropped_events == 1);
}

TEST_CASE("interval epochs label tongue/hand/rest and honour the gap rule") {
    Recording rec = make_recording(20000, 2);
    rec.events = {{1000, 2000, 11}, {6000, 7000, 12}, {8000, 9000, 11}};
    EpochSet es = extract_interval_epochs(rec, 3000);
    // epochs: ev0 (tongue), rest after ev0 (gap 4000 >= 3000), ev1 (hand),
    // no rest after ev1 (gap 1000), ev2 (tongue)
    REQUIRE(es.n_epochs == 4);
    CHECK(es.labels == std::vector<int>{0, 2, 1, 0});
    CHECK(es.meta.source_offsets == std::vector<std::int64_t>{1000, 2000, 6000, 8000});
    // rest epoch content starts exactly at t_off of the preceding event
    for (std::size_t c = 0; c < es.n_channels; ++c)
        CHECK(es.at(1, 0, c) == rec.voltages(2000, c));
}

TEST_CASE("normalize_unit maps to [0,1] and ignores padded channels") {
    Recording rec = make_recording(9000, 3);
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    EpochSet norm = normalize_unit(es);
    double lo = 1e300, hi = -1e300;
    for (double v : norm.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));
    // idempotent up to floating error
    EpochSet twice = normalize_unit(norm);
    for (std::size_t i = 0; i < norm.data.size(); ++i)
        CHECK(twice.data[i] == doctest::Approx(norm.data[i]).epsilon(1e-12));

    // a padded all-zero channel must not clamp the range
    es.meta.padded_channels = {false, false, true};
    for (std::size_t e = 0; e < es.n_epochs; ++e)
        for (std::size_t t = 0; t < es.n_time; ++t) es.at(e, t, 2) = 0.0;
    EpochSet norm2 = normalize_unit(es);
    lo = 1e300;
    hi = -1e300;
    for (std::size_t e = 0; e < norm2.n_epochs; ++e)
        for (std::size_t t = 0; t < norm2.n_time; ++t)
            for (std::size_t c = 0; c < 2; ++c) {
                lo = std::min(lo, norm2.at(e, t, c));
                hi = std::max(hi, norm2.at(e, t, c));
            }
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));
}

TEST_CASE("normalize_unit of a constant signal warns and zeroes") {
    Recording rec = make_recording(9000, 2);
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    std::fill(es.data.begin(), es.data.end(), 5.0);
    EpochSet norm = normalize_unit(es);
    CHECK(norm.meta.warnings == 1);
    for (double v : norm.data) CHECK(v == 0.0);
}

TEST_CASE("normalize_mean gives unit mean absolute value per channel") {
    Recording rec = make_recording(9000, 3);
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    EpochSet norm = normalize_mean(es);
    for (std::size_t c = 0; c < norm.n_channels; ++c) {
        double s = 0.0;
        for (std::size_t e = 0; e < norm.n_epochs; ++e)
            for (std::size_t t = 0; t < norm.n_time; ++t) s += std::abs(norm.at(e, t, c));
        CHECK(s / static_cast<double>(norm.n_epochs * norm.n_time) == doctest::Approx(1.0));
    }
}

TEST_CASE("epoch_features_mean equals the hand-computed time average") {
    EpochSet es;
    es.n_epochs = 2;
    es.n_time = 3;
    es.n_channels = 2;
    es.data = {1, 10, 2, 20, 3, 30, 4, 40, 5, 50, 6, 60};
    es.labels = {0, 1};
    Matrix f = epoch_features_mean(es);
    CHECK(f(0, 0) == doctest::Approx(2.0));
    CHECK(f(0, 1) == doctest::Approx(20.0));
    CHECK(f(1, 0) == doctest::Approx(5.0));
    CHECK(f(1, 1) == doctest::Approx(50.0));
}

TEST_CASE("split_train_test partitions exactly and is seed-deterministic") {
    Recording rec = make_recording(40000, 2);
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    REQUIRE(es.n_epochs >= 8);
    SplitPair a = split_train_test(es, 0.75, 11);
    SplitPair b = split_train_test(es, 0.75, 11);
    SplitPair c = split_train_test(es, 0.75, 12);

    CHECK(a.train_indices == b.train_indices);
    CHECK(a.test_indices == b.test_indices);
    CHECK(a.train_indices != c.train_indices);

    std::set<std::size_t> seen(a.train_indices.begin(), a.train_indices.end());
    seen.insert(a.test_indices.begin(), a.test_indices.end());
    CHECK(seen.size() == es.n_epochs);
    CHECK(a.train.n_epochs + a.test.n_epochs == es.n_epochs);
    CHECK(a.train.n_epochs ==
          static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(es.n_epochs))));

    // epoch content follows its index through the split
    std::size_t idx = a.test_indices[0];
    for (std::size_t t = 0; t < es.n_time; ++t)
        for (std::size_t ch = 0; ch < es.n_channels; ++ch)
            CHECK(a.test.at(0, t, ch) == es.at(idx, t, ch));
}

TEST_CASE("split_train_test rejects degenerate inputs") {
    EpochSet tiny;
    tiny.n_epochs = 2;
    tiny.n_time = 1;
    tiny.n_channels = 1;
    tiny.data = {0, 1};
    tiny.labels = {0, 1};
    CHECK_THROWS(split_train_test(tiny, 0.75, 1));

    Recording rec = make_recording();
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    CHECK_THROWS(split_train_test(es, 0.0, 1));
    CHECK_THROWS(split_train_test(es, 1.0, 1));
}

TEST_CASE("one_hot layout and bounds") {
    Matrix m = one_hot({2, 0, 1}, 3);
    CHECK(m.rows == 3);
    CHECK(m.cols == 3);
    CHECK(m(0, 2) == 1.0);
    CHECK(m(1, 0) == 1.0);
    CHECK(m(2, 1) == 1.0);
    double sum = 0;
    for (double v : m.data) sum += v;
    CHECK(sum == 3.0);
    CHECK_THROWS(one_hot({3}, 3));
    CHECK_THROWS(one_hot({-1}, 3));
}

TEST_CASE("epoch metadata export lists one row per epoch") {
    Recording rec = make_recording();
    EpochSet es = extract_stimulus_epochs(rec, 2000);
    fs::path p = fs::temp_directory_path() / "ecog_test_meta.csv";
    export_epoch_metadata_csv(es, p.string());
    std::ifstream f(p);
    std::string line;
    std::size_t rows = 0;
    std::getline(f, line);
    CHECK(line == "epoch,label,label_name,source_offset,participant,condition,window");
    while (std::getline(f, line)) ++rows;
    CHECK(rows == es.n_epochs);
    fs::remove(p);
}
