#include <cmath>
#include <limits>

#include "doctest.h"
#include "pdm/error.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/rng.hpp"
#include "test_util.hpp"

using namespace pdm;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

TruckSeries series_with(const std::string& id, const std::vector<std::vector<double>>& rows,
                        const std::vector<RiskLevel>& labels) {
    TruckSeries s;
    s.chassis_id = id;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        Readout r;
        r.timestep = static_cast<std::int64_t>(t);
        r.features = rows[t];
        if (!labels.empty()) r.risk = labels[t];
        s.readouts.push_back(std::move(r));
    }
    return s;
}

// Length n, all labels Low except the tail: the last `mediums + highs`
// readouts are Medium then High, matching a failure at the series end.
TruckSeries failing_series(const std::string& id, int n, int mediums = 5, int highs = 5) {
    std::vector<std::vector<double>> rows;
    std::vector<RiskLevel> labels;
    for (int t = 0; t < n; ++t) {
        rows.push_back({static_cast<double>(t), 1.0});
        const int r = n - 1 - t;
        labels.push_back(r < highs               ? RiskLevel::High
                         : r < mediums + highs   ? RiskLevel::Medium
                                                 : RiskLevel::Low);
    }
    return series_with(id, rows, labels);
}

TruckSeries healthy_series(const std::string& id, int n) {
    std::vector<std::vector<double>> rows;
    for (int t = 0; t < n; ++t) rows.push_back({static_cast<double>(t), 1.0});
    return series_with(id, rows, std::vector<RiskLevel>(static_cast<std::size_t>(n), RiskLevel::Low));
}

}  // namespace

TEST_CASE("clean drops all-empty columns then rows with leftover missing cells") {
    // Column 1 is empty everywhere; row 2 has a missing cell in a kept column.
    auto s = series_with("c",
                         {{1.0, kNan, 5.0},
                          {2.0, kNan, 6.0},
                          {kNan, kNan, 7.0},
                          {4.0, kNan, 8.0}},
                         std::vector<RiskLevel>(4, RiskLevel::Low));
    preprocess::CleanReport report;
    const auto cleaned = preprocess::clean({s}, report);
    CHECK(report.kept_columns == std::vector<int>{0, 2});
    CHECK(report.dropped_columns == 1);
    CHECK(report.dropped_rows == 1);
    REQUIRE(cleaned.size() == 1);
    REQUIRE(cleaned[0].length() == 3);
    CHECK(cleaned[0].readouts[0].features == std::vector<double>{1.0, 5.0});
    CHECK(cleaned[0].readouts[2].features == std::vector<double>{4.0, 8.0});
    CHECK(cleaned[0].readouts[2].timestep == 3);  // row indices survive as timesteps
}

TEST_CASE("clean keeps complete data untouched") {
    preprocess::CleanReport report;
    const auto cleaned = preprocess::clean({healthy_series("h", 12)}, report);
    CHECK(report.kept_columns == std::vector<int>{0, 1});
    CHECK(report.dropped_columns == 0);
    CHECK(report.dropped_rows == 0);
    CHECK(cleaned[0].length() == 12);
}

TEST_CASE("clean rejects a dataset whose every column is empty") {
    auto s = series_with("void", {{kNan, kNan}, {kNan, kNan}},
                         std::vector<RiskLevel>(2, RiskLevel::Low));
    preprocess::CleanReport report;
    CHECK_THROWS_AS(static_cast<void>(preprocess::clean({s}, report)), StructureError);
}

TEST_CASE("clean rejects ragged feature widths") {
    auto a = healthy_series("a", 3);
    auto b = healthy_series("b", 3);
    b.readouts[1].features.push_back(9.0);
    preprocess::CleanReport report;
    CHECK_THROWS_AS(static_cast<void>(preprocess::clean({a, b}, report)), ContractError);
}

TEST_CASE("clean_with_columns replays a recorded column map") {
    auto train = series_with("t", {{1.0, kNan, 3.0}, {2.0, kNan, 4.0}},
                             std::vector<RiskLevel>(2, RiskLevel::Low));
    preprocess::CleanReport train_report;
    preprocess::clean({train}, train_report);

    auto test = series_with("u", {{7.0, 9.0, 11.0}, {8.0, 10.0, 12.0}},
                            std::vector<RiskLevel>(2, RiskLevel::Low));
    preprocess::CleanReport test_report;
    const auto cleaned =
        preprocess::clean_with_columns({test}, train_report.kept_columns, test_report);
    CHECK(cleaned[0].readouts[0].features == std::vector<double>{7.0, 11.0});
    CHECK(test_report.kept_columns == train_report.kept_columns);
}

TEST_CASE("window extraction matches the oversampling counts exactly") {
    std::vector<TruckSeries> fleet;
    fleet.push_back(healthy_series("h1", 15));
    fleet.push_back(healthy_series("h2", 10));
    fleet.push_back(healthy_series("h3", 42));
    fleet.push_back(failing_series("f1", 20));
    fleet.push_back(failing_series("f2", 33));
    // Medium-ending: truncate a failing series before the High tail starts.
    auto medium = failing_series("m1", 20);
    medium.readouts.resize(13);  // last remaining label: r<10 => Medium
    fleet.push_back(medium);
    fleet.push_back(healthy_series("s1", 9));  // too short

    Rng rng(77);
    preprocess::ExtractReport report;
    const auto windows = preprocess::extract_training_windows(fleet, rng, report);

    CHECK(windows.size() == 3 * 2 + 2 * 4);
    CHECK(report.healthy_series == 3);
    CHECK(report.failing_series == 2);
    CHECK(report.discarded_medium == 1);
    CHECK(report.removed_short == 1);
    CHECK(report.skipped_no_anchor == 0);

    for (const auto& w : windows) {
        REQUIRE(w.features.size() == kWindowLen);
        REQUIRE(w.labels.size() == kWindowLen);
        // Windows are contiguous slices: the first feature carries the index.
        for (std::size_t i = 1; i < kWindowLen; ++i)
            CHECK(w.features[i][0] == w.features[i - 1][0] + 1.0);
    }
}

TEST_CASE("failing windows anchor on a High readout at index >= 9") {
    Rng rng(5);
    preprocess::ExtractReport report;
    const auto windows =
        preprocess::extract_training_windows({failing_series("f", 25)}, rng, report);
    REQUIRE(windows.size() == 4);
    for (const auto& w : windows) {
        CHECK(w.labels.back() == RiskLevel::High);
        const auto anchor = static_cast<std::size_t>(w.features.back()[0]);
        CHECK(anchor >= kWindowLen - 1);
        CHECK(anchor >= 20);  // High region of a length-25 series
    }
}

TEST_CASE("classification keys on the final label only") {
    // A mid-series High with a Low tail is a healthy series, not a failing
    // one, so it takes the 2-window path and never trips the anchor guard.
    std::vector<std::vector<double>> rows;
    std::vector<RiskLevel> mixed(12, RiskLevel::Low);
    mixed[3] = RiskLevel::High;
    for (int t = 0; t < 12; ++t) rows.push_back({static_cast<double>(t)});
    Rng rng(6);
    preprocess::ExtractReport report;
    const auto windows =
        preprocess::extract_training_windows({series_with("mid_high", rows, mixed)}, rng, report);
    CHECK(windows.size() == 2);
    CHECK(report.healthy_series == 1);
    CHECK(report.skipped_no_anchor == 0);
}

TEST_CASE("extraction is deterministic per rng seed") {
    std::vector<TruckSeries> fleet{healthy_series("h", 30), failing_series("f", 30)};
    Rng a(9), b(9);
    preprocess::ExtractReport ra, rb;
    const auto wa = preprocess::extract_training_windows(fleet, a, ra);
    const auto wb = preprocess::extract_training_windows(fleet, b, rb);
    REQUIRE(wa.size() == wb.size());
    for (std::size_t i = 0; i < wa.size(); ++i) {
        CHECK(wa[i].features == wb[i].features);
        CHECK(wa[i].labels == wb[i].labels);
    }
}

TEST_CASE("unlabeled series cannot produce training windows") {
    auto s = healthy_series("u", 12);
    for (auto& r : s.readouts) r.risk.reset();
    Rng rng(1);
    preprocess::ExtractReport report;
    CHECK_THROWS_AS(static_cast<void>(preprocess::extract_training_windows({s}, rng, report)),
                    ContractError);
}

TEST_CASE("fit_norm computes population statistics") {
    const auto stats = preprocess::fit_norm({{1.0, 10.0}, {3.0, 10.0}}, "unit");
    REQUIRE(stats.mean.size() == 2);
    CHECK(stats.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(stats.stddev[0] == doctest::Approx(1.0).epsilon(1e-15));  // population, not sample
    CHECK(stats.mean[1] == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(stats.stddev[1] == 0.0);
    CHECK(stats.scope == "unit");

    CHECK_THROWS_AS(static_cast<void>(preprocess::fit_norm({{1.0}}, "tiny")), StatsError);
    CHECK_THROWS_AS(static_cast<void>(preprocess::fit_norm({{1.0}, {1.0, 2.0}}, "ragged")),
                    ContractError);
}

TEST_CASE("apply_norm standardizes and guards zero variance") {
    const auto stats = preprocess::fit_norm({{1.0, 10.0}, {3.0, 10.0}}, "unit");
    Window w;
    w.features = {{1.0, 10.0}, {3.0, 10.0}, {2.0, 10.0}};
    while (w.features.size() < kWindowLen) w.features.push_back({2.0, 10.0});
    const auto normed = preprocess::apply_norm(w, stats);
    CHECK(normed.features[0][0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(normed.features[1][0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(normed.features[2][0] == doctest::Approx(0.0).epsilon(1e-15));
    for (const auto& row : normed.features) CHECK(row[1] == 0.0);  // 0/eps guard

    Window narrow;
    narrow.features.assign(kWindowLen, std::vector<double>(1, 0.0));
    CHECK_THROWS_AS(static_cast<void>(preprocess::apply_norm(narrow, stats)), ContractError);
}

TEST_CASE("normalized training rows have zero mean and unit variance") {
    Rng rng(31);
    std::vector<Window> windows(6);
    for (auto& w : windows) {
        w.labels.assign(kWindowLen, RiskLevel::Low);
        for (std::size_t t = 0; t < kWindowLen; ++t)
            w.features.push_back({rng.normal(3.0, 2.0), rng.uniform(-5.0, 5.0)});
    }
    const auto stats = preprocess::fit_norm(preprocess::stack_rows(windows), "train");
    const auto normed = preprocess::apply_norm(windows, stats);
    const auto restats = preprocess::fit_norm(preprocess::stack_rows(normed), "check");
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(restats.mean[i] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(restats.stddev[i] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("stack_rows flattens window rows in order") {
    Window a, b;
    a.features.assign(kWindowLen, std::vector<double>{1.0});
    b.features.assign(kWindowLen, std::vector<double>{2.0});
    a.features[0][0] = 7.0;
    const auto rows = preprocess::stack_rows({a, b});
    REQUIRE(rows.size() == 2 * kWindowLen);
    CHECK(rows[0][0] == 7.0);
    CHECK(rows[1][0] == 1.0);
    CHECK(rows[kWindowLen][0] == 2.0);
}

TEST_CASE("norm stats round-trip through JSON with the column map") {
    TempDir tmp;
    const auto stats = preprocess::fit_norm({{1.0, -2.0}, {3.0, 4.0}, {5.0, 6.0}}, "train_gen1");
    preprocess::CleanReport report;
    report.kept_columns = {0, 2};
    report.dropped_columns = 1;
    report.dropped_rows = 4;
    const std::string path = tmp.file("norm.json");
    preprocess::save_norm_stats(stats, report, path);

    preprocess::CleanReport back_report;
    const auto back = preprocess::load_norm_stats(path, back_report);
    CHECK(back.scope == stats.scope);
    CHECK(back.mean == stats.mean);
    CHECK(back.stddev == stats.stddev);
    CHECK(back_report.kept_columns == report.kept_columns);
    CHECK(back_report.dropped_columns == 1);
    CHECK(back_report.dropped_rows == 4);

    preprocess::CleanReport ignored;
    CHECK_THROWS_AS(static_cast<void>(preprocess::load_norm_stats(tmp.file("no.json"), ignored)),
                    IoError);
}
