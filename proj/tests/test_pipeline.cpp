#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "pdm/error.hpp"
#include "pdm/pipeline.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/rng.hpp"
#include "pdm/synth.hpp"
#include "test_util.hpp"

using namespace pdm;

namespace {

Window rand_window(Rng& rng, int f, bool labeled) {
    Window w;
    for (std::size_t t = 0; t < kWindowLen; ++t) {
        std::vector<double> row;
        for (int j = 0; j < f; ++j) row.push_back(rng.normal(0.0, 1.0));
        w.features.push_back(std::move(row));
        if (labeled) w.labels.push_back(risk_from_index(static_cast<int>(rng.uniform_int(0, 2))));
    }
    return w;
}

// Hand-built prepared data: the boost mechanics do not care whether the
// windows came from CSVs, only about shapes, keys, and generations.
pipeline::PreparedData tiny_data(int n_train, int gen1_trucks, int gen2_trucks,
                                 int windows_per_truck, int f, std::uint64_t seed) {
    pipeline::PreparedData d;
    d.n_features = f;
    d.failing_high_mean = 5.0;
    Rng rng(seed);
    for (int i = 0; i < n_train; ++i) d.train_windows.push_back(rand_window(rng, f, true));
    for (int g = 0; g < gen1_trucks; ++g)
        for (int w = 0; w < windows_per_truck; ++w)
            d.test_gen1.push_back({WindowKey{"a" + std::to_string(g), Generation::Gen1, w},
                                   rand_window(rng, f, false)});
    for (int g = 0; g < gen2_trucks; ++g)
        for (int w = 0; w < windows_per_truck; ++w)
            d.test_gen2.push_back({WindowKey{"b" + std::to_string(g), Generation::Gen2, w},
                                   rand_window(rng, f, false)});
    return d;
}

nn::ModelConfig tiny_model(int f) {
    nn::ModelConfig cfg;
    cfg.input_size = f;
    cfg.hidden_size = 4;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.dropout_rate = 0.25;
    return cfg;
}

PredictionSet single_run(const std::vector<RiskLevel>& labels,
                         const std::vector<std::array<double, 3>>& probs = {}) {
    PredictionSet set;
    SequencePrediction pred;
    pred.labels = labels;
    pred.probs = probs;
    set.entries.emplace(WindowKey{"t", Generation::Gen2, 0}, std::move(pred));
    return set;
}

bool same_probs(const PredictionSet& a, const PredictionSet& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (const auto& [key, pred] : a.entries) {
        const auto it = b.entries.find(key);
        if (it == b.entries.end()) return false;
        if (pred.probs != it->second.probs || pred.labels != it->second.labels) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("boost iteration seeds are distinct and stable") {
    CHECK(pipeline::boost_iteration_seed(7, 1) == pipeline::boost_iteration_seed(7, 1));
    std::set<std::uint64_t> seen;
    for (std::uint64_t run = 7; run < 12; ++run)
        for (int k = 1; k <= 5; ++k) seen.insert(pipeline::boost_iteration_seed(run, k));
    CHECK(seen.size() == 25);
}

TEST_CASE("schedule and ensemble configs validate their fields") {
    pipeline::BoostSchedule schedule;
    CHECK_NOTHROW(schedule.validate());
    schedule.depths.clear();
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.depths = {2, 0};
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.depths = {2};
    schedule.gen2_fraction_per_iter = 0.0;
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.gen2_fraction_per_iter = 1.5;
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    // The schedule may not ask for more than the whole gen2 pool overall.
    schedule.depths = {1, 1, 1};
    schedule.gen2_fraction_per_iter = 0.5;
    CHECK_THROWS_AS(schedule.validate(), ConfigError);
    schedule.gen2_fraction_per_iter = 1.0 / 3.0;
    CHECK_NOTHROW(schedule.validate());

    pipeline::EnsembleConfig ens;
    ens.n_runs = 0;
    CHECK_THROWS_AS(ens.validate(), ConfigError);

    CHECK(pipeline::parse_selection_mode("confidence_ranked") ==
          pipeline::SelectionMode::ConfidenceRanked);
    CHECK(pipeline::parse_selection_mode("random") == pipeline::SelectionMode::Random);
    CHECK_THROWS_AS(static_cast<void>(pipeline::parse_selection_mode("best")), ConfigError);
    CHECK(pipeline::parse_tie_break("higher_risk") == pipeline::TieBreak::HigherRisk);
    CHECK(pipeline::to_string(pipeline::TieBreak::MeanProbability) == "mean_probability");
}

TEST_CASE("boosting injects new trucks each iteration with frozen counts") {
    const auto data = tiny_data(12, 2, 4, 2, 3, 101);
    pipeline::BoostSchedule schedule;
    schedule.depths = {1, 1};
    schedule.gen2_fraction_per_iter = 0.5;  // 2 of 4 trucks per iteration

    const auto result = pipeline::boost_run(data, schedule, tiny_model(3), 7);
    CHECK(!result.degenerate_no_gen2);
    CHECK(result.run_seed == 7);
    REQUIRE(result.log.size() == 2);
    REQUIRE(result.iteration_predictions.size() == 2);

    const auto& l1 = result.log[0];
    const auto& l2 = result.log[1];
    CHECK(l1.iteration == 1);
    CHECK(l2.iteration == 2);
    CHECK(l1.depth == 1);
    CHECK(l1.model_seed == pipeline::boost_iteration_seed(7, 1));
    CHECK(l2.model_seed == pipeline::boost_iteration_seed(7, 2));
    CHECK(l1.pool_windows_before == 12);
    CHECK(l1.injected_trucks == 2);
    CHECK(l1.pool_windows_after == 12 + 2 * 2);  // two windows per truck
    CHECK(l2.pool_windows_before == l1.pool_windows_after);
    CHECK(l2.pool_windows_after == 20);
    CHECK(!l1.pool_exhausted);
    CHECK(!l2.pool_exhausted);

    // Every gen2 truck injected exactly once, and nothing else.
    std::set<std::string> injected(result.injected_chassis.begin(),
                                   result.injected_chassis.end());
    CHECK(result.injected_chassis.size() == 4);
    CHECK(injected == std::set<std::string>{"b0", "b1", "b2", "b3"});

    // Predictions cover the full test set each iteration.
    for (const auto& preds : result.iteration_predictions)
        CHECK(preds.size() == data.test_gen1.size() + data.test_gen2.size());

    const auto again = pipeline::boost_run(data, schedule, tiny_model(3), 7);
    CHECK(same_probs(result.predictions, again.predictions));
    CHECK(again.injected_chassis == result.injected_chassis);

    const auto other = pipeline::boost_run(data, schedule, tiny_model(3), 8);
    CHECK(!same_probs(result.predictions, other.predictions));
}

TEST_CASE("an exhausted gen2 pool trains on but injects nothing") {
    // Two trucks, three iterations of at least one truck each: the floor of
    // one truck per iteration drains the pool before the schedule ends.
    const auto data = tiny_data(10, 1, 2, 1, 3, 103);
    pipeline::BoostSchedule schedule;
    schedule.depths = {1, 1, 1};
    schedule.gen2_fraction_per_iter = 0.3;

    const auto result = pipeline::boost_run(data, schedule, tiny_model(3), 9);
    REQUIRE(result.log.size() == 3);
    CHECK(result.log[0].injected_trucks == 1);
    CHECK(!result.log[0].pool_exhausted);
    CHECK(result.log[1].injected_trucks == 1);
    CHECK(!result.log[1].pool_exhausted);
    CHECK(result.log[2].injected_trucks == 0);
    CHECK(result.log[2].pool_exhausted);
    CHECK(result.log[2].pool_windows_before == result.log[1].pool_windows_after);
    CHECK(result.log[2].pool_windows_after == result.log[1].pool_windows_after);
    CHECK(result.injected_chassis.size() == 2);
}

TEST_CASE("random selection is seeded and injects the same trucks per seed") {
    const auto data = tiny_data(10, 1, 5, 1, 3, 104);
    pipeline::BoostSchedule schedule;
    schedule.depths = {1};
    schedule.gen2_fraction_per_iter = 0.4;  // 2 of 5
    schedule.selection_mode = pipeline::SelectionMode::Random;

    const auto a = pipeline::boost_run(data, schedule, tiny_model(3), 5);
    const auto b = pipeline::boost_run(data, schedule, tiny_model(3), 5);
    CHECK(a.injected_chassis == b.injected_chassis);
    CHECK(a.injected_chassis.size() == 2);
}

TEST_CASE("without gen2 trucks boosting degrades to one supervised train") {
    const auto data = tiny_data(14, 3, 0, 2, 3, 105);
    pipeline::BoostSchedule schedule;
    schedule.depths = {1, 2};

    const auto result = pipeline::boost_run(data, schedule, tiny_model(3), 11);
    CHECK(result.degenerate_no_gen2);
    REQUIRE(result.log.size() == 1);
    CHECK(result.log[0].iteration == 2);
    CHECK(result.log[0].depth == 2);
    CHECK(result.injected_chassis.empty());
    CHECK(result.iteration_predictions.size() == 1);

    // The degenerate path must equal a plain train at the final depth with
    // the final iteration's seed, so adding gen2 data later only adds data.
    nn::ModelConfig cfg = tiny_model(3);
    cfg.n_layers = 2;
    cfg.seed = pipeline::boost_iteration_seed(11, 2);
    auto model = nn::init(cfg);
    nn::train(model, data.train_windows);
    const auto direct = nn::predict(model, data.test_gen1);
    CHECK(same_probs(result.predictions, direct));
}

TEST_CASE("ensemble averages probabilities and takes the plurality label") {
    // Dyadic probabilities keep the mean exact regardless of run order.
    const auto r1 = single_run({RiskLevel::Low}, {{0.5, 0.25, 0.25}});
    const auto r2 = single_run({RiskLevel::Medium}, {{0.25, 0.5, 0.25}});
    const auto r3 = single_run({RiskLevel::Medium}, {{0.0, 0.75, 0.25}});
    pipeline::EnsembleConfig cfg;
    cfg.n_runs = 3;

    const auto out = pipeline::ensemble({r1, r2, r3}, cfg);
    const auto& pred = out.entries.at(WindowKey{"t", Generation::Gen2, 0});
    CHECK(pred.labels == std::vector<RiskLevel>{RiskLevel::Medium});
    CHECK(pred.probs[0][0] == 0.25);
    CHECK(pred.probs[0][1] == 0.5);
    CHECK(pred.probs[0][2] == 0.25);

    const auto swapped = pipeline::ensemble({r3, r1, r2}, cfg);
    CHECK(same_probs(out, swapped));
}

TEST_CASE("ensemble tie-breaks consult only the tied classes") {
    // Low and High tie 1-1; Medium has the largest mean probability but no
    // votes, so it must not win. Mean probability then prefers Low.
    const auto r1 = single_run({RiskLevel::Low}, {{0.5, 0.375, 0.125}});
    const auto r2 = single_run({RiskLevel::High}, {{0.125, 0.4375, 0.4375}});
    pipeline::EnsembleConfig cfg;
    cfg.n_runs = 2;

    cfg.tie_break = pipeline::TieBreak::MeanProbability;
    auto out = pipeline::ensemble({r1, r2}, cfg);
    CHECK(out.entries.begin()->second.labels[0] == RiskLevel::Low);

    cfg.tie_break = pipeline::TieBreak::HigherRisk;
    out = pipeline::ensemble({r1, r2}, cfg);
    CHECK(out.entries.begin()->second.labels[0] == RiskLevel::High);
}

TEST_CASE("label-only runs vote with one-hot probabilities") {
    const auto r1 = single_run({RiskLevel::High});
    const auto r2 = single_run({RiskLevel::High});
    const auto r3 = single_run({RiskLevel::Low});
    pipeline::EnsembleConfig cfg;
    cfg.n_runs = 3;
    const auto out = pipeline::ensemble({r1, r2, r3}, cfg);
    const auto& pred = out.entries.begin()->second;
    CHECK(pred.labels[0] == RiskLevel::High);
    CHECK(pred.probs[0][2] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(pred.probs[0][0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    // An exact one-hot tie has equal means; the higher class wins.
    const auto tie = pipeline::ensemble({r1, r3}, cfg);
    CHECK(tie.entries.begin()->second.labels[0] == RiskLevel::High);
}

TEST_CASE("ensemble rejects runs with different keys") {
    const auto r1 = single_run({RiskLevel::Low});
    PredictionSet r2;
    SequencePrediction pred;
    pred.labels = {RiskLevel::Low};
    r2.entries.emplace(WindowKey{"other", Generation::Gen2, 0}, pred);
    pipeline::EnsembleConfig cfg;
    CHECK_THROWS_WITH_AS(static_cast<void>(pipeline::ensemble({r1, r2}, cfg)),
                         doctest::Contains("key sets differ"), ContractError);
    CHECK_THROWS_AS(static_cast<void>(pipeline::ensemble({}, cfg)), ContractError);
}

TEST_CASE("window stores round-trip bitwise") {
    TempDir tmp;
    Rng rng(55);
    std::vector<Window> plain;
    for (int i = 0; i < 5; ++i) {
        auto w = rand_window(rng, 4, i % 2 == 0);
        w.chassis_id = "c" + std::to_string(i);
        w.gen = i % 2 ? Generation::Gen2 : Generation::Gen1;
        plain.push_back(std::move(w));
    }
    const auto plain_path = tmp.file("train.bin");
    pipeline::save_windows(plain, plain_path);
    const auto plain_back = pipeline::load_windows(plain_path);
    REQUIRE(plain_back.size() == plain.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(plain_back[i].chassis_id == plain[i].chassis_id);
        CHECK(plain_back[i].gen == plain[i].gen);
        CHECK(plain_back[i].features == plain[i].features);
        CHECK(plain_back[i].labels == plain[i].labels);
    }

    std::vector<KeyedWindow> keyed;
    for (int i = 0; i < 3; ++i)
        keyed.push_back(
            {WindowKey{"k" + std::to_string(i), Generation::Gen2, i}, rand_window(rng, 4, false)});
    const auto keyed_path = tmp.file("test.bin");
    pipeline::save_keyed_windows(keyed, keyed_path);
    const auto keyed_back = pipeline::load_keyed_windows(keyed_path);
    REQUIRE(keyed_back.size() == 3);
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        CHECK(keyed_back[i].key == keyed[i].key);
        CHECK(keyed_back[i].window.features == keyed[i].window.features);
    }

    // The two store flavors are not interchangeable.
    CHECK_THROWS_AS(static_cast<void>(pipeline::load_windows(keyed_path)), SchemaError);
    CHECK_THROWS_AS(static_cast<void>(pipeline::load_keyed_windows(plain_path)), SchemaError);
    CHECK_THROWS_AS(static_cast<void>(pipeline::load_windows(tmp.file("no.bin"))), IoError);
    write_text(tmp.file("trunc.bin"), "PDMWINS1");
    CHECK_THROWS_AS(static_cast<void>(pipeline::load_windows(tmp.file("trunc.bin"))), IoError);
    write_text(tmp.file("junk.bin"), "NOTASTORExxxxxxxxxxxx");
    CHECK_THROWS_AS(static_cast<void>(pipeline::load_windows(tmp.file("junk.bin"))), SchemaError);
}

TEST_CASE("prepared data from generated CSVs") {
    TempDir tmp;
    synth::SynthConfig cfg;
    cfg.n_train_trucks = 16;
    cfg.n_test_trucks_gen1 = 5;
    cfg.n_test_trucks_gen2 = 5;
    cfg.n_features = 6;
    cfg.series_len_min = 14;
    cfg.series_len_max = 30;
    cfg.seed = 33;
    const auto summary = synth::generate_dataset(cfg, tmp.dir());
    const auto train_csv = tmp.file("train_gen1.csv");
    const auto test_csv = tmp.file("public_X_test.csv");

    const auto data = pipeline::prepare(train_csv, test_csv, 33);
    CHECK(data.n_features == 6);
    CHECK(data.clean_report.dropped_columns == 0);
    CHECK(data.train_windows.size() > 0);
    CHECK(static_cast<int>(data.test_gen1.size()) == summary.n_test_windows_gen1);
    CHECK(static_cast<int>(data.test_gen2.size()) == summary.n_test_windows_gen2);
    // Anchors fall uniformly on the 5 High positions, so the per-window High
    // count is uniform-ish on 1..5 and its mean sits near the middle.
    CHECK(data.failing_high_mean >= 1.0);
    CHECK(data.failing_high_mean <= 5.0);

    for (const auto& w : data.train_windows) {
        REQUIRE(w.features.size() == kWindowLen);
        CHECK(w.labeled());
        CHECK(w.features[0].size() == 6);
    }
    for (const auto& kw : data.test_gen1) CHECK(kw.key.gen == Generation::Gen1);
    for (const auto& kw : data.test_gen2) CHECK(kw.key.gen == Generation::Gen2);

    // Each scope is standardized by its own statistics.
    auto check_scope = [](const std::vector<KeyedWindow>& keyed, const std::string& name) {
        std::vector<Window> plain;
        for (const auto& kw : keyed) plain.push_back(kw.window);
        const auto stats = preprocess::fit_norm(preprocess::stack_rows(plain), name);
        for (std::size_t j = 0; j < stats.mean.size(); ++j) {
            CHECK(std::abs(stats.mean[j]) < 1e-9);
            CHECK(stats.stddev[j] == doctest::Approx(1.0).epsilon(1e-6));
        }
    };
    check_scope(data.test_gen1, "check1");
    check_scope(data.test_gen2, "check2");
    const auto train_stats =
        preprocess::fit_norm(preprocess::stack_rows(data.train_windows), "check3");
    for (std::size_t j = 0; j < train_stats.mean.size(); ++j)
        CHECK(std::abs(train_stats.mean[j]) < 1e-9);

    // Same inputs, same seed: bitwise identical windows.
    const auto again = pipeline::prepare(train_csv, test_csv, 33);
    REQUIRE(again.train_windows.size() == data.train_windows.size());
    for (std::size_t i = 0; i < data.train_windows.size(); ++i)
        CHECK(again.train_windows[i].features == data.train_windows[i].features);
    const auto other_seed = pipeline::prepare(train_csv, test_csv, 34);
    CHECK(other_seed.train_windows.size() == data.train_windows.size());
}

TEST_CASE("prepared data round-trips through its directory form") {
    TempDir tmp;
    synth::SynthConfig cfg;
    cfg.n_train_trucks = 10;
    cfg.n_test_trucks_gen1 = 3;
    cfg.n_test_trucks_gen2 = 3;
    cfg.n_features = 5;
    cfg.series_len_min = 14;
    cfg.series_len_max = 24;
    cfg.seed = 44;
    cfg.missing_fraction = 0.05;
    synth::generate_dataset(cfg, tmp.dir());

    const auto data =
        pipeline::prepare(tmp.file("train_gen1.csv"), tmp.file("public_X_test.csv"), 44);
    CHECK(data.clean_report.dropped_rows > 0);

    const auto dir = tmp.dir("prepared");
    pipeline::save_prepared(data, dir);
    const auto back = pipeline::load_prepared(dir);

    CHECK(back.n_features == data.n_features);
    CHECK(back.failing_high_mean == data.failing_high_mean);
    CHECK(back.clean_report.kept_columns == data.clean_report.kept_columns);
    CHECK(back.clean_report.dropped_rows == data.clean_report.dropped_rows);
    CHECK(back.extract_report.healthy_series == data.extract_report.healthy_series);
    CHECK(back.extract_report.failing_series == data.extract_report.failing_series);
    CHECK(back.train_stats.mean == data.train_stats.mean);
    CHECK(back.gen1_stats.stddev == data.gen1_stats.stddev);
    CHECK(back.gen2_stats.scope == data.gen2_stats.scope);

    REQUIRE(back.train_windows.size() == data.train_windows.size());
    for (std::size_t i = 0; i < data.train_windows.size(); ++i) {
        CHECK(back.train_windows[i].features == data.train_windows[i].features);
        CHECK(back.train_windows[i].labels == data.train_windows[i].labels);
    }
    REQUIRE(back.test_gen2.size() == data.test_gen2.size());
    for (std::size_t i = 0; i < data.test_gen2.size(); ++i) {
        CHECK(back.test_gen2[i].key == data.test_gen2[i].key);
        CHECK(back.test_gen2[i].window.features == data.test_gen2[i].window.features);
    }

    CHECK_THROWS_AS(static_cast<void>(pipeline::load_prepared(tmp.dir("empty"))), IoError);
}

TEST_CASE("run directory helpers create the expected layout") {
    TempDir tmp;
    const auto out = tmp.dir("run");
    pipeline::ensure_run_dirs(out);
    namespace fs = std::filesystem;
    for (const char* name : {"data", "checkpoints", "preds", "reports"})
        CHECK(fs::is_directory(fs::path(out) / name));
    CHECK(pipeline::subdir(out, "preds") == (fs::path(out) / "preds").string());
}
