#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "pdm/csv.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using doctest::Contains;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs the real binary with stdout/stderr captured into scratch files.
CliResult run_cli(const TempDir& tmp, const std::string& args) {
    static std::atomic<int> counter{0};
    const int id = counter.fetch_add(1);
    const std::string out_path = tmp.file("stream_out_" + std::to_string(id));
    const std::string err_path = tmp.file("stream_err_" + std::to_string(id));
    const std::string command = std::string("\"") + PDM_CLI_PATH + "\" " + args + " > \"" +
                                out_path + "\" 2> \"" + err_path + "\"";
    const int status = std::system(command.c_str());
    CliResult result;
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = read_text(out_path);
    result.err = read_text(err_path);
    return result;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(bool(in));
    return json::parse(in);
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

bool same_bytes(const std::string& a, const std::string& b) {
    REQUIRE(fs::exists(a));
    REQUIRE(fs::exists(b));
    return read_text(a) == read_text(b);
}

// Small fleet, small model: every invocation below finishes in well under a
// second while still exercising both generations end to end.
const char* kTinyFleet =
    "train_trucks = 10\n"
    "test_trucks_gen1 = 4\n"
    "test_trucks_gen2 = 4\n"
    "features = 5\n"
    "series_len_min = 12\n"
    "series_len_max = 20\n";

const char* kTinyModel =
    "hidden_size = 6\n"
    "n_layers = 1\n"
    "epochs = 3\n"
    "batch_size = 16\n"
    "dropout_rate = 0.25\n";

std::string tiny_config(const TempDir& tmp, const std::string& extra) {
    const std::string path = tmp.file("tiny.cfg");
    write_text(path, std::string(kTinyFleet) + kTinyModel + extra);
    return path;
}

}  // namespace

TEST_CASE("settings layer as defaults, then the config file, then flags") {
    TempDir tmp;
    const std::string cfg = tiny_config(tmp, "seed = 5\n");

    const std::string a = tmp.dir("a");
    CHECK(run_cli(tmp, "generate --config " + cfg + " --out-dir " + a).code == 0);
    const json ma = read_json(join(a, "manifest.json"));
    CHECK(ma.at("command") == "generate");
    CHECK(ma.at("synth").at("seed") == 5);            // file beats the built-in default
    CHECK(ma.at("synth").at("train_trucks") == 10);
    CHECK(ma.at("synth").at("features") == 5);

    const std::string b = tmp.dir("b");
    CHECK(run_cli(tmp, "generate --config " + cfg + " --seed 9 --out-dir " + b).code == 0);
    const json mb = read_json(join(b, "manifest.json"));
    CHECK(mb.at("synth").at("seed") == 9);            // flag beats the file
    CHECK(mb.at("synth").at("train_trucks") == 10);   // untouched keys still come from the file

    const std::string no_seed = tmp.file("no_seed.cfg");
    write_text(no_seed, kTinyFleet);
    const std::string c = tmp.dir("c");
    CHECK(run_cli(tmp, "generate --config " + no_seed + " --out-dir " + c).code == 0);
    CHECK(read_json(join(c, "manifest.json")).at("synth").at("seed") == 7);

    for (const char* name : {"train_gen1.csv", "public_X_test.csv", "ground_truth.csv",
                             "variants.csv"})
        CHECK(fs::exists(join(join(a, "data"), name)));

    // Same settings, same bytes; a different seed changes the fleet.
    const std::string a2 = tmp.dir("a2");
    CHECK(run_cli(tmp, "generate --config " + cfg + " --out-dir " + a2).code == 0);
    CHECK(same_bytes(join(join(a, "data"), "train_gen1.csv"),
                     join(join(a2, "data"), "train_gen1.csv")));
    CHECK_FALSE(same_bytes(join(join(a, "data"), "train_gen1.csv"),
                           join(join(b, "data"), "train_gen1.csv")));
}

TEST_CASE("config file problems are reported with their location") {
    TempDir tmp;

    const std::string bad_key = tmp.file("bad_key.cfg");
    write_text(bad_key, "# comment\n\nbogus_key = 1\n");
    auto r = run_cli(tmp, "generate --config " + bad_key + " --out-dir " + tmp.dir("x"));
    CHECK(r.code == 2);
    CHECK(r.err.find(bad_key + ":3") != std::string::npos);
    CHECK(r.err.find("unknown key \"bogus_key\"") != std::string::npos);

    const std::string no_eq = tmp.file("no_eq.cfg");
    write_text(no_eq, "seed 5\n");
    r = run_cli(tmp, "generate --config " + no_eq + " --out-dir " + tmp.dir("y"));
    CHECK(r.code == 2);
    CHECK(r.err.find(no_eq + ":1") != std::string::npos);
    CHECK(r.err.find("expected `key = value`") != std::string::npos);

    const std::string bad_value = tmp.file("bad_value.cfg");
    write_text(bad_value, "seed = banana\n");
    r = run_cli(tmp, "generate --config " + bad_value + " --out-dir " + tmp.dir("z"));
    CHECK(r.code == 2);
    CHECK(r.err.find("cannot parse \"banana\"") != std::string::npos);

    r = run_cli(tmp, "generate --config " + tmp.file("missing.cfg") + " --out-dir " + tmp.dir("w"));
    CHECK(r.code == 2);
    CHECK(r.err.find("cannot open config file") != std::string::npos);
}

TEST_CASE("each stage consumes the previous stage's artifacts") {
    TempDir tmp;
    const std::string cfg = tiny_config(tmp, "seed = 11\n");
    const std::string ws = tmp.dir("ws");
    const std::string data = join(ws, "data");

    REQUIRE(run_cli(tmp, "generate --config " + cfg + " --out-dir " + ws).code == 0);
    auto r = run_cli(tmp, "preprocess --config " + cfg + " --out-dir " + ws + " --train-csv " +
                              join(data, "train_gen1.csv") + " --test-csv " +
                              join(data, "public_X_test.csv"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("prepared") != std::string::npos);
    CHECK(read_json(join(ws, "manifest.json")).at("command") == "preprocess");
    CHECK(fs::exists(join(data, "prepared.json")));

    r = run_cli(tmp, "train --config " + cfg + " --out-dir " + ws);
    REQUIRE(r.code == 0);
    const std::string ckpt = join(join(ws, "checkpoints"), "model.bin");
    CHECK(fs::exists(ckpt));
    const json mt = read_json(join(ws, "manifest.json"));
    CHECK(mt.at("command") == "train");
    CHECK(mt.at("model").at("hidden_size") == 6);
    CHECK(mt.at("epoch_loss").size() == 3);

    // Store mode and raw-CSV mode label the same windows identically.
    const std::string from_store = tmp.dir("from_store");
    const std::string from_csv = tmp.dir("from_csv");
    REQUIRE(run_cli(tmp, "predict --out-dir " + from_store + " --model " + ckpt + " --data " +
                             data).code == 0);
    REQUIRE(run_cli(tmp, "predict --out-dir " + from_csv + " --model " + ckpt + " --data " + data +
                             " --test-csv " + join(data, "public_X_test.csv")).code == 0);
    const std::string store_csv = join(join(from_store, "preds"), "predictions.csv");
    const std::string csv_csv = join(join(from_csv, "preds"), "predictions.csv");
    CHECK(same_bytes(store_csv, csv_csv));
    CHECK(same_bytes(pdm::csv::probs_sidecar_path(store_csv),
                     pdm::csv::probs_sidecar_path(csv_csv)));

    const std::string scored = tmp.dir("scored");
    r = run_cli(tmp, "evaluate --preds " + store_csv + " --truth " +
                         join(data, "ground_truth.csv") + " --out-dir " + scored);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("Final Score") != std::string::npos);
    const json me = read_json(join(scored, "manifest.json"));
    const double final_score = me.at("final_score").get<double>();
    CHECK(final_score >= 0.0);
    CHECK(final_score <= 1.0);
    CHECK(fs::exists(join(join(scored, "reports"), "eval.json")));

    r = run_cli(tmp, "evaluate --preds " + store_csv + " --truth " +
                         join(data, "ground_truth.csv") + " --dev-split 0.5");
    CHECK(r.code == 0);
    CHECK(r.out.find("Final Score") != std::string::npos);
    CHECK(run_cli(tmp, "evaluate --preds " + store_csv + " --truth " +
                           join(data, "ground_truth.csv") + " --dev-split 1.5").code == 2);

    // A score threshold above the ceiling always trips the nonzero exit.
    r = run_cli(tmp, "evaluate --preds " + store_csv + " --truth " +
                         join(data, "ground_truth.csv") + " --min-score 1.01");
    CHECK(r.code == 3);
    CHECK(r.err.find("below required") != std::string::npos);
}

TEST_CASE("boost, ensemble, and postprocess consume prediction files") {
    TempDir tmp;
    const std::string cfg = tiny_config(tmp, "seed = 11\n");
    const std::string ws = tmp.dir("ws");
    const std::string data = join(ws, "data");
    REQUIRE(run_cli(tmp, "generate --config " + cfg + " --out-dir " + ws).code == 0);
    REQUIRE(run_cli(tmp, "preprocess --config " + cfg + " --out-dir " + ws + " --train-csv " +
                             join(data, "train_gen1.csv") + " --test-csv " +
                             join(data, "public_X_test.csv")).code == 0);

    const std::string boosted = tmp.dir("boosted");
    auto r = run_cli(tmp, "boost --config " + cfg + " --out-dir " + boosted + " --data " + data +
                              " --depths 1,2 --gen2-fraction 0.4");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("iteration 1/2") != std::string::npos);
    const std::string boost_csv = join(join(boosted, "preds"), "boost.csv");
    CHECK(fs::exists(boost_csv));
    CHECK(fs::exists(pdm::csv::probs_sidecar_path(boost_csv)));
    const json summary = read_json(join(join(boosted, "reports"), "boost_summary.json"));
    REQUIRE(summary.at("iterations").size() == 2);
    CHECK(summary.at("iterations")[0].at("depth") == 1);
    CHECK(summary.at("iterations")[1].at("depth") == 2);
    const json mb = read_json(join(boosted, "manifest.json"));
    CHECK(mb.at("schedule").at("depths") == json::array({1, 2}));
    CHECK(mb.at("schedule").at("gen2_fraction_per_iter").get<double>() == doctest::Approx(0.4));

    // Voting three copies of one run cannot change any label.
    const std::string voted = tmp.dir("voted");
    REQUIRE(run_cli(tmp, "ensemble --out-dir " + voted + " " + boost_csv + " " + boost_csv + " " +
                             boost_csv).code == 0);
    const std::string ensemble_csv = join(join(voted, "preds"), "ensemble.csv");
    const auto before = pdm::csv::read_predictions_csv(boost_csv);
    const auto after = pdm::csv::read_predictions_csv(ensemble_csv);
    REQUIRE(after.entries.size() == before.entries.size());
    for (const auto& [key, entry] : after.entries) {
        REQUIRE(before.entries.count(key) == 1);
        CHECK(entry.labels == before.entries.at(key).labels);
    }

    // Without an explicit target the calibration pulls it from the store.
    const std::string polished = tmp.dir("polished");
    r = run_cli(tmp, "postprocess --out-dir " + polished + " --preds " + boost_csv + " --data " +
                         data + " --seed 11");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(join(join(polished, "preds"), "predictions.csv")));
    const json report = read_json(join(join(polished, "reports"), "postprocess.json"));
    const double recorded = read_json(join(data, "prepared.json")).at("failing_high_mean");
    CHECK(report.at("calibration").at("target").get<double>() == doctest::Approx(recorded));
    CHECK(report.at("repair").at("monotonic_changed").get<int>() >= 0);

    CHECK(run_cli(tmp, "postprocess --out-dir " + tmp.dir("no_target") + " --preds " +
                           boost_csv).code == 2);
}

TEST_CASE("the pipeline equals its stages chained by hand, byte for byte") {
    TempDir tmp;
    const std::string cfg =
        tiny_config(tmp, "seed = 11\nruns = 2\ndepths = 1,2\ngen2_fraction = 0.4\n");

    const std::string p = tmp.dir("p");
    auto r = run_cli(tmp, "pipeline --config " + cfg + " --out-dir " + p);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("pipeline done") != std::string::npos);
    const std::string p_preds = join(p, "preds");
    const json mp = read_json(join(p, "manifest.json"));
    CHECK(mp.at("command") == "pipeline");
    CHECK(mp.at("effective_model").at("hidden_size") == 6);
    CHECK(mp.at("schedule").at("depths") == json::array({1, 2}));
    CHECK(mp.at("run_prediction_csvs").size() == 2);
    CHECK(mp.contains("final_score"));

    // Rebuild the same run out of the individual subcommands.
    const std::string c = tmp.dir("c");
    const std::string c_data = join(c, "data");
    REQUIRE(run_cli(tmp, "generate --config " + cfg + " --out-dir " + c).code == 0);
    CHECK(same_bytes(join(join(p, "data"), "train_gen1.csv"), join(c_data, "train_gen1.csv")));
    REQUIRE(run_cli(tmp, "preprocess --config " + cfg + " --out-dir " + c + " --train-csv " +
                             join(c_data, "train_gen1.csv") + " --test-csv " +
                             join(c_data, "public_X_test.csv")).code == 0);

    std::vector<std::string> run_csvs;
    for (int i = 0; i < 2; ++i) {
        const std::string run_dir = tmp.dir("c_run" + std::to_string(i));
        REQUIRE(run_cli(tmp, "boost --config " + cfg + " --out-dir " + run_dir + " --data " +
                                 c_data + " --seed " + std::to_string(11 + i)).code == 0);
        run_csvs.push_back(join(join(run_dir, "preds"), "boost.csv"));
        const std::string pipeline_run = join(p_preds, "run" + std::to_string(i) + ".csv");
        CHECK(same_bytes(run_csvs.back(), pipeline_run));
        CHECK(same_bytes(pdm::csv::probs_sidecar_path(run_csvs.back()),
                         pdm::csv::probs_sidecar_path(pipeline_run)));
    }

    const std::string voted = tmp.dir("c_vote");
    REQUIRE(run_cli(tmp, "ensemble --config " + cfg + " --out-dir " + voted + " " + run_csvs[0] +
                             " " + run_csvs[1]).code == 0);
    const std::string voted_csv = join(join(voted, "preds"), "ensemble.csv");
    CHECK(same_bytes(voted_csv, join(p_preds, "ensemble.csv")));
    CHECK(same_bytes(pdm::csv::probs_sidecar_path(voted_csv),
                     pdm::csv::probs_sidecar_path(join(p_preds, "ensemble.csv"))));

    const std::string polished = tmp.dir("c_post");
    REQUIRE(run_cli(tmp, "postprocess --config " + cfg + " --out-dir " + polished + " --preds " +
                             voted_csv + " --run-preds " + run_csvs[0] + "," + run_csvs[1] +
                             " --data " + c_data).code == 0);
    const std::string final_csv = join(join(polished, "preds"), "predictions.csv");
    CHECK(same_bytes(final_csv, join(p_preds, "predictions.csv")));
    CHECK(same_bytes(pdm::csv::probs_sidecar_path(final_csv),
                     pdm::csv::probs_sidecar_path(join(p_preds, "predictions.csv"))));

    // Repeating the pipeline reproduces every prediction and report byte.
    const std::string p2 = tmp.dir("p2");
    REQUIRE(run_cli(tmp, "pipeline --config " + cfg + " --out-dir " + p2).code == 0);
    for (const char* name : {"run0.csv", "run1.csv", "ensemble.csv", "predictions.csv"})
        CHECK(same_bytes(join(p_preds, name), join(join(p2, "preds"), name)));
    for (const char* name : {"run_summary.json", "eval.json"})
        CHECK(same_bytes(join(join(p, "reports"), name), join(join(p2, "reports"), name)));
}

TEST_CASE("the iteration count and the depth schedule must agree") {
    TempDir tmp;
    const std::string cfg = tiny_config(tmp, "seed = 11\n");
    const std::string ws = tmp.dir("ws");
    const std::string data = join(ws, "data");
    REQUIRE(run_cli(tmp, "generate --config " + cfg + " --out-dir " + ws).code == 0);
    REQUIRE(run_cli(tmp, "preprocess --config " + cfg + " --out-dir " + ws + " --train-csv " +
                             join(data, "train_gen1.csv") + " --test-csv " +
                             join(data, "public_X_test.csv")).code == 0);

    auto r = run_cli(tmp, "boost --config " + cfg + " --out-dir " + tmp.dir("x") + " --data " +
                              data + " --iterations 3 --depths 2,4");
    CHECK(r.code == 2);
    CHECK(r.err.find("does not match") != std::string::npos);

    r = run_cli(tmp, "boost --config " + cfg + " --out-dir " + tmp.dir("y") + " --data " + data +
                         " --iterations 0");
    CHECK(r.code == 2);
    CHECK(r.err.find("--iterations must be >= 1") != std::string::npos);

    CHECK(run_cli(tmp, "boost --config " + cfg + " --out-dir " + tmp.dir("z") + " --data " + data +
                           " --gen2-fraction 0").code == 2);

    // A bare iteration count expands to the doubling schedule.
    const std::string grown = tmp.dir("grown");
    REQUIRE(run_cli(tmp, "boost --config " + cfg + " --out-dir " + grown + " --data " + data +
                             " --iterations 2 --gen2-fraction 0.4").code == 0);
    CHECK(read_json(join(grown, "manifest.json")).at("schedule").at("depths") ==
          json::array({2, 4}));

    // Matching count and schedule is allowed, and the flag overrides the file.
    const std::string both = tmp.dir("both");
    const std::string cfg_frac = tiny_config(tmp, "seed = 11\ngen2_fraction = 0.4\n");
    REQUIRE(run_cli(tmp, "boost --config " + cfg_frac + " --out-dir " + both + " --data " + data +
                             " --iterations 2 --depths 1,2 --gen2-fraction 0.5").code == 0);
    const json m = read_json(join(both, "manifest.json"));
    CHECK(m.at("schedule").at("depths") == json::array({1, 2}));
    CHECK(m.at("schedule").at("gen2_fraction_per_iter").get<double>() == doctest::Approx(0.5));
}

TEST_CASE("bad invocations exit with a diagnostic") {
    TempDir tmp;

    auto r = run_cli(tmp, "");
    CHECK(r.code != 0);

    r = run_cli(tmp, "frobnicate");
    CHECK(r.code != 0);

    r = run_cli(tmp, "predict --out-dir " + tmp.dir("a"));
    CHECK(r.code != 0);
    CHECK(r.err.find("--model") != std::string::npos);

    r = run_cli(tmp, "generate");
    CHECK(r.code == 2);
    CHECK(r.err.find("missing required --out-dir") != std::string::npos);

    r = run_cli(tmp, "train --out-dir " + tmp.dir("b"));
    CHECK(r.code == 2);
    CHECK(r.err.find("pdm train:") != std::string::npos);

    r = run_cli(tmp, "evaluate --preds " + tmp.file("nope.csv") + " --truth " +
                         tmp.file("nope2.csv"));
    CHECK(r.code == 2);

    r = run_cli(tmp, "pipeline --out-dir " + tmp.dir("c") + " --train-csv only_train.csv");
    CHECK(r.code == 2);
    CHECK(r.err.find("must be given together") != std::string::npos);
}
