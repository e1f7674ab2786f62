// pdm: risk-level prediction for truck component failures.
//
// Subcommands cover every pipeline stage (generate, preprocess, train, boost,
// predict, postprocess, ensemble, evaluate) plus `pipeline`, which chains them
// in-process. Settings layer as defaults < --config file < flags; every
// invocation writes a manifest with the effective configuration so a run can
// be reproduced exactly.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdm/csv.hpp"
#include "pdm/error.hpp"
#include "pdm/eval.hpp"
#include "pdm/log.hpp"
#include "pdm/nn.hpp"
#include "pdm/pipeline.hpp"
#include "pdm/postprocess.hpp"
#include "pdm/predictions.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/rng.hpp"
#include "pdm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdm;

namespace {

using ConfigMap = std::map<std::string, std::string>;

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        // general
        "seed", "out_dir", "jobs", "runs", "iterations", "depths", "gen2_fraction",
        "selection_mode", "tie_break", "smooth_threshold", "target_high_mean",
        "calibration_tolerance", "dev_split", "min_score", "train_csv", "test_csv", "truth_csv",
        "write_checkpoints",
        // model
        "hidden_size", "n_layers", "dropout_rate", "l2_lambda", "learning_rate", "adam_beta1",
        "adam_beta2", "adam_eps", "batch_size", "epochs", "clip_gradients", "clip_norm",
        // synthetic data
        "train_trucks", "test_trucks_gen1", "test_trucks_gen2", "features", "failure_fraction",
        "series_len_min", "series_len_max", "high_window", "medium_window", "gen2_shift_scale",
        "noise_std", "missing_fraction"};
    return keys;
}

std::string trim(std::string s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

// Line-oriented `key = value`; '#' starts a comment; later keys win.
ConfigMap read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    ConfigMap out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected `key = value`");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        if (known_keys().find(key) == known_keys().end())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key \"" + key +
                              "\"");
        out[key] = value;
    }
    return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    if constexpr (std::is_same_v<T, std::string>) {
        return value;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw ConfigError("config key " + key + ": cannot parse \"" + value + "\" as bool");
    } else if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument("trailing junk");
            return static_cast<T>(v);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": cannot parse \"" + value + "\" as number");
        }
    } else {
        T v{};
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || ptr != value.data() + value.size())
            throw ConfigError("config key " + key + ": cannot parse \"" + value + "\" as integer");
        return v;
    }
}

// defaults < config file < flags.
template <typename T>
T resolve(const CLI::App& cmd, const std::string& flag, const ConfigMap& file,
          const std::string& key, T dflt) {
    if (cmd.count(flag) > 0) return cmd.get_option(flag)->as<T>();
    if (const auto it = file.find(key); it != file.end()) return parse_value<T>(key, it->second);
    return dflt;
}

template <typename T>
std::optional<T> resolve_optional(const CLI::App& cmd, const std::string& flag,
                                  const ConfigMap& file, const std::string& key) {
    if (cmd.count(flag) > 0) return cmd.get_option(flag)->as<T>();
    if (const auto it = file.find(key); it != file.end()) return parse_value<T>(key, it->second);
    return std::nullopt;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& raw) {
    std::vector<int> out;
    std::string item;
    std::istringstream in(raw);
    while (std::getline(in, item, ',')) out.push_back(parse_value<int>(key, item));
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
}

ConfigMap load_config(const CLI::App& cmd) {
    if (cmd.count("--config") > 0)
        return read_config_file(cmd.get_option("--config")->as<std::string>());
    return {};
}

std::string require_path(const CLI::App& cmd, const std::string& flag, const ConfigMap& file,
                         const std::string& key) {
    const auto v = resolve<std::string>(cmd, flag, file, key, "");
    if (v.empty()) throw ConfigError("missing required " + flag + " (config key " + key + ")");
    return v;
}

std::string require_out_dir(const CLI::App& cmd, const ConfigMap& file) {
    return require_path(cmd, "--out-dir", file, "out_dir");
}

// Flag-only options (no config-file counterpart).
std::string flag_or(const CLI::App& cmd, const std::string& flag, const std::string& dflt) {
    return cmd.count(flag) > 0 ? cmd.get_option(flag)->as<std::string>() : dflt;
}

// Model hyperparameters have no dedicated flags; they come from the config
// file only.
nn::ModelConfig model_from_file(const ConfigMap& file, std::uint64_t seed) {
    nn::ModelConfig dflt;
    nn::ModelConfig m;
    auto num = [&](const char* key, double d) {
        const auto it = file.find(key);
        return it == file.end() ? d : parse_value<double>(key, it->second);
    };
    auto integer = [&](const char* key, int d) {
        const auto it = file.find(key);
        return it == file.end() ? d : parse_value<int>(key, it->second);
    };
    m.n_layers = integer("n_layers", dflt.n_layers);
    m.hidden_size = integer("hidden_size", dflt.hidden_size);
    m.dropout_rate = num("dropout_rate", dflt.dropout_rate);
    m.l2_lambda = num("l2_lambda", dflt.l2_lambda);
    m.learning_rate = num("learning_rate", dflt.learning_rate);
    m.adam_beta1 = num("adam_beta1", dflt.adam_beta1);
    m.adam_beta2 = num("adam_beta2", dflt.adam_beta2);
    m.adam_eps = num("adam_eps", dflt.adam_eps);
    m.batch_size = integer("batch_size", dflt.batch_size);
    m.epochs = integer("epochs", dflt.epochs);
    if (const auto it = file.find("clip_gradients"); it != file.end())
        m.clip_gradients = parse_value<bool>("clip_gradients", it->second);
    m.clip_norm = num("clip_norm", dflt.clip_norm);
    m.seed = seed;
    return m;
}

json model_json(const nn::ModelConfig& m) {
    return json{{"n_layers", m.n_layers},
                {"hidden_size", m.hidden_size},
                {"input_size", m.input_size},
                {"dropout_rate", m.dropout_rate},
                {"l2_lambda", m.l2_lambda},
                {"learning_rate", m.learning_rate},
                {"adam_beta1", m.adam_beta1},
                {"adam_beta2", m.adam_beta2},
                {"adam_eps", m.adam_eps},
                {"batch_size", m.batch_size},
                {"epochs", m.epochs},
                {"clip_gradients", m.clip_gradients},
                {"clip_norm", m.clip_norm},
                {"seed", m.seed}};
}

synth::SynthConfig resolve_synth(const ConfigMap& file, std::uint64_t seed) {
    synth::SynthConfig c;
    auto integer = [&](const char* key, int d) {
        const auto it = file.find(key);
        return it == file.end() ? d : parse_value<int>(key, it->second);
    };
    auto num = [&](const char* key, double d) {
        const auto it = file.find(key);
        return it == file.end() ? d : parse_value<double>(key, it->second);
    };
    c.n_train_trucks = integer("train_trucks", c.n_train_trucks);
    c.n_test_trucks_gen1 = integer("test_trucks_gen1", c.n_test_trucks_gen1);
    c.n_test_trucks_gen2 = integer("test_trucks_gen2", c.n_test_trucks_gen2);
    c.n_features = integer("features", c.n_features);
    c.failure_fraction = num("failure_fraction", c.failure_fraction);
    c.series_len_min = integer("series_len_min", c.series_len_min);
    c.series_len_max = integer("series_len_max", c.series_len_max);
    c.high_window = integer("high_window", c.high_window);
    c.medium_window = integer("medium_window", c.medium_window);
    c.gen2_shift_scale = num("gen2_shift_scale", c.gen2_shift_scale);
    c.noise_std = num("noise_std", c.noise_std);
    c.missing_fraction = num("missing_fraction", c.missing_fraction);
    c.seed = seed;
    return c;
}

json synth_json(const synth::SynthConfig& c) {
    return json{{"train_trucks", c.n_train_trucks},
                {"test_trucks_gen1", c.n_test_trucks_gen1},
                {"test_trucks_gen2", c.n_test_trucks_gen2},
                {"features", c.n_features},
                {"failure_fraction", c.failure_fraction},
                {"series_len_min", c.series_len_min},
                {"series_len_max", c.series_len_max},
                {"high_window", c.high_window},
                {"medium_window", c.medium_window},
                {"gen2_shift_scale", c.gen2_shift_scale},
                {"noise_std", c.noise_std},
                {"missing_fraction", c.missing_fraction},
                {"seed", c.seed}};
}

// --depths / depths wins; --iterations k alone grows 2,4,...,2k (the default
// five-step schedule is exactly k=5); both present must agree on length.
std::vector<int> resolve_depths(const CLI::App& cmd, const ConfigMap& file) {
    const auto depths_str = resolve_optional<std::string>(cmd, "--depths", file, "depths");
    const auto iterations = resolve_optional<int>(cmd, "--iterations", file, "iterations");
    if (depths_str) {
        auto depths = parse_int_list("depths", *depths_str);
        if (iterations && *iterations != static_cast<int>(depths.size()))
            throw ConfigError("--iterations " + std::to_string(*iterations) +
                              " does not match the " + std::to_string(depths.size()) +
                              "-entry depth schedule");
        return depths;
    }
    if (iterations) {
        if (*iterations < 1) throw ConfigError("--iterations must be >= 1");
        std::vector<int> depths;
        for (int i = 1; i <= *iterations; ++i) depths.push_back(2 * i);
        return depths;
    }
    return pipeline::BoostSchedule{}.depths;
}

pipeline::BoostSchedule resolve_schedule(const CLI::App& cmd, const ConfigMap& file) {
    pipeline::BoostSchedule s;
    s.depths = resolve_depths(cmd, file);
    s.gen2_fraction_per_iter =
        resolve<double>(cmd, "--gen2-fraction", file, "gen2_fraction", s.gen2_fraction_per_iter);
    if (const auto it = file.find("selection_mode"); it != file.end())
        s.selection_mode = pipeline::parse_selection_mode(trim(it->second));
    s.validate();
    return s;
}

json schedule_json(const pipeline::BoostSchedule& s) {
    return json{{"depths", s.depths},
                {"gen2_fraction_per_iter", s.gen2_fraction_per_iter},
                {"selection_mode", pipeline::to_string(s.selection_mode)}};
}

void write_manifest(const std::string& out_dir, const json& manifest) {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("write to " + path + " failed");
}

void amend_manifest(const std::string& path, const json& extra) {
    json manifest = json::object();
    if (std::ifstream in(path); in) manifest = json::parse(in, nullptr, true);
    manifest.update(extra);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << manifest.dump(2) << "\n";
}

void write_report(const std::string& out_dir, const std::string& name, const std::string& body) {
    const std::string dir = pipeline::subdir(out_dir, "reports");
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << body;
    if (body.empty() || body.back() != '\n') out << "\n";
}

// Reads a prediction CSV and, when its probability sidecar exists, attaches
// the per-class probabilities.
PredictionSet read_predictions_with_probs(const std::string& path) {
    PredictionSet preds = csv::read_predictions_csv(path);
    const std::string sidecar = csv::probs_sidecar_path(path);
    if (fs::exists(sidecar)) merge_probabilities(preds, csv::read_probs_csv(sidecar));
    return preds;
}

// Ground truth files label the column true_risk; prediction files pred_risk.
PredictionSet read_labels_auto(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string header;
    std::getline(in, header);
    in.close();
    const char* column = header.find("true_risk") != std::string::npos ? "true_risk" : "pred_risk";
    return csv::read_predictions_csv(path, column);
}

struct PreparedJson {
    std::vector<int> kept_columns;
    int dropped_columns = 0;
    double failing_high_mean = 0.0;
};

PreparedJson read_prepared_json(const std::string& data_dir) {
    const std::string path = (fs::path(data_dir) / "prepared.json").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    const json j = json::parse(in, nullptr, true);
    PreparedJson out;
    out.kept_columns = j.at("clean").at("kept_columns").get<std::vector<int>>();
    out.dropped_columns = j.at("clean").at("dropped_columns").get<int>();
    out.failing_high_mean = j.at("failing_high_mean").get<double>();
    return out;
}

// Test CSV -> keyed, column-filtered, per-generation normalized windows;
// matches what preprocess stored for the same file bit for bit.
std::vector<KeyedWindow> prepare_test_from_csv(const std::string& test_csv,
                                               const PreparedJson& prep) {
    const std::size_t original_f = prep.kept_columns.size() + static_cast<std::size_t>(prep.dropped_columns);
    auto keyed = assign_keys(csv::read_test_csv(test_csv));
    std::vector<KeyedWindow> gen1, gen2;
    for (auto& kw : keyed) {
        if (kw.window.feature_count() != original_f)
            throw ContractError("test file has " + std::to_string(kw.window.feature_count()) +
                                " features, the recorded column map expects " +
                                std::to_string(original_f));
        Window filtered;
        filtered.chassis_id = kw.window.chassis_id;
        filtered.gen = kw.window.gen;
        for (const auto& row : kw.window.features) {
            std::vector<double> kept;
            kept.reserve(prep.kept_columns.size());
            for (int col : prep.kept_columns) {
                const double v = row[static_cast<std::size_t>(col)];
                if (!std::isfinite(v))
                    throw StructureError("test chassis " + kw.window.chassis_id +
                                         " has a missing cell in a kept column");
                kept.push_back(v);
            }
            filtered.features.push_back(std::move(kept));
        }
        kw.window = std::move(filtered);
        (kw.key.gen == Generation::Gen1 ? gen1 : gen2).push_back(std::move(kw));
    }
    auto normalize = [](std::vector<KeyedWindow>& windows, const std::string& scope) {
        if (windows.empty()) return;
        std::vector<Window> plain;
        plain.reserve(windows.size());
        for (const auto& kw : windows) plain.push_back(kw.window);
        const auto stats = preprocess::fit_norm(preprocess::stack_rows(plain), scope);
        for (auto& kw : windows) kw.window = preprocess::apply_norm(kw.window, stats);
    };
    normalize(gen1, "test_gen1");
    normalize(gen2, "test_gen2");
    std::vector<KeyedWindow> all;
    all.reserve(gen1.size() + gen2.size());
    all.insert(all.end(), gen1.begin(), gen1.end());
    all.insert(all.end(), gen2.begin(), gen2.end());
    return all;
}

void write_predictions_with_probs(const PredictionSet& preds, const std::string& path) {
    csv::write_predictions_csv(preds, path);
    if (preds.has_probabilities()) csv::write_probs_csv(preds, csv::probs_sidecar_path(path));
}

std::string preds_path(const std::string& out_dir, const std::string& name) {
    const std::string dir = pipeline::subdir(out_dir, "preds");
    fs::create_directories(dir);
    return (fs::path(dir) / name).string();
}

constexpr std::uint64_t kDefaultSeed = 7;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Per-timestep component risk prediction: synthetic data, stacked "
                 "recurrent models, pseudo-label boosting, ensembling, and scoring."};
    app.require_subcommand(1);
    std::string active = "pdm";
    int exit_code = 0;

    auto add_common = [](CLI::App* cmd) {
        cmd->add_option("--config", "line-oriented `key = value` settings file");
        cmd->add_option("--seed", "base random seed (default 7)");
        cmd->add_option("--out-dir", "run directory (data/, checkpoints/, preds/, reports/)");
    };

    // generate: synthetic fleet -> <out>/data/*.csv
    auto* cmd_generate = app.add_subcommand(
        "generate", "Write a synthetic labeled fleet: training series, test windows, "
                    "hidden truth, and per-chassis variant specs");
    add_common(cmd_generate);
    cmd_generate->callback([&] {
        active = "generate";
        const auto file = load_config(*cmd_generate);
        const std::string out = require_out_dir(*cmd_generate, file);
        const auto seed = resolve<std::uint64_t>(*cmd_generate, "--seed", file, "seed", kDefaultSeed);
        const auto config = resolve_synth(file, seed);
        config.validate();
        pipeline::ensure_run_dirs(out);
        const std::string data_dir = pipeline::subdir(out, "data");
        const auto summary = synth::generate_dataset(config, data_dir);
        write_manifest(out, json{{"command", "generate"},
                                 {"out_dir", out},
                                 {"synth", synth_json(config)},
                                 {"summary",
                                  {{"train_series", summary.n_train_series},
                                   {"test_windows_gen1", summary.n_test_windows_gen1},
                                   {"test_windows_gen2", summary.n_test_windows_gen2},
                                   {"features", summary.n_features},
                                   {"skipped_test_trucks", summary.skipped_test_trucks}}},
                                 {"files",
                                  {data_dir + "/train_gen1.csv", data_dir + "/public_X_test.csv",
                                   data_dir + "/ground_truth.csv", data_dir + "/variants.csv"}}});
        std::printf("generated %d training series, %d+%d test windows into %s\n",
                    summary.n_train_series, summary.n_test_windows_gen1,
                    summary.n_test_windows_gen2, data_dir.c_str());
    });

    // preprocess: train/test CSV -> window store + normalization stats
    auto* cmd_preprocess = app.add_subcommand(
        "preprocess", "Clean, window, and normalize the raw CSVs into a binary window store");
    add_common(cmd_preprocess);
    cmd_preprocess->add_option("--train-csv", "labeled training series CSV");
    cmd_preprocess->add_option("--test-csv", "unlabeled 10-step test window CSV");
    cmd_preprocess->callback([&] {
        active = "preprocess";
        const auto file = load_config(*cmd_preprocess);
        const std::string out = require_out_dir(*cmd_preprocess, file);
        const auto seed = resolve<std::uint64_t>(*cmd_preprocess, "--seed", file, "seed", kDefaultSeed);
        const std::string train_csv = require_path(*cmd_preprocess, "--train-csv", file, "train_csv");
        const std::string test_csv = require_path(*cmd_preprocess, "--test-csv", file, "test_csv");
        pipeline::ensure_run_dirs(out);
        const auto data = pipeline::prepare(train_csv, test_csv, seed);
        pipeline::save_prepared(data, pipeline::subdir(out, "data"));
        write_manifest(out, json{{"command", "preprocess"},
                                 {"out_dir", out},
                                 {"seed", seed},
                                 {"train_csv", train_csv},
                                 {"test_csv", test_csv},
                                 {"train_windows", data.train_windows.size()},
                                 {"test_gen1_windows", data.test_gen1.size()},
                                 {"test_gen2_windows", data.test_gen2.size()},
                                 {"features", data.n_features},
                                 {"failing_high_mean", data.failing_high_mean}});
        std::printf("prepared %zu training windows, %zu+%zu test windows (%d features)\n",
                    data.train_windows.size(), data.test_gen1.size(), data.test_gen2.size(),
                    data.n_features);
    });

    // train: window store -> one supervised checkpoint
    auto* cmd_train = app.add_subcommand(
        "train", "Train a single model on the prepared training windows");
    add_common(cmd_train);
    cmd_train->add_option("--data", "prepared window store directory (default <out-dir>/data)");
    cmd_train->callback([&] {
        active = "train";
        const auto file = load_config(*cmd_train);
        const std::string out = require_out_dir(*cmd_train, file);
        const auto seed = resolve<std::uint64_t>(*cmd_train, "--seed", file, "seed", kDefaultSeed);
        const std::string data_dir = flag_or(*cmd_train, "--data", "");
        const std::string store = data_dir.empty() ? pipeline::subdir(out, "data") : data_dir;
        const auto data = pipeline::load_prepared(store);
        nn::ModelConfig cfg = model_from_file(file, seed);
        cfg.input_size = data.n_features;
        cfg.validate();
        nn::LstmModel model = nn::init(cfg);
        const auto trace = nn::train(model, data.train_windows);
        pipeline::ensure_run_dirs(out);
        const std::string ckpt = (fs::path(pipeline::subdir(out, "checkpoints")) / "model.bin").string();
        nn::save_model(model, ckpt);
        write_manifest(out, json{{"command", "train"},
                                 {"out_dir", out},
                                 {"seed", seed},
                                 {"data", store},
                                 {"model", model_json(cfg)},
                                 {"checkpoint", ckpt},
                                 {"epoch_loss", trace}});
        std::printf("trained %d-layer model on %zu windows, final epoch loss %.6f -> %s\n",
                    cfg.n_layers, data.train_windows.size(), trace.back(), ckpt.c_str());
    });

    // boost: one full pseudo-label run
    auto* cmd_boost = app.add_subcommand(
        "boost", "One semi-supervised run: retrain at growing depth, injecting "
                 "confidently pseudo-labeled gen2 trucks each iteration");
    add_common(cmd_boost);
    cmd_boost->add_option("--data", "prepared window store directory (default <out-dir>/data)");
    cmd_boost->add_option("--iterations", "number of boost iterations");
    cmd_boost->add_option("--depths", "comma-separated layer counts, one per iteration");
    cmd_boost->add_option("--gen2-fraction", "fraction of gen2 trucks injected per iteration");
    cmd_boost->callback([&] {
        active = "boost";
        const auto file = load_config(*cmd_boost);
        const std::string out = require_out_dir(*cmd_boost, file);
        const auto seed = resolve<std::uint64_t>(*cmd_boost, "--seed", file, "seed", kDefaultSeed);
        const std::string data_flag = flag_or(*cmd_boost, "--data", "");
        const std::string store = data_flag.empty() ? pipeline::subdir(out, "data") : data_flag;
        const auto schedule = resolve_schedule(*cmd_boost, file);
        const auto data = pipeline::load_prepared(store);
        nn::ModelConfig cfg = model_from_file(file, seed);
        cfg.input_size = data.n_features;
        cfg.validate();
        const auto result = pipeline::boost_run(data, schedule, cfg, seed);
        pipeline::ensure_run_dirs(out);
        const std::string ckpt =
            (fs::path(pipeline::subdir(out, "checkpoints")) / "boost_final.bin").string();
        nn::save_model(result.model, ckpt);
        const std::string csv_path = preds_path(out, "boost.csv");
        write_predictions_with_probs(result.predictions, csv_path);
        json iterations = json::array();
        for (const auto& entry : result.log) {
            iterations.push_back({{"iteration", entry.iteration},
                                  {"depth", entry.depth},
                                  {"model_seed", entry.model_seed},
                                  {"pool_windows_before", entry.pool_windows_before},
                                  {"injected_trucks", entry.injected_trucks},
                                  {"pool_windows_after", entry.pool_windows_after},
                                  {"final_epoch_loss", entry.final_epoch_loss},
                                  {"pool_exhausted", entry.pool_exhausted}});
            std::printf("iteration %d/%zu: depth %d, loss %.6f, injected %zu trucks, pool %zu -> %zu\n",
                        entry.iteration, result.log.size(), entry.depth, entry.final_epoch_loss,
                        entry.injected_trucks, entry.pool_windows_before, entry.pool_windows_after);
        }
        write_report(out, "boost_summary.json",
                     json{{"run_seed", result.run_seed},
                          {"degenerate_no_gen2", result.degenerate_no_gen2},
                          {"injected_chassis", result.injected_chassis},
                          {"iterations", iterations}}
                         .dump(2));
        json timed = iterations;
        for (std::size_t i = 0; i < result.log.size(); ++i) timed[i]["seconds"] = result.log[i].seconds;
        write_manifest(out, json{{"command", "boost"},
                                 {"out_dir", out},
                                 {"seed", seed},
                                 {"data", store},
                                 {"model", model_json(cfg)},
                                 {"schedule", schedule_json(schedule)},
                                 {"checkpoint", ckpt},
                                 {"predictions_csv", csv_path},
                                 {"iterations", timed}});
        std::printf("final predictions -> %s\n", csv_path.c_str());
    });

    // predict: checkpoint + test data -> predictions CSV
    auto* cmd_predict = app.add_subcommand(
        "predict", "Label test windows with a trained checkpoint");
    add_common(cmd_predict);
    cmd_predict->add_option("--model", "model checkpoint")->required();
    cmd_predict->add_option("--data", "prepared window store directory");
    cmd_predict->add_option("--test-csv",
                            "raw test CSV (uses the store's recorded column map and "
                            "per-generation normalization)");
    cmd_predict->callback([&] {
        active = "predict";
        const auto file = load_config(*cmd_predict);
        const std::string out = require_out_dir(*cmd_predict, file);
        const std::string model_path = cmd_predict->get_option("--model")->as<std::string>();
        const std::string data_dir = flag_or(*cmd_predict, "--data", "");
        const std::string store = data_dir.empty() ? pipeline::subdir(out, "data") : data_dir;
        const std::string test_csv = resolve<std::string>(*cmd_predict, "--test-csv", file, "test_csv", "");
        nn::LstmModel model = nn::load_model(model_path);
        std::vector<KeyedWindow> windows;
        if (!test_csv.empty()) {
            windows = prepare_test_from_csv(test_csv, read_prepared_json(store));
        } else {
            windows = pipeline::load_keyed_windows((fs::path(store) / "test_gen1.bin").string());
            auto gen2 = pipeline::load_keyed_windows((fs::path(store) / "test_gen2.bin").string());
            windows.insert(windows.end(), gen2.begin(), gen2.end());
        }
        const auto preds = nn::predict(model, windows);
        const std::string csv_path = preds_path(out, "predictions.csv");
        write_predictions_with_probs(preds, csv_path);
        write_manifest(out, json{{"command", "predict"},
                                 {"out_dir", out},
                                 {"model", model_path},
                                 {"data", store},
                                 {"test_csv", test_csv},
                                 {"windows", windows.size()},
                                 {"predictions_csv", csv_path}});
        std::printf("labeled %zu windows -> %s\n", windows.size(), csv_path.c_str());
    });

    // postprocess: repair + calibrate a prediction set
    auto* cmd_post = app.add_subcommand(
        "postprocess", "Enforce monotone risk, smooth leading Low runs, and calibrate "
                       "High counts toward the observed failing mean");
    add_common(cmd_post);
    cmd_post->add_option("--preds", "predictions CSV to post-process")->required();
    cmd_post->add_option("--run-preds",
                         "comma-separated per-run prediction CSVs; enables consensus voting");
    cmd_post->add_option("--smooth-threshold", "max leading-Low run length to promote");
    cmd_post->add_option("--target-high-mean", "calibration target for mean High count");
    cmd_post->add_option("--data", "prepared store directory (for the recorded calibration target)");
    cmd_post->callback([&] {
        active = "postprocess";
        const auto file = load_config(*cmd_post);
        const std::string out = require_out_dir(*cmd_post, file);
        const auto seed = resolve<std::uint64_t>(*cmd_post, "--seed", file, "seed", kDefaultSeed);
        const int threshold =
            resolve<int>(*cmd_post, "--smooth-threshold", file, "smooth_threshold", 2);
        const double tolerance = [&] {
            const auto it = file.find("calibration_tolerance");
            return it == file.end() ? 0.25 : parse_value<double>("calibration_tolerance", it->second);
        }();
        const std::string preds_csv = cmd_post->get_option("--preds")->as<std::string>();
        PredictionSet input = read_predictions_with_probs(preds_csv);

        postprocess::RepairReport repair_report;
        PredictionSet repaired;
        std::vector<std::string> run_csvs;
        if (cmd_post->count("--run-preds") > 0) {
            std::string item;
            std::istringstream list(cmd_post->get_option("--run-preds")->as<std::string>());
            while (std::getline(list, item, ',')) run_csvs.push_back(trim(item));
            std::vector<PredictionSet> runs;
            runs.reserve(run_csvs.size());
            for (const auto& p : run_csvs) runs.push_back(read_predictions_with_probs(p));
            repaired = postprocess::consensus_repair(runs, input, threshold, &repair_report);
        } else {
            repaired = postprocess::repair_all(input, threshold, &repair_report);
        }

        auto target = resolve_optional<double>(*cmd_post, "--target-high-mean", file, "target_high_mean");
        if (!target) {
            const std::string data_dir = flag_or(*cmd_post, "--data", "");
            if (data_dir.empty())
                throw ConfigError("calibration needs --target-high-mean or --data (a prepared "
                                  "store with the recorded failing mean)");
            target = read_prepared_json(data_dir).failing_high_mean;
        }
        Rng calibrate_rng(sub_seed(seed, "calibrate"));
        postprocess::CalibrationReport calibration;
        const PredictionSet final_preds = postprocess::calibrate_high_counts(
            repaired, *target, tolerance, calibrate_rng, &calibration);

        const std::string csv_path = preds_path(out, "predictions.csv");
        write_predictions_with_probs(final_preds, csv_path);
        const json report{{"repair",
                           {{"monotonic_changed", repair_report.monotonic_changed},
                            {"smooth_changed", repair_report.smooth_changed},
                            {"vote_ties", repair_report.vote_ties}}},
                          {"calibration",
                           {{"target", *target},
                            {"tolerance", tolerance},
                            {"mean_before", calibration.mean_before},
                            {"mean_after", calibration.mean_after},
                            {"moves", calibration.moves},
                            {"failing_sequences", calibration.failing_sequences},
                            {"hit_tolerance", calibration.hit_tolerance},
                            {"histogram_before", calibration.histogram_before},
                            {"histogram_after", calibration.histogram_after}}}};
        write_report(out, "postprocess.json", report.dump(2));
        write_manifest(out, json{{"command", "postprocess"},
                                 {"out_dir", out},
                                 {"seed", seed},
                                 {"preds", preds_csv},
                                 {"run_preds", run_csvs},
                                 {"smooth_threshold", threshold},
                                 {"report", report},
                                 {"predictions_csv", csv_path}});
        std::printf("repaired %d + %d sequences, calibration mean %.3f -> %.3f (target %.3f) -> %s\n",
                    repair_report.monotonic_changed, repair_report.smooth_changed,
                    calibration.mean_before, calibration.mean_after, *target, csv_path.c_str());
    });

    // ensemble: N prediction CSVs -> voted set
    auto* cmd_ensemble = app.add_subcommand(
        "ensemble", "Majority-vote several prediction sets into one");
    add_common(cmd_ensemble);
    static std::vector<std::string> ensemble_inputs;
    cmd_ensemble->add_option("inputs", ensemble_inputs, "prediction CSVs to vote over");
    cmd_ensemble->callback([&] {
        active = "ensemble";
        const auto file = load_config(*cmd_ensemble);
        const std::string out = require_out_dir(*cmd_ensemble, file);
        const auto& inputs = ensemble_inputs;
        if (inputs.empty()) throw ConfigError("ensemble needs at least one input CSV");
        std::vector<PredictionSet> runs;
        runs.reserve(inputs.size());
        for (const auto& p : inputs) runs.push_back(read_predictions_with_probs(p));
        pipeline::EnsembleConfig config;
        config.n_runs = static_cast<int>(runs.size());
        if (const auto it = file.find("tie_break"); it != file.end())
            config.tie_break = pipeline::parse_tie_break(trim(it->second));
        const PredictionSet voted = pipeline::ensemble(runs, config);
        const std::string csv_path = preds_path(out, "ensemble.csv");
        write_predictions_with_probs(voted, csv_path);
        write_manifest(out, json{{"command", "ensemble"},
                                 {"out_dir", out},
                                 {"inputs", inputs},
                                 {"tie_break", pipeline::to_string(config.tie_break)},
                                 {"predictions_csv", csv_path}});
        std::printf("voted %zu runs over %zu windows -> %s\n", runs.size(), voted.entries.size(),
                    csv_path.c_str());
    });

    // evaluate: predictions + truth -> scored report
    auto* cmd_eval = app.add_subcommand(
        "evaluate", "Score predictions with per-generation macro-F1 and their mean");
    add_common(cmd_eval);
    cmd_eval->add_option("--preds", "predictions CSV")->required();
    cmd_eval->add_option("--truth", "ground truth CSV")->required();
    cmd_eval->add_option("--dev-split", "score a seeded truck-level fraction, e.g. 0.2");
    cmd_eval->add_option("--min-score", "exit nonzero when the final score falls below this");
    cmd_eval->callback([&] {
        active = "evaluate";
        const auto file = load_config(*cmd_eval);
        const auto seed = resolve<std::uint64_t>(*cmd_eval, "--seed", file, "seed", kDefaultSeed);
        const auto dev = resolve_optional<double>(*cmd_eval, "--dev-split", file, "dev_split");
        const double min_score = resolve<double>(*cmd_eval, "--min-score", file, "min_score", 0.0);
        const PredictionSet preds =
            read_labels_auto(cmd_eval->get_option("--preds")->as<std::string>());
        const PredictionSet truth =
            read_labels_auto(cmd_eval->get_option("--truth")->as<std::string>());
        const auto report = eval::score(preds, truth, dev, seed);
        std::printf("%s", eval::render_table(report).c_str());
        const std::string out = resolve<std::string>(*cmd_eval, "--out-dir", file, "out_dir", "");
        if (!out.empty()) {
            pipeline::ensure_run_dirs(out);
            write_report(out, "eval.json", eval::to_json(report));
            write_manifest(out, json{{"command", "evaluate"},
                                     {"preds", cmd_eval->get_option("--preds")->as<std::string>()},
                                     {"truth", cmd_eval->get_option("--truth")->as<std::string>()},
                                     {"final_score", report.final_score},
                                     {"min_score", min_score}});
        }
        if (report.final_score < min_score) {
            std::fprintf(stderr, "pdm evaluate: final score %.4f below required %.4f\n",
                         report.final_score, min_score);
            exit_code = 3;
        }
    });

    // pipeline: generate-or-load -> boost ensemble -> postprocess -> report
    auto* cmd_pipeline = app.add_subcommand(
        "pipeline", "Run every stage end to end; without input CSVs a synthetic "
                    "fleet is generated first");
    add_common(cmd_pipeline);
    cmd_pipeline->add_option("--train-csv", "labeled training series CSV");
    cmd_pipeline->add_option("--test-csv", "unlabeled test window CSV");
    cmd_pipeline->add_option("--truth-csv", "ground truth for the final report");
    cmd_pipeline->add_option("--jobs", "parallel boost runs (default: number of runs)");
    cmd_pipeline->add_option("--runs", "ensemble size");
    cmd_pipeline->add_option("--iterations", "boost iterations per run");
    cmd_pipeline->add_option("--depths", "comma-separated layer counts, one per iteration");
    cmd_pipeline->add_option("--gen2-fraction", "fraction of gen2 trucks injected per iteration");
    cmd_pipeline->add_option("--smooth-threshold", "max leading-Low run length to promote");
    cmd_pipeline->add_option("--target-high-mean", "calibration target for mean High count");
    cmd_pipeline->callback([&] {
        active = "pipeline";
        const auto file = load_config(*cmd_pipeline);
        const std::string out = require_out_dir(*cmd_pipeline, file);
        const auto seed = resolve<std::uint64_t>(*cmd_pipeline, "--seed", file, "seed", kDefaultSeed);

        pipeline::PipelineConfig pc;
        pc.out_dir = out;
        pc.train_csv = resolve<std::string>(*cmd_pipeline, "--train-csv", file, "train_csv", "");
        pc.test_csv = resolve<std::string>(*cmd_pipeline, "--test-csv", file, "test_csv", "");
        std::string truth_csv =
            resolve<std::string>(*cmd_pipeline, "--truth-csv", file, "truth_csv", "");

        json generated = json::object();
        if (pc.train_csv.empty() || pc.test_csv.empty()) {
            if (pc.train_csv.empty() != pc.test_csv.empty())
                throw ConfigError("--train-csv and --test-csv must be given together");
            const auto synth_config = resolve_synth(file, seed);
            synth_config.validate();
            pipeline::ensure_run_dirs(out);
            const std::string data_dir = pipeline::subdir(out, "data");
            const auto summary = synth::generate_dataset(synth_config, data_dir);
            pc.train_csv = data_dir + "/train_gen1.csv";
            pc.test_csv = data_dir + "/public_X_test.csv";
            if (truth_csv.empty()) truth_csv = data_dir + "/ground_truth.csv";
            generated = synth_json(synth_config);
            std::printf("generated synthetic fleet: %d training series, %d+%d test windows\n",
                        summary.n_train_series, summary.n_test_windows_gen1,
                        summary.n_test_windows_gen2);
        }

        pc.model = model_from_file(file, seed);
        pc.schedule = resolve_schedule(*cmd_pipeline, file);
        pc.ensemble.n_runs = resolve<int>(*cmd_pipeline, "--runs", file, "runs", 5);
        pc.ensemble.base_seed = seed;
        if (const auto it = file.find("tie_break"); it != file.end())
            pc.ensemble.tie_break = pipeline::parse_tie_break(trim(it->second));
        pc.jobs = resolve<int>(*cmd_pipeline, "--jobs", file, "jobs", pc.ensemble.n_runs);
        pc.smooth_threshold =
            resolve<int>(*cmd_pipeline, "--smooth-threshold", file, "smooth_threshold", 2);
        pc.target_high_mean =
            resolve_optional<double>(*cmd_pipeline, "--target-high-mean", file, "target_high_mean");
        if (const auto it = file.find("calibration_tolerance"); it != file.end())
            pc.calibration_tolerance = parse_value<double>("calibration_tolerance", it->second);
        if (const auto it = file.find("write_checkpoints"); it != file.end())
            pc.write_checkpoints = parse_value<bool>("write_checkpoints", it->second);

        const auto result = pipeline::full_pipeline(pc);
        json extra{{"command", "pipeline"}, {"effective_model", model_json(pc.model)}};
        if (!generated.empty()) extra["synth"] = generated;

        if (!truth_csv.empty() && fs::exists(truth_csv)) {
            const PredictionSet truth = read_labels_auto(truth_csv);
            const auto report = eval::score(result.predictions, truth);
            std::printf("%s", eval::render_table(report).c_str());
            write_report(out, "eval.json", eval::to_json(report));
            extra["truth_csv"] = truth_csv;
            extra["final_score"] = report.final_score;
        }
        amend_manifest(result.manifest_path, extra);
        std::printf("pipeline done in %.1f s: %s\n", result.seconds_total,
                    result.predictions_csv.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::fprintf(stderr, "pdm %s: %s\n", active.c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "pdm %s: unexpected error: %s\n", active.c_str(), e.what());
        return 2;
    }
    return exit_code;
}
