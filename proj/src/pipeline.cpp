#include "pdm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>

#include "json.hpp"

#include "pdm/csv.hpp"
#include "pdm/error.hpp"
#include "pdm/log.hpp"
#include "pdm/postprocess.hpp"

namespace pdm::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_same_keys(const PredictionSet& a, const PredictionSet& b, const char* what) {
    std::string diff;
    int listed = 0;
    for (const auto& [key, pred] : a.entries)
        if (b.entries.find(key) == b.entries.end() && listed++ < 8) diff += " -" + to_string(key);
    for (const auto& [key, pred] : b.entries)
        if (a.entries.find(key) == a.entries.end() && listed++ < 8) diff += " +" + to_string(key);
    if (a.entries.size() != b.entries.size() || !diff.empty())
        throw ContractError(std::string(what) + ": prediction key sets differ:" + diff);
}

// Binary store helpers.
void wr(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void rd(std::ifstream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("window store truncated");
}
void wr_u64(std::ofstream& out, std::uint64_t v) { wr(out, &v, sizeof v); }
std::uint64_t rd_u64(std::ifstream& in) {
    std::uint64_t v;
    rd(in, &v, sizeof v);
    return v;
}
void wr_str(std::ofstream& out, const std::string& s) {
    wr_u64(out, s.size());
    wr(out, s.data(), s.size());
}
std::string rd_str(std::ifstream& in) {
    const auto n = rd_u64(in);
    if (n > (1ULL << 20)) throw SchemaError("window store string is implausibly long");
    std::string s(n, '\0');
    rd(in, s.data(), n);
    return s;
}

void write_window_body(std::ofstream& out, const Window& w) {
    wr_str(out, w.chassis_id);
    const std::uint8_t gen = w.gen == Generation::Gen2 ? 1 : 0;
    wr(out, &gen, 1);
    const std::uint8_t labeled = w.labeled() ? 1 : 0;
    wr(out, &labeled, 1);
    for (const auto& row : w.features)
        wr(out, row.data(), sizeof(double) * row.size());
    if (labeled)
        for (RiskLevel r : w.labels) {
            const std::uint8_t v = static_cast<std::uint8_t>(to_index(r));
            wr(out, &v, 1);
        }
}

Window read_window_body(std::ifstream& in, std::size_t f) {
    Window w;
    w.chassis_id = rd_str(in);
    std::uint8_t gen, labeled;
    rd(in, &gen, 1);
    rd(in, &labeled, 1);
    w.gen = gen ? Generation::Gen2 : Generation::Gen1;
    w.features.assign(kWindowLen, std::vector<double>(f));
    for (auto& row : w.features) rd(in, row.data(), sizeof(double) * f);
    if (labeled) {
        w.labels.resize(kWindowLen);
        for (auto& r : w.labels) {
            std::uint8_t v;
            rd(in, &v, 1);
            r = risk_from_index(static_cast<int>(v));
        }
    }
    return w;
}

json norm_stats_json(const preprocess::NormStats& stats) {
    return json{{"scope", stats.scope}, {"mean", stats.mean}, {"stddev", stats.stddev}};
}

preprocess::NormStats norm_stats_from_json(const json& j) {
    preprocess::NormStats stats;
    stats.scope = j.at("scope").get<std::string>();
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.stddev = j.at("stddev").get<std::vector<double>>();
    return stats;
}

json iteration_log_json(const IterationLog& log, bool with_timing) {
    json j{{"iteration", log.iteration},
           {"depth", log.depth},
           {"model_seed", log.model_seed},
           {"pool_windows_before", log.pool_windows_before},
           {"injected_trucks", log.injected_trucks},
           {"pool_windows_after", log.pool_windows_after},
           {"final_epoch_loss", log.final_epoch_loss},
           {"pool_exhausted", log.pool_exhausted}};
    if (with_timing) j["seconds"] = log.seconds;
    return j;
}

}  // namespace

SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "confidence_ranked") return SelectionMode::ConfidenceRanked;
    if (s == "random") return SelectionMode::Random;
    throw ConfigError("unknown selection mode \"" + s + "\"");
}

TieBreak parse_tie_break(const std::string& s) {
    if (s == "mean_probability") return TieBreak::MeanProbability;
    if (s == "higher_risk") return TieBreak::HigherRisk;
    throw ConfigError("unknown tie break \"" + s + "\"");
}

std::string to_string(SelectionMode mode) {
    return mode == SelectionMode::ConfidenceRanked ? "confidence_ranked" : "random";
}

std::string to_string(TieBreak tie_break) {
    return tie_break == TieBreak::MeanProbability ? "mean_probability" : "higher_risk";
}

void BoostSchedule::validate() const {
    if (depths.empty()) throw ConfigError("depth schedule is empty");
    for (int d : depths)
        if (d < 1) throw ConfigError("depths must be >= 1");
    if (gen2_fraction_per_iter <= 0.0 || gen2_fraction_per_iter > 1.0)
        throw ConfigError("gen2 fraction per iteration must lie in (0,1]");
    if (gen2_fraction_per_iter * static_cast<double>(depths.size()) > 1.0 + 1e-9)
        throw ConfigError("cumulative injected fraction exceeds 1");
}

void EnsembleConfig::validate() const {
    if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
}

PreparedData prepare(const std::string& train_csv, const std::string& test_csv,
                     std::uint64_t seed) {
    PreparedData data;

    auto series = csv::read_train_csv(train_csv);
    const std::size_t original_f = series.empty() ? 0 : series.front().feature_count();
    auto cleaned = preprocess::clean(series, data.clean_report);

    Rng extract_rng(sub_seed(seed, "extract"));
    auto raw_windows = preprocess::extract_training_windows(cleaned, extract_rng, data.extract_report);
    if (raw_windows.empty()) throw StructureError("no training windows could be extracted");

    // Calibration target: mean High count over the anchored failing training
    // windows. Test windows are cut by the same uniform-anchor rule, so this
    // statistic estimates the hidden test-set mean without peeking at it.
    int failing = 0;
    double high_sum = 0.0;
    for (const auto& w : raw_windows) {
        int hc = 0;
        for (RiskLevel r : w.labels)
            if (r == RiskLevel::High) ++hc;
        if (hc > 0) {
            ++failing;
            high_sum += hc;
        }
    }
    data.failing_high_mean = failing > 0 ? high_sum / failing : 0.0;

    data.train_stats = preprocess::fit_norm(preprocess::stack_rows(raw_windows), "train_gen1");
    data.train_windows = preprocess::apply_norm(raw_windows, data.train_stats);
    data.n_features = static_cast<int>(data.clean_report.kept_columns.size());

    auto test_windows = csv::read_test_csv(test_csv);
    auto keyed = assign_keys(test_windows);
    std::vector<KeyedWindow> gen1, gen2;
    for (auto& kw : keyed) {
        if (kw.window.feature_count() != original_f)
            throw ContractError("test file has " + std::to_string(kw.window.feature_count()) +
                                " features, training file has " + std::to_string(original_f));
        Window filtered;
        filtered.chassis_id = kw.window.chassis_id;
        filtered.gen = kw.window.gen;
        for (const auto& row : kw.window.features) {
            std::vector<double> kept;
            kept.reserve(data.clean_report.kept_columns.size());
            for (int col : data.clean_report.kept_columns) {
                const double v = row[static_cast<std::size_t>(col)];
                if (!std::isfinite(v))
                    throw StructureError("test chassis " + kw.window.chassis_id +
                                         " has a missing cell in a kept column; windows must stay "
                                         "complete");
                kept.push_back(v);
            }
            filtered.features.push_back(std::move(kept));
        }
        kw.window = std::move(filtered);
        (kw.key.gen == Generation::Gen1 ? gen1 : gen2).push_back(std::move(kw));
    }

    auto normalize_scope = [](std::vector<KeyedWindow>& windows, const std::string& scope,
                              preprocess::NormStats& stats) {
        if (windows.empty()) return;
        std::vector<Window> plain;
        plain.reserve(windows.size());
        for (const auto& kw : windows) plain.push_back(kw.window);
        stats = preprocess::fit_norm(preprocess::stack_rows(plain), scope);
        for (auto& kw : windows) kw.window = preprocess::apply_norm(kw.window, stats);
    };
    normalize_scope(gen1, "test_gen1", data.gen1_stats);
    normalize_scope(gen2, "test_gen2", data.gen2_stats);
    data.test_gen1 = std::move(gen1);
    data.test_gen2 = std::move(gen2);

    log::info("prepare: ", data.train_windows.size(), " training windows, ",
              data.test_gen1.size(), " gen1 + ", data.test_gen2.size(),
              " gen2 test windows, F=", data.n_features);
    return data;
}

std::uint64_t boost_iteration_seed(std::uint64_t run_seed, int iteration) {
    return sub_seed(run_seed, "iteration-" + std::to_string(iteration));
}

BoostResult boost_run(const PreparedData& data, const BoostSchedule& schedule,
                      const nn::ModelConfig& base_config, std::uint64_t run_seed) {
    schedule.validate();
    BoostResult result;
    result.run_seed = run_seed;

    std::vector<KeyedWindow> test_all;
    test_all.reserve(data.test_gen1.size() + data.test_gen2.size());
    test_all.insert(test_all.end(), data.test_gen1.begin(), data.test_gen1.end());
    test_all.insert(test_all.end(), data.test_gen2.begin(), data.test_gen2.end());

    std::map<std::string, std::vector<std::size_t>> gen2_trucks;
    for (std::size_t i = 0; i < data.test_gen2.size(); ++i)
        gen2_trucks[data.test_gen2[i].key.chassis_id].push_back(i);

    const int n_iters = schedule.n_iterations();
    auto train_once = [&](int depth, std::uint64_t seed, const std::vector<Window>& pool,
                          IterationLog& log_entry) {
        nn::ModelConfig cfg = base_config;
        cfg.n_layers = depth;
        cfg.seed = seed;
        nn::LstmModel model = nn::init(cfg);
        const auto t0 = std::chrono::steady_clock::now();
        auto trace = nn::train(model, pool);
        log_entry.seconds = seconds_since(t0);
        log_entry.final_epoch_loss = trace.back();
        log_entry.depth = depth;
        log_entry.model_seed = seed;
        log_entry.pool_windows_before = pool.size();
        return model;
    };

    if (gen2_trucks.empty()) {
        log::warn("boost run ", run_seed,
                  ": no gen2 test trucks; degrading to one supervised train at the final depth");
        result.degenerate_no_gen2 = true;
        IterationLog entry;
        entry.iteration = n_iters;
        nn::LstmModel model = train_once(schedule.depths.back(),
                                         boost_iteration_seed(run_seed, n_iters),
                                         data.train_windows, entry);
        result.predictions = nn::predict(model, test_all);
        result.iteration_predictions.push_back(result.predictions);
        entry.pool_windows_after = data.train_windows.size();
        result.log.push_back(entry);
        result.model = std::move(model);
        return result;
    }

    const auto total_trucks = static_cast<double>(gen2_trucks.size());
    const auto per_iter = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(schedule.gen2_fraction_per_iter * total_trucks)));

    std::vector<Window> pool = data.train_windows;
    std::set<std::string> remaining;
    for (const auto& [chassis, idx] : gen2_trucks) remaining.insert(chassis);

    for (int k = 1; k <= n_iters; ++k) {
        IterationLog entry;
        entry.iteration = k;
        nn::LstmModel model =
            train_once(schedule.depths[static_cast<std::size_t>(k - 1)],
                       boost_iteration_seed(run_seed, k), pool, entry);
        PredictionSet preds = nn::predict(model, test_all);

        // Rank not-yet-injected gen2 trucks by mean top-class probability.
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& chassis : remaining) {
            double confidence = 0.0;
            int steps = 0;
            for (std::size_t idx : gen2_trucks.at(chassis)) {
                const auto& pred = preds.entries.at(data.test_gen2[idx].key);
                for (const auto& row : pred.probs) {
                    confidence += *std::max_element(row.begin(), row.end());
                    ++steps;
                }
            }
            ranked.emplace_back(steps > 0 ? confidence / steps : 0.0, chassis);
        }
        if (schedule.selection_mode == SelectionMode::ConfidenceRanked) {
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
        } else {
            Rng select_rng(sub_seed(boost_iteration_seed(run_seed, k), "select"));
            select_rng.shuffle(ranked);
        }

        const std::size_t take = std::min(per_iter, ranked.size());
        entry.pool_exhausted = take < per_iter;
        for (std::size_t i = 0; i < take; ++i) {
            const std::string& chassis = ranked[i].second;
            for (std::size_t idx : gen2_trucks.at(chassis)) {
                Window w = data.test_gen2[idx].window;
                w.labels = preds.entries.at(data.test_gen2[idx].key).labels;  // frozen
                pool.push_back(std::move(w));
            }
            remaining.erase(chassis);
            result.injected_chassis.push_back(chassis);
        }
        entry.injected_trucks = take;
        entry.pool_windows_after = pool.size();
        log::info("boost run ", run_seed, " iteration ", k, "/", n_iters, ": depth ", entry.depth,
                  ", loss ", entry.final_epoch_loss, ", injected ", take, " gen2 trucks, pool ",
                  entry.pool_windows_before, " -> ", entry.pool_windows_after);
        if (entry.pool_exhausted)
            log::warn("boost run ", run_seed, " iteration ", k, ": gen2 pool exhausted, injected ",
                      take, " of ", per_iter, " requested trucks");

        result.iteration_predictions.push_back(preds);
        result.log.push_back(entry);
        if (k == n_iters) {
            result.predictions = std::move(preds);
            result.model = std::move(model);
        }
    }
    return result;
}

PredictionSet ensemble(const std::vector<PredictionSet>& runs, const EnsembleConfig& config) {
    config.validate();
    if (runs.empty()) throw ContractError("ensemble needs at least one run");
    for (std::size_t i = 1; i < runs.size(); ++i)
        check_same_keys(runs.front(), runs[i], "ensemble");

    PredictionSet out;
    const double n = static_cast<double>(runs.size());
    for (const auto& [key, first] : runs.front().entries) {
        SequencePrediction pred;
        const std::size_t t_len = first.labels.size();
        pred.probs.assign(t_len, {0.0, 0.0, 0.0});
        pred.labels.resize(t_len);

        for (std::size_t t = 0; t < t_len; ++t) {
            std::array<int, 3> votes{};
            for (const auto& run : runs) {
                const auto& rp = run.entries.at(key);
                ++votes[static_cast<std::size_t>(to_index(rp.labels[t]))];
                if (rp.probs.size() == t_len) {
                    for (std::size_t c = 0; c < 3; ++c) pred.probs[t][c] += rp.probs[t][c] / n;
                } else {
                    pred.probs[t][static_cast<std::size_t>(to_index(rp.labels[t]))] += 1.0 / n;
                }
            }
            const int top = *std::max_element(votes.begin(), votes.end());
            std::vector<int> tied;
            for (int c = 0; c < 3; ++c)
                if (votes[static_cast<std::size_t>(c)] == top) tied.push_back(c);
            int winner = tied.back();  // higher risk on unresolved ties
            if (tied.size() > 1 && config.tie_break == TieBreak::MeanProbability) {
                for (int c : tied)
                    if (pred.probs[t][static_cast<std::size_t>(c)] >
                        pred.probs[t][static_cast<std::size_t>(winner)])
                        winner = c;
            }
            pred.labels[t] = risk_from_index(winner);
        }
        out.entries.emplace(key, std::move(pred));
    }
    return out;
}

std::string subdir(const std::string& out_dir, const std::string& name) {
    return (fs::path(out_dir) / name).string();
}

void ensure_run_dirs(const std::string& out_dir) {
    for (const char* name : {"data", "checkpoints", "preds", "reports"})
        fs::create_directories(fs::path(out_dir) / name);
}

PipelineResult full_pipeline(const PipelineConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    config.schedule.validate();
    config.ensemble.validate();
    ensure_run_dirs(config.out_dir);

    PipelineResult result;
    result.data = prepare(config.train_csv, config.test_csv, config.base_seed());
    const double prepare_seconds = seconds_since(t0);

    nn::ModelConfig model_cfg = config.model;
    model_cfg.input_size = result.data.n_features;
    model_cfg.validate();

    const int n_runs = config.ensemble.n_runs;
    result.runs.resize(static_cast<std::size_t>(n_runs));
    const int jobs = std::max(1, config.jobs);
    const auto t_runs = std::chrono::steady_clock::now();
    for (int wave = 0; wave < n_runs; wave += jobs) {
        std::vector<std::future<BoostResult>> futures;
        const int end = std::min(n_runs, wave + jobs);
        for (int i = wave; i < end; ++i)
            futures.push_back(std::async(std::launch::async, [&, i] {
                return boost_run(result.data, config.schedule, model_cfg,
                                 config.base_seed() + static_cast<std::uint64_t>(i));
            }));
        for (int i = wave; i < end; ++i)
            result.runs[static_cast<std::size_t>(i)] = futures[static_cast<std::size_t>(i - wave)].get();
    }
    const double runs_seconds = seconds_since(t_runs);

    const auto t_post = std::chrono::steady_clock::now();
    std::vector<PredictionSet> run_preds;
    run_preds.reserve(result.runs.size());
    for (const auto& r : result.runs) run_preds.push_back(r.predictions);

    PredictionSet ensembled = ensemble(run_preds, config.ensemble);
    postprocess::RepairReport repair_report;
    PredictionSet repaired =
        postprocess::consensus_repair(run_preds, ensembled, config.smooth_threshold, &repair_report);

    result.calibration_target = config.target_high_mean.value_or(result.data.failing_high_mean);
    Rng calibrate_rng(sub_seed(config.base_seed(), "calibrate"));
    postprocess::CalibrationReport calibration_report;
    result.predictions =
        postprocess::calibrate_high_counts(repaired, result.calibration_target,
                                           config.calibration_tolerance, calibrate_rng,
                                           &calibration_report);
    const double post_seconds = seconds_since(t_post);

    // Deterministic artifacts: per-run and final predictions plus reports.
    const std::string preds_dir = subdir(config.out_dir, "preds");
    const std::string ckpt_dir = subdir(config.out_dir, "checkpoints");
    std::vector<std::string> run_csvs, checkpoint_paths;
    for (int i = 0; i < n_runs; ++i) {
        const std::string run_csv = (fs::path(preds_dir) / ("run" + std::to_string(i) + ".csv")).string();
        csv::write_predictions_csv(run_preds[static_cast<std::size_t>(i)], run_csv);
        csv::write_probs_csv(run_preds[static_cast<std::size_t>(i)], csv::probs_sidecar_path(run_csv));
        run_csvs.push_back(run_csv);
        if (config.write_checkpoints) {
            const std::string ckpt =
                (fs::path(ckpt_dir) / ("run" + std::to_string(i) + "_final.bin")).string();
            nn::save_model(result.runs[static_cast<std::size_t>(i)].model, ckpt);
            checkpoint_paths.push_back(ckpt);
        }
    }
    const std::string ensemble_csv = (fs::path(preds_dir) / "ensemble.csv").string();
    csv::write_predictions_csv(ensembled, ensemble_csv);
    csv::write_probs_csv(ensembled, csv::probs_sidecar_path(ensemble_csv));
    result.predictions_csv = (fs::path(preds_dir) / "predictions.csv").string();
    csv::write_predictions_csv(result.predictions, result.predictions_csv);
    csv::write_probs_csv(result.predictions, csv::probs_sidecar_path(result.predictions_csv));

    json summary;
    summary["base_seed"] = config.base_seed();
    summary["runs"] = json::array();
    for (const auto& r : result.runs) {
        json run;
        run["run_seed"] = r.run_seed;
        run["degenerate_no_gen2"] = r.degenerate_no_gen2;
        run["injected_chassis"] = r.injected_chassis;
        run["iterations"] = json::array();
        for (const auto& entry : r.log) run["iterations"].push_back(iteration_log_json(entry, false));
        summary["runs"].push_back(run);
    }
    summary["schedule"] = {{"depths", config.schedule.depths},
                           {"gen2_fraction_per_iter", config.schedule.gen2_fraction_per_iter},
                           {"selection_mode", to_string(config.schedule.selection_mode)}};
    summary["ensemble"] = {{"n_runs", n_runs}, {"tie_break", to_string(config.ensemble.tie_break)}};
    summary["calibration"] = {{"target", result.calibration_target},
                              {"tolerance", config.calibration_tolerance},
                              {"mean_before", calibration_report.mean_before},
                              {"mean_after", calibration_report.mean_after},
                              {"moves", calibration_report.moves},
                              {"failing_sequences", calibration_report.failing_sequences},
                              {"hit_tolerance", calibration_report.hit_tolerance},
                              {"histogram_before", calibration_report.histogram_before},
                              {"histogram_after", calibration_report.histogram_after}};
    summary["repair"] = {{"monotonic_changed", repair_report.monotonic_changed},
                         {"smooth_changed", repair_report.smooth_changed},
                         {"vote_ties", repair_report.vote_ties}};
    summary["preprocess"] = {{"train_windows", result.data.train_windows.size()},
                             {"test_gen1_windows", result.data.test_gen1.size()},
                             {"test_gen2_windows", result.data.test_gen2.size()},
                             {"kept_columns", result.data.clean_report.kept_columns.size()},
                             {"dropped_columns", result.data.clean_report.dropped_columns},
                             {"dropped_rows", result.data.clean_report.dropped_rows},
                             {"healthy_series", result.data.extract_report.healthy_series},
                             {"failing_series", result.data.extract_report.failing_series},
                             {"discarded_medium", result.data.extract_report.discarded_medium},
                             {"removed_short", result.data.extract_report.removed_short},
                             {"skipped_no_anchor", result.data.extract_report.skipped_no_anchor},
                             {"failing_high_mean", result.data.failing_high_mean}};
    {
        std::ofstream out(subdir(config.out_dir, "reports") + "/run_summary.json");
        if (!out) throw IoError("cannot write run summary");
        out << summary.dump(2) << "\n";
    }

    result.seconds_total = seconds_since(t0);

    json manifest = summary;  // manifest = summary + timing + paths
    manifest["train_csv"] = config.train_csv;
    manifest["test_csv"] = config.test_csv;
    manifest["out_dir"] = config.out_dir;
    manifest["model"] = {{"hidden_size", model_cfg.hidden_size},
                         {"input_size", model_cfg.input_size},
                         {"dropout_rate", model_cfg.dropout_rate},
                         {"l2_lambda", model_cfg.l2_lambda},
                         {"learning_rate", model_cfg.learning_rate},
                         {"batch_size", model_cfg.batch_size},
                         {"epochs", model_cfg.epochs},
                         {"clip_gradients", model_cfg.clip_gradients}};
    manifest["jobs"] = jobs;
    manifest["smooth_threshold"] = config.smooth_threshold;
    manifest["run_prediction_csvs"] = run_csvs;
    manifest["checkpoints"] = checkpoint_paths;
    manifest["predictions_csv"] = result.predictions_csv;
    manifest["timing_seconds"] = {{"prepare", prepare_seconds},
                                  {"boost_runs", runs_seconds},
                                  {"postprocess", post_seconds},
                                  {"total", result.seconds_total}};
    json run_timing = json::array();
    for (const auto& r : result.runs) {
        json iters = json::array();
        for (const auto& entry : r.log) iters.push_back(iteration_log_json(entry, true));
        run_timing.push_back(iters);
    }
    manifest["run_iteration_timing"] = run_timing;
    result.manifest_path = subdir(config.out_dir, "manifest.json");
    {
        std::ofstream out(result.manifest_path);
        if (!out) throw IoError("cannot write manifest");
        out << manifest.dump(2) << "\n";
    }

    log::info("pipeline: finished in ", result.seconds_total, " s (runs ", runs_seconds, " s)");
    return result;
}

void save_windows(const std::vector<Window>& windows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write("PDMWINS1", 8);
    const std::uint8_t keyed = 0;
    wr(out, &keyed, 1);
    wr_u64(out, windows.size());
    wr_u64(out, windows.empty() ? 0 : windows.front().feature_count());
    for (const auto& w : windows) write_window_body(out, w);
    out.flush();
    if (!out) throw IoError("write to " + path + " failed");
}

std::vector<Window> load_windows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    char magic[8];
    rd(in, magic, 8);
    if (std::memcmp(magic, "PDMWINS1", 8) != 0) throw SchemaError(path + ": not a window store");
    std::uint8_t keyed;
    rd(in, &keyed, 1);
    if (keyed != 0) throw SchemaError(path + ": keyed store where a plain one was expected");
    const auto count = rd_u64(in);
    const auto f = rd_u64(in);
    std::vector<Window> windows;
    windows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) windows.push_back(read_window_body(in, f));
    return windows;
}

void save_keyed_windows(const std::vector<KeyedWindow>& windows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write("PDMWINS1", 8);
    const std::uint8_t keyed = 1;
    wr(out, &keyed, 1);
    wr_u64(out, windows.size());
    wr_u64(out, windows.empty() ? 0 : windows.front().window.feature_count());
    for (const auto& kw : windows) {
        wr_str(out, kw.key.chassis_id);
        const std::uint8_t key_gen = kw.key.gen == Generation::Gen2 ? 1 : 0;
        wr(out, &key_gen, 1);
        wr_u64(out, static_cast<std::uint64_t>(kw.key.seq_idx));
        write_window_body(out, kw.window);
    }
    out.flush();
    if (!out) throw IoError("write to " + path + " failed");
}

std::vector<KeyedWindow> load_keyed_windows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    char magic[8];
    rd(in, magic, 8);
    if (std::memcmp(magic, "PDMWINS1", 8) != 0) throw SchemaError(path + ": not a window store");
    std::uint8_t keyed;
    rd(in, &keyed, 1);
    if (keyed != 1) throw SchemaError(path + ": plain store where a keyed one was expected");
    const auto count = rd_u64(in);
    const auto f = rd_u64(in);
    std::vector<KeyedWindow> windows;
    windows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        KeyedWindow kw;
        kw.key.chassis_id = rd_str(in);
        std::uint8_t key_gen;
        rd(in, &key_gen, 1);
        kw.key.gen = key_gen ? Generation::Gen2 : Generation::Gen1;
        kw.key.seq_idx = static_cast<int>(rd_u64(in));
        kw.window = read_window_body(in, f);
        windows.push_back(std::move(kw));
    }
    return windows;
}

void save_prepared(const PreparedData& data, const std::string& dir) {
    fs::create_directories(dir);
    save_windows(data.train_windows, (fs::path(dir) / "train_windows.bin").string());
    save_keyed_windows(data.test_gen1, (fs::path(dir) / "test_gen1.bin").string());
    save_keyed_windows(data.test_gen2, (fs::path(dir) / "test_gen2.bin").string());

    json j;
    j["n_features"] = data.n_features;
    j["failing_high_mean"] = data.failing_high_mean;
    j["clean"] = {{"kept_columns", data.clean_report.kept_columns},
                  {"dropped_columns", data.clean_report.dropped_columns},
                  {"dropped_rows", data.clean_report.dropped_rows}};
    j["extract"] = {{"healthy_series", data.extract_report.healthy_series},
                    {"failing_series", data.extract_report.failing_series},
                    {"discarded_medium", data.extract_report.discarded_medium},
                    {"removed_short", data.extract_report.removed_short},
                    {"skipped_no_anchor", data.extract_report.skipped_no_anchor}};
    j["train_stats"] = norm_stats_json(data.train_stats);
    if (!data.test_gen1.empty()) j["gen1_stats"] = norm_stats_json(data.gen1_stats);
    if (!data.test_gen2.empty()) j["gen2_stats"] = norm_stats_json(data.gen2_stats);
    std::ofstream out((fs::path(dir) / "prepared.json").string());
    if (!out) throw IoError("cannot write prepared.json");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write to prepared.json failed");
}

PreparedData load_prepared(const std::string& dir) {
    PreparedData data;
    data.train_windows = load_windows((fs::path(dir) / "train_windows.bin").string());
    data.test_gen1 = load_keyed_windows((fs::path(dir) / "test_gen1.bin").string());
    data.test_gen2 = load_keyed_windows((fs::path(dir) / "test_gen2.bin").string());

    std::ifstream in((fs::path(dir) / "prepared.json").string());
    if (!in) throw IoError("cannot open " + dir + "/prepared.json");
    json j = json::parse(in, nullptr, true);
    data.n_features = j.at("n_features").get<int>();
    data.failing_high_mean = j.at("failing_high_mean").get<double>();
    data.clean_report.kept_columns = j.at("clean").at("kept_columns").get<std::vector<int>>();
    data.clean_report.dropped_columns = j.at("clean").at("dropped_columns").get<int>();
    data.clean_report.dropped_rows = j.at("clean").at("dropped_rows").get<int>();
    data.extract_report.healthy_series = j.at("extract").at("healthy_series").get<int>();
    data.extract_report.failing_series = j.at("extract").at("failing_series").get<int>();
    data.extract_report.discarded_medium = j.at("extract").at("discarded_medium").get<int>();
    data.extract_report.removed_short = j.at("extract").at("removed_short").get<int>();
    data.extract_report.skipped_no_anchor = j.at("extract").at("skipped_no_anchor").get<int>();
    data.train_stats = norm_stats_from_json(j.at("train_stats"));
    if (j.contains("gen1_stats")) data.gen1_stats = norm_stats_from_json(j.at("gen1_stats"));
    if (j.contains("gen2_stats")) data.gen2_stats = norm_stats_from_json(j.at("gen2_stats"));
    return data;
}

}  // namespace pdm::pipeline
