#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdm/eval.hpp"
#include "pdm/nn.hpp"
#include "pdm/predictions.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/types.hpp"

namespace pdm::pipeline {

enum class SelectionMode { ConfidenceRanked, Random };
enum class TieBreak { MeanProbability, HigherRisk };

SelectionMode parse_selection_mode(const std::string& s);
TieBreak parse_tie_break(const std::string& s);

struct BoostSchedule {
    std::vector<int> depths{2, 4, 6, 8, 10};
    double gen2_fraction_per_iter = 0.10;
    SelectionMode selection_mode = SelectionMode::ConfidenceRanked;

    int n_iterations() const { return static_cast<int>(depths.size()); }
    void validate() const;  // throws ConfigError
};

struct EnsembleConfig {
    int n_runs = 5;
    std::uint64_t base_seed = 7;
    TieBreak tie_break = TieBreak::MeanProbability;

    void validate() const;
};

// Everything the training stages consume, produced once per pipeline run.
// Test windows carry their (chassis, gen, seq) keys; train windows are the
// oversampled 10-step extracts, each scope normalized by its own stats.
struct PreparedData {
    std::vector<Window> train_windows;
    std::vector<KeyedWindow> test_gen1;
    std::vector<KeyedWindow> test_gen2;
    preprocess::CleanReport clean_report;
    preprocess::ExtractReport extract_report;
    preprocess::NormStats train_stats, gen1_stats, gen2_stats;
    // Mean High count over the anchored failing training windows; estimates
    // the test-set mean (same cut rule) and drives the calibration target
    // when no explicit target is configured.
    double failing_high_mean = 0.0;
    int n_features = 0;
};

PreparedData prepare(const std::string& train_csv, const std::string& test_csv,
                     std::uint64_t seed);

struct IterationLog {
    int iteration = 0;  // 1-based
    int depth = 0;
    std::uint64_t model_seed = 0;
    std::size_t pool_windows_before = 0;
    std::size_t injected_trucks = 0;
    std::size_t pool_windows_after = 0;
    double final_epoch_loss = 0.0;
    double seconds = 0.0;
    bool pool_exhausted = false;
};

struct BoostResult {
    nn::LstmModel model;  // last iteration's model
    PredictionSet predictions;  // last iteration, full test set
    std::vector<PredictionSet> iteration_predictions;  // one per iteration
    std::vector<IterationLog> log;
    std::vector<std::string> injected_chassis;  // in injection order
    bool degenerate_no_gen2 = false;
    std::uint64_t run_seed = 0;
};

// Seed for the fresh model trained at iteration `iteration` (1-based) of the
// run with seed `run_seed`. The degenerate no-gen2 path trains once at the
// final depth with the final iteration's seed.
std::uint64_t boost_iteration_seed(std::uint64_t run_seed, int iteration);

// One semi-supervised run: per iteration, train a fresh model of the
// scheduled depth on the current pool, predict the whole test set, then
// inject gen2_fraction_per_iter of all gen2 trucks (not yet injected,
// confidence-ranked by default) with frozen pseudo labels.
BoostResult boost_run(const PreparedData& data, const BoostSchedule& schedule,
                      const nn::ModelConfig& base_config, std::uint64_t run_seed);

// Per-timestep plurality vote across runs; ties resolve among the tied
// classes only (mean probability or higher risk); output probabilities are
// the mean across runs. All runs must cover identical keys.
PredictionSet ensemble(const std::vector<PredictionSet>& runs, const EnsembleConfig& config);

struct PipelineConfig {
    std::string train_csv;
    std::string test_csv;
    std::string out_dir;
    nn::ModelConfig model;  // input_size filled from the prepared data
    BoostSchedule schedule;
    EnsembleConfig ensemble;
    int jobs = 1;
    int smooth_threshold = 2;
    double calibration_tolerance = 0.25;
    // Absent: calibrate toward the failing training windows' mean High count.
    std::optional<double> target_high_mean;
    bool write_checkpoints = true;

    std::uint64_t base_seed() const { return ensemble.base_seed; }
};

struct PipelineResult {
    PredictionSet predictions;  // ensembled, repaired, calibrated
    std::vector<BoostResult> runs;
    PreparedData data;
    double calibration_target = 0.0;
    std::string predictions_csv;
    std::string manifest_path;
    double seconds_total = 0.0;
};

// prepare -> n_runs boost runs (seeds base_seed + run index, optionally in
// parallel) -> ensemble -> consensus repair -> High-count calibration ->
// predictions CSV + probability sidecar + manifest. Byte-identical outputs
// for identical inputs and seed.
PipelineResult full_pipeline(const PipelineConfig& config);

// Run directory layout helpers: <out>/data, checkpoints, preds, reports.
std::string subdir(const std::string& out_dir, const std::string& name);
void ensure_run_dirs(const std::string& out_dir);

// Binary window store, so the preprocess, train, and boost subcommands can
// exchange exact (bit-identical) windows instead of re-deriving them.
void save_windows(const std::vector<Window>& windows, const std::string& path);
std::vector<Window> load_windows(const std::string& path);
void save_keyed_windows(const std::vector<KeyedWindow>& windows, const std::string& path);
std::vector<KeyedWindow> load_keyed_windows(const std::string& path);

// Serializes everything prepare() produced into <dir>: the three window
// stores plus prepared.json (stats, column map, reports, calibration basis).
void save_prepared(const PreparedData& data, const std::string& dir);
PreparedData load_prepared(const std::string& dir);

std::string to_string(SelectionMode mode);
std::string to_string(TieBreak tie_break);

}  // namespace pdm::pipeline
