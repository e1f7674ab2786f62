#pragma once

#include <string>
#include <vector>

#include "pdm/predictions.hpp"
#include "pdm/types.hpp"

namespace pdm::csv {

// Shortest decimal text that parses back to the same double. NaN (the
// missing-value marker) renders as an empty cell.
std::string format_double(double v);

// Inverse of format_double; empty or whitespace-only returns NaN.
// Throws ParseError on anything else that is not a valid real.
double parse_double_cell(const std::string& cell, std::size_t row_no);

// Train schema: Timesteps,ChassisId_encoded,gen,risk_level,<features...>.
// Rows come back grouped by chassis (first-appearance order) and sorted by
// timestep within each series. Missing feature cells surface as NaN.
std::vector<TruckSeries> read_train_csv(const std::string& path);
void write_train_csv(const std::vector<TruckSeries>& series, const std::string& path,
                     const std::vector<std::string>& feature_names = {});

// Test schema: train schema minus risk_level; every chassis contributes a
// multiple of 10 rows and each consecutive 10-row block is one window.
std::vector<Window> read_test_csv(const std::string& path);
void write_test_csv(const std::vector<Window>& windows, const std::string& path,
                    const std::vector<std::string>& feature_names = {});

// Variants schema: ChassisId_encoded plus exactly 12 spec columns.
std::vector<VariantRecord> read_variants_csv(const std::string& path);
void write_variants_csv(const std::vector<VariantRecord>& records, const std::string& path,
                        const std::vector<std::string>& spec_names = {});

// Predictions schema: ChassisId_encoded,gen,seq_idx,step,pred_risk with rows
// ordered by (chassis, seq_idx, step). `label_column` lets the ground-truth
// variant of the file rename pred_risk to true_risk.
void write_predictions_csv(const PredictionSet& preds, const std::string& path,
                           const std::string& label_column = "pred_risk");
PredictionSet read_predictions_csv(const std::string& path,
                                   const std::string& label_column = "pred_risk");

// Probability sidecar: same keys plus p_low,p_medium,p_high columns. Written
// next to hard-label predictions so downstream voting can break ties on mean
// probability across runs.
void write_probs_csv(const PredictionSet& preds, const std::string& path);
PredictionSet read_probs_csv(const std::string& path);

// "<path>.probs.csv"
std::string probs_sidecar_path(const std::string& path);

}  // namespace pdm::csv
