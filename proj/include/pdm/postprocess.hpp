#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pdm/predictions.hpp"
#include "pdm/rng.hpp"
#include "pdm/types.hpp"

namespace pdm::postprocess {

// Forward cumulative max: out[i] = max(out[i-1], in[i]). Never lowers a
// label; output is non-decreasing.
std::vector<RiskLevel> monotonic_repair(const std::vector<RiskLevel>& labels);

// On a non-decreasing sequence that contains at least one High: if the
// leading run of Low has length <= threshold and is followed by a strictly
// higher class, promote that run to the following class. Idempotent: the
// output either has no leading Low run or is the unchanged input.
std::vector<RiskLevel> leading_run_smooth(const std::vector<RiskLevel>& labels, int threshold = 2);

std::vector<RiskLevel> repair_chain(const std::vector<RiskLevel>& labels, int smooth_threshold = 2);

struct CalibrationReport {
    double mean_before = 0.0;
    double mean_after = 0.0;
    int moves = 0;
    int failing_sequences = 0;
    bool hit_tolerance = false;   // false means the walk ran out of moves
    std::array<int, 11> histogram_before{};  // High counts 0..10
    std::array<int, 11> histogram_after{};
};

// Random walk on Medium/High boundaries of failing sequences (>= 1 High)
// until their mean High count is within tolerance of target_mean. Each move
// flips one boundary label on a uniformly random sequence that can still
// move in the corrective direction; High counts stay inside [1, 9]. Low
// labels and non-failing sequences are untouched.
PredictionSet calibrate_high_counts(const PredictionSet& preds, double target_mean,
                                    double tolerance, Rng& rng, CalibrationReport* report = nullptr);

struct RepairReport {
    int monotonic_changed = 0;
    int smooth_changed = 0;
    int vote_ties = 0;
};

// Applies repair_chain to every sequence of a single prediction set.
PredictionSet repair_all(const PredictionSet& preds, int smooth_threshold = 2,
                         RepairReport* report = nullptr);

// Repairs each run's labels, majority-votes per timestep (ties fall back to
// the ensemble's mean probability, then to the higher risk), and re-repairs
// the voted sequence, which voting can make non-monotone.
PredictionSet consensus_repair(const std::vector<PredictionSet>& runs,
                               const PredictionSet& ensembled, int smooth_threshold = 2,
                               RepairReport* report = nullptr);

}  // namespace pdm::postprocess
