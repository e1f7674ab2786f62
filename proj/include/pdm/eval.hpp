#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdm/predictions.hpp"
#include "pdm/types.hpp"

namespace pdm::eval {

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct F1Result {
    std::array<ClassScores, 3> per_class;
    double macro_f1 = 0.0;
    std::array<std::array<std::int64_t, 3>, 3> confusion{};  // [true][pred]
    std::int64_t n = 0;
};

// Per-class F1 with the 0/0 := 0 convention; macro = unweighted mean over
// the three classes, absent classes included as 0.
F1Result macro_f1(const std::vector<RiskLevel>& truth, const std::vector<RiskLevel>& pred);

struct GenerationReport {
    F1Result scores;
    std::int64_t timesteps = 0;
    bool scored = false;  // false when the generation had zero timesteps
};

struct EvalReport {
    GenerationReport gen1;
    GenerationReport gen2;
    double final_score = 0.0;
    bool partial = false;  // one generation missing from the pool
    std::optional<double> dev_fraction;
    std::uint64_t dev_seed = 0;
};

// Pools timesteps per generation, scores each with macro_f1, and averages
// the per-generation macro-F1 values. With dev_fraction set, scores a seeded
// truck-level subset of that fraction.
EvalReport score(const PredictionSet& preds, const PredictionSet& truth,
                 std::optional<double> dev_fraction = std::nullopt, std::uint64_t dev_seed = 0);

std::string render_table(const EvalReport& report);
std::string to_json(const EvalReport& report);

}  // namespace pdm::eval
