#pragma once

#include <string>
#include <vector>

#include "pdm/rng.hpp"
#include "pdm/types.hpp"

namespace pdm::preprocess {

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population std, >= 0
    std::string scope;           // train_gen1 | test_gen1 | test_gen2

    std::size_t feature_count() const { return mean.size(); }
};

struct CleanReport {
    std::vector<int> kept_columns;  // original feature index per surviving column
    int dropped_columns = 0;
    int dropped_rows = 0;
};

// Drops feature columns that are missing in every row across the whole
// dataset, then drops rows that still contain a missing (or non-finite) cell.
// Column survival is decided once and applied to every series.
std::vector<TruckSeries> clean(const std::vector<TruckSeries>& series, CleanReport& report);

// Applies a previously recorded column map, then the row rule. Used so test
// data follows the training column map instead of its own.
std::vector<TruckSeries> clean_with_columns(const std::vector<TruckSeries>& series,
                                            const std::vector<int>& kept_columns,
                                            CleanReport& report);

struct ExtractReport {
    int healthy_series = 0;
    int failing_series = 0;
    int discarded_medium = 0;
    int removed_short = 0;
    int skipped_no_anchor = 0;
};

// Series shorter than 10 are removed. Remaining series classify by final
// label: Low-ending yield 2 windows at uniform random starts, High-ending
// yield 4 windows anchored at uniform random High indices a >= 9 (window
// [a-9, a]), Medium-ending are discarded.
std::vector<Window> extract_training_windows(const std::vector<TruckSeries>& series, Rng& rng,
                                             ExtractReport& report);

// Per-feature mean and population standard deviation; needs >= 2 rows.
NormStats fit_norm(const std::vector<std::vector<double>>& rows, const std::string& scope);

// (x - mean) / max(std, 1e-8) per cell; labels untouched.
Window apply_norm(const Window& window, const NormStats& stats);
std::vector<Window> apply_norm(const std::vector<Window>& windows, const NormStats& stats);

// Rows of every window stacked, for fitting scope stats.
std::vector<std::vector<double>> stack_rows(const std::vector<Window>& windows);

void save_norm_stats(const NormStats& stats, const CleanReport& clean_report,
                     const std::string& path);
NormStats load_norm_stats(const std::string& path, CleanReport& clean_report);

}  // namespace pdm::preprocess
