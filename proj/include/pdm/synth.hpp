#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdm/predictions.hpp"
#include "pdm/rng.hpp"
#include "pdm/types.hpp"

namespace pdm::synth {

struct SynthConfig {
    int n_train_trucks = 600;
    int n_test_trucks_gen1 = 120;
    int n_test_trucks_gen2 = 120;
    int n_features = 16;
    double failure_fraction = 0.5;
    int series_len_min = 12;
    int series_len_max = 60;
    int high_window = 5;     // W_H
    int medium_window = 10;  // W_M
    double gen2_shift_scale = 0.3;
    double noise_std = 0.1;
    std::uint64_t seed = 7;
    // Fraction of training cells emitted as empty, for exercising the
    // cleaning stage. Applies to the training file only: empty test cells
    // would break the fixed 10-row window blocks.
    double missing_fraction = 0.0;

    void validate() const;  // throws ConfigError
};

// Per-feature affine map applied to every gen2 reading.
struct GenShift {
    std::vector<double> scale;
    std::vector<double> offset;
};

// Dataset-level draws, a pure function of the config seed: which features
// carry the degradation signal, their amplitude multipliers, and the gen2
// shift. Tests re-derive these to check the generated data against them.
struct SignalPlan {
    std::vector<int> informative;      // ceil(n_features/4) indices
    std::vector<double> feature_gain;  // length n_features
    GenShift gen2;
};

SignalPlan make_signal_plan(const SynthConfig& config);

// One truck, all randomness from sub_seed(config.seed, chassis_id). Failing
// trucks carry a linear ramp on the informative features that starts at a
// random onset and peaks at the final readout; labels follow remaining life
// r = last - t (High r < W_H, Medium r < W_M, else Low). Healthy trucks are
// stationary noise, all Low. Gen2 trucks get the plan's affine shift.
TruckSeries generate_truck(const SynthConfig& config, const SignalPlan& plan, Generation gen,
                           bool failing, const std::string& chassis_id);

struct TestWindows {
    std::vector<KeyedWindow> windows;  // unlabeled, keys in emission order
    PredictionSet truth;               // hidden labels, predictions schema
    int skipped = 0;                   // failing series with no anchor >= 9
};

// Healthy series (no High label): one window at a uniform valid start.
// Failing series: anchor uniform over High indices >= 9, window [a-9, a];
// series with no such anchor are skipped with a warning.
TestWindows build_test_windows(const std::vector<TruckSeries>& series, Rng& rng);

struct DatasetSummary {
    int n_train_series = 0;
    int n_test_windows_gen1 = 0;
    int n_test_windows_gen2 = 0;
    int n_features = 0;
    int skipped_test_trucks = 0;
    std::uint64_t seed = 0;
};

// Writes train_gen1.csv, public_X_test.csv, ground_truth.csv, variants.csv.
// Identical config ⇒ byte-identical files.
DatasetSummary generate_dataset(const SynthConfig& config, const std::string& out_dir);

}  // namespace pdm::synth
