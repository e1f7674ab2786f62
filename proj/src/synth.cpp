#include "pdm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "pdm/csv.hpp"
#include "pdm/error.hpp"
#include "pdm/log.hpp"

namespace pdm::synth {

namespace {

// Ramp geometry. The onset is random but hugs the Medium boundary W_M (span
// in [W_M, W_M+2]), so nearly every Medium readout carries signal while at
// most two Low readouts see the faint ramp foot. Amplitude and per-feature
// gain jitter keep trucks individual without drowning the slope cue the
// model needs to place the Medium/High boundary.
constexpr int kRampSpanSlack = 2;
constexpr double kRampAmplitude = 3.0;
constexpr double kAmplitudeJitter = 0.05;
constexpr double kGainLo = 0.9;
constexpr double kGainHi = 1.1;

RiskLevel label_for_remaining(int r, const SynthConfig& config) {
    if (r < config.high_window) return RiskLevel::High;
    if (r < config.medium_window) return RiskLevel::Medium;
    return RiskLevel::Low;
}

bool truck_fails(const SynthConfig& config, const std::string& chassis_id) {
    Rng rng(sub_seed(config.seed, std::string(chassis_id) + "#fail"));
    return rng.bernoulli(config.failure_fraction);
}

void inject_missing(const SynthConfig& config, TruckSeries& series) {
    Rng rng(sub_seed(config.seed, series.chassis_id + "#miss"));
    for (auto& r : series.readouts)
        for (auto& v : r.features)
            if (rng.bernoulli(config.missing_fraction)) v = std::nan("");
}

}  // namespace

void SynthConfig::validate() const {
    if (n_train_trucks <= 0 || n_test_trucks_gen1 <= 0 || n_test_trucks_gen2 <= 0)
        throw ConfigError("truck counts must be positive");
    if (n_features <= 0 || n_features > 304)
        throw ConfigError("n_features must be in 1..304");
    if (!(failure_fraction > 0.0 && failure_fraction < 1.0))
        throw ConfigError("failure_fraction must lie in (0,1)");
    if (series_len_min < 10 || series_len_max < series_len_min)
        throw ConfigError("series length range must satisfy 10 <= min <= max");
    if (high_window <= 0 || medium_window <= high_window)
        throw ConfigError("windows must satisfy 0 < W_H < W_M");
    if (gen2_shift_scale < 0.0) throw ConfigError("gen2_shift_scale must be >= 0");
    if (noise_std <= 0.0) throw ConfigError("noise_std must be > 0");
    if (missing_fraction < 0.0 || missing_fraction >= 1.0)
        throw ConfigError("missing_fraction must lie in [0,1)");
}

SignalPlan make_signal_plan(const SynthConfig& config) {
    config.validate();
    Rng rng(sub_seed(config.seed, "plan"));
    SignalPlan plan;

    std::vector<int> order(static_cast<std::size_t>(config.n_features));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const auto n_informative = static_cast<std::size_t>((config.n_features + 3) / 4);
    plan.informative.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_informative));
    std::sort(plan.informative.begin(), plan.informative.end());

    plan.feature_gain.reserve(static_cast<std::size_t>(config.n_features));
    for (int f = 0; f < config.n_features; ++f)
        plan.feature_gain.push_back(rng.uniform(kGainLo, kGainHi));

    const double s = config.gen2_shift_scale;
    for (int f = 0; f < config.n_features; ++f) {
        plan.gen2.scale.push_back(rng.uniform(1.0 - s / 10.0, 1.0 + s / 10.0));
        plan.gen2.offset.push_back(rng.uniform(-s, s));
    }
    return plan;
}

TruckSeries generate_truck(const SynthConfig& config, const SignalPlan& plan, Generation gen,
                           bool failing, const std::string& chassis_id) {
    Rng rng(sub_seed(config.seed, chassis_id));
    const int len = static_cast<int>(rng.uniform_int(config.series_len_min, config.series_len_max));

    int ramp_span = 0;
    double amplitude = 0.0;
    if (failing) {
        // Short series clamp the span to len-1 so the onset stays in range.
        const int span_hi = std::min(config.medium_window + kRampSpanSlack, len - 1);
        const int span_lo = std::min(config.medium_window, span_hi);
        ramp_span = static_cast<int>(rng.uniform_int(span_lo, span_hi));
        amplitude = kRampAmplitude * rng.uniform(1.0 - kAmplitudeJitter, 1.0 + kAmplitudeJitter);
    }

    std::vector<bool> informative(static_cast<std::size_t>(config.n_features), false);
    for (int f : plan.informative) informative[static_cast<std::size_t>(f)] = true;

    TruckSeries series{chassis_id, gen, {}};
    series.readouts.reserve(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
        const int r = len - 1 - t;  // remaining life
        Readout ro;
        ro.timestep = t;
        ro.risk = failing ? label_for_remaining(r, config) : RiskLevel::Low;
        ro.features.reserve(static_cast<std::size_t>(config.n_features));
        for (int f = 0; f < config.n_features; ++f) {
            double x = rng.normal(0.0, config.noise_std);
            if (failing && informative[static_cast<std::size_t>(f)] && r <= ramp_span)
                x += plan.feature_gain[static_cast<std::size_t>(f)] * amplitude *
                     (static_cast<double>(ramp_span - r) / ramp_span);
            if (gen == Generation::Gen2)
                x = plan.gen2.scale[static_cast<std::size_t>(f)] * x +
                    plan.gen2.offset[static_cast<std::size_t>(f)];
            ro.features.push_back(x);
        }
        series.readouts.push_back(std::move(ro));
    }
    return series;
}

TestWindows build_test_windows(const std::vector<TruckSeries>& series, Rng& rng) {
    TestWindows out;
    std::map<std::string, int> next_seq;
    for (const auto& s : series) {
        if (s.length() < kWindowLen)
            throw ContractError("chassis " + s.chassis_id + " is shorter than one window");
        bool failing = false;
        for (const auto& r : s.readouts) {
            if (!r.risk) throw ContractError("chassis " + s.chassis_id + " lacks labels");
            if (*r.risk == RiskLevel::High) failing = true;
        }

        std::size_t anchor = 0;
        if (failing) {
            std::vector<std::size_t> anchors;
            for (std::size_t i = kWindowLen - 1; i < s.length(); ++i)
                if (*s.readouts[i].risk == RiskLevel::High) anchors.push_back(i);
            if (anchors.empty()) {
                ++out.skipped;
                log::warn("test windows: failing chassis ", s.chassis_id,
                          " has no High readout at index >= 9, skipped");
                continue;
            }
            anchor = anchors[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(anchors.size()) - 1))];
        } else {
            anchor = static_cast<std::size_t>(rng.uniform_int(
                         0, static_cast<std::int64_t>(s.length() - kWindowLen))) +
                     (kWindowLen - 1);
        }

        const std::size_t start = anchor - (kWindowLen - 1);
        Window w;
        w.chassis_id = s.chassis_id;
        w.gen = s.gen;
        SequencePrediction truth;
        for (std::size_t i = start; i <= anchor; ++i) {
            w.features.push_back(s.readouts[i].features);
            truth.labels.push_back(*s.readouts[i].risk);
        }
        WindowKey key{s.chassis_id, s.gen, next_seq[s.chassis_id]++};
        out.truth.entries.emplace(key, std::move(truth));
        out.windows.push_back(KeyedWindow{std::move(key), std::move(w)});
    }
    return out;
}

DatasetSummary generate_dataset(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    const SignalPlan plan = make_signal_plan(config);
    std::filesystem::create_directories(out_dir);

    auto pad = [](int i) {
        std::string s = std::to_string(i);
        return std::string(4 - std::min<std::size_t>(4, s.size()), '0') + s;
    };

    std::vector<TruckSeries> train;
    train.reserve(static_cast<std::size_t>(config.n_train_trucks));
    for (int i = 0; i < config.n_train_trucks; ++i) {
        const std::string id = "tr_" + pad(i);
        train.push_back(
            generate_truck(config, plan, Generation::Gen1, truck_fails(config, id), id));
        if (config.missing_fraction > 0.0) inject_missing(config, train.back());
    }

    std::vector<TruckSeries> test_series;
    test_series.reserve(
        static_cast<std::size_t>(config.n_test_trucks_gen1 + config.n_test_trucks_gen2));
    for (int i = 0; i < config.n_test_trucks_gen1; ++i) {
        const std::string id = "g1_" + pad(i);
        test_series.push_back(
            generate_truck(config, plan, Generation::Gen1, truck_fails(config, id), id));
    }
    for (int i = 0; i < config.n_test_trucks_gen2; ++i) {
        const std::string id = "g2_" + pad(i);
        test_series.push_back(
            generate_truck(config, plan, Generation::Gen2, truck_fails(config, id), id));
    }

    Rng window_rng(sub_seed(config.seed, "testwin"));
    TestWindows tw = build_test_windows(test_series, window_rng);

    const auto dir = std::filesystem::path(out_dir);
    csv::write_train_csv(train, (dir / "train_gen1.csv").string());
    std::vector<Window> plain;
    plain.reserve(tw.windows.size());
    for (const auto& kw : tw.windows) plain.push_back(kw.window);
    csv::write_test_csv(plain, (dir / "public_X_test.csv").string());
    csv::write_predictions_csv(tw.truth, (dir / "ground_truth.csv").string(), "true_risk");

    std::vector<VariantRecord> variants;
    auto add_variant = [&](const std::string& id) {
        Rng vr(sub_seed(config.seed, id + "#spec"));
        VariantRecord rec{id, {}};
        for (std::size_t k = 0; k < kVariantSpecCount; ++k)
            rec.specs.push_back(std::to_string(vr.uniform_int(0, 5)));
        variants.push_back(std::move(rec));
    };
    for (const auto& s : train) add_variant(s.chassis_id);
    for (const auto& s : test_series) add_variant(s.chassis_id);
    csv::write_variants_csv(variants, (dir / "variants.csv").string());

    DatasetSummary summary;
    summary.n_train_series = config.n_train_trucks;
    for (const auto& kw : tw.windows)
        (kw.key.gen == Generation::Gen1 ? summary.n_test_windows_gen1
                                        : summary.n_test_windows_gen2)++;
    summary.n_features = config.n_features;
    summary.skipped_test_trucks = tw.skipped;
    summary.seed = config.seed;
    log::info("synth: wrote dataset to ", out_dir, " (", summary.n_train_series, " train series, ",
              summary.n_test_windows_gen1, "+", summary.n_test_windows_gen2, " test windows)");
    return summary;
}

}  // namespace pdm::synth
