#include "pdm/preprocess.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "pdm/error.hpp"
#include "pdm/log.hpp"

namespace pdm::preprocess {

namespace {

bool is_missing(double v) { return !std::isfinite(v); }

std::vector<TruckSeries> apply_column_and_row_rules(const std::vector<TruckSeries>& series,
                                                    const std::vector<int>& kept,
                                                    CleanReport& report) {
    std::vector<TruckSeries> out;
    out.reserve(series.size());
    for (const auto& s : series) {
        TruckSeries t{s.chassis_id, s.gen, {}};
        t.readouts.reserve(s.readouts.size());
        for (const auto& r : s.readouts) {
            Readout nr{r.timestep, {}, r.risk};
            nr.features.reserve(kept.size());
            bool drop = false;
            for (int col : kept) {
                const double v = r.features[static_cast<std::size_t>(col)];
                if (is_missing(v)) {
                    drop = true;
                    break;
                }
                nr.features.push_back(v);
            }
            if (drop) {
                ++report.dropped_rows;
            } else {
                t.readouts.push_back(std::move(nr));
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

std::vector<TruckSeries> clean(const std::vector<TruckSeries>& series, CleanReport& report) {
    std::size_t f = 0;
    for (const auto& s : series)
        if (s.length() > 0) {
            f = s.feature_count();
            break;
        }
    std::vector<bool> any_present(f, false);
    for (const auto& s : series)
        for (const auto& r : s.readouts) {
            if (r.features.size() != f)
                throw ContractError("chassis " + s.chassis_id +
                                    " feature count differs from the rest of the dataset");
            for (std::size_t i = 0; i < f; ++i)
                if (!is_missing(r.features[i])) any_present[i] = true;
        }

    report = CleanReport{};
    for (std::size_t i = 0; i < f; ++i) {
        if (any_present[i])
            report.kept_columns.push_back(static_cast<int>(i));
        else
            ++report.dropped_columns;
    }
    if (f > 0 && report.kept_columns.empty())
        throw StructureError("every feature column is empty, nothing to train on");
    if (report.dropped_columns > 0)
        log::info("clean: dropped ", report.dropped_columns, " all-empty feature columns");

    auto out = apply_column_and_row_rules(series, report.kept_columns, report);
    if (report.dropped_rows > 0)
        log::info("clean: dropped ", report.dropped_rows, " rows with missing cells");
    return out;
}

std::vector<TruckSeries> clean_with_columns(const std::vector<TruckSeries>& series,
                                            const std::vector<int>& kept_columns,
                                            CleanReport& report) {
    report = CleanReport{};
    report.kept_columns = kept_columns;
    return apply_column_and_row_rules(series, kept_columns, report);
}

std::vector<Window> extract_training_windows(const std::vector<TruckSeries>& series, Rng& rng,
                                             ExtractReport& report) {
    report = ExtractReport{};
    std::vector<Window> windows;
    for (const auto& s : series) {
        if (s.length() < kWindowLen) {
            ++report.removed_short;
            continue;
        }
        for (const auto& r : s.readouts)
            if (!r.risk)
                throw ContractError("chassis " + s.chassis_id +
                                    " is unlabeled, cannot extract training windows");
        const RiskLevel final_label = *s.readouts.back().risk;
        if (final_label == RiskLevel::Medium) {
            ++report.discarded_medium;
            continue;
        }

        auto cut = [&](std::size_t start) {
            Window w;
            w.chassis_id = s.chassis_id;
            w.gen = s.gen;
            for (std::size_t i = start; i < start + kWindowLen; ++i) {
                w.features.push_back(s.readouts[i].features);
                w.labels.push_back(*s.readouts[i].risk);
            }
            windows.push_back(std::move(w));
        };

        if (final_label == RiskLevel::Low) {
            ++report.healthy_series;
            const auto max_start = static_cast<std::int64_t>(s.length() - kWindowLen);
            for (int k = 0; k < 2; ++k)
                cut(static_cast<std::size_t>(rng.uniform_int(0, max_start)));
        } else {
            std::vector<std::size_t> anchors;
            for (std::size_t i = kWindowLen - 1; i < s.length(); ++i)
                if (*s.readouts[i].risk == RiskLevel::High) anchors.push_back(i);
            if (anchors.empty()) {
                ++report.skipped_no_anchor;
                log::warn("extract: failing chassis ", s.chassis_id,
                          " has no High readout at index >= 9, skipped");
                continue;
            }
            ++report.failing_series;
            for (int k = 0; k < 4; ++k) {
                const auto pick = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(anchors.size()) - 1));
                cut(anchors[pick] - (kWindowLen - 1));
            }
        }
    }
    return windows;
}

NormStats fit_norm(const std::vector<std::vector<double>>& rows, const std::string& scope) {
    if (rows.size() < 2)
        throw StatsError("scope " + scope + " has " + std::to_string(rows.size()) +
                         " rows, need at least 2 to fit statistics");
    const std::size_t f = rows.front().size();
    NormStats stats;
    stats.scope = scope;
    stats.mean.assign(f, 0.0);
    stats.stddev.assign(f, 0.0);
    for (const auto& row : rows) {
        if (row.size() != f) throw ContractError("scope " + scope + " rows have uneven widths");
        for (std::size_t i = 0; i < f; ++i) stats.mean[i] += row[i];
    }
    const double n = static_cast<double>(rows.size());
    for (std::size_t i = 0; i < f; ++i) stats.mean[i] /= n;
    for (const auto& row : rows)
        for (std::size_t i = 0; i < f; ++i) {
            const double d = row[i] - stats.mean[i];
            stats.stddev[i] += d * d;
        }
    for (std::size_t i = 0; i < f; ++i) stats.stddev[i] = std::sqrt(stats.stddev[i] / n);
    return stats;
}

Window apply_norm(const Window& window, const NormStats& stats) {
    if (window.feature_count() != stats.feature_count())
        throw ContractError("window has " + std::to_string(window.feature_count()) +
                            " features, stats for scope " + stats.scope + " have " +
                            std::to_string(stats.feature_count()));
    Window out = window;
    for (auto& row : out.features)
        for (std::size_t i = 0; i < row.size(); ++i)
            row[i] = (row[i] - stats.mean[i]) / std::max(stats.stddev[i], 1e-8);
    return out;
}

std::vector<Window> apply_norm(const std::vector<Window>& windows, const NormStats& stats) {
    std::vector<Window> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(apply_norm(w, stats));
    return out;
}

std::vector<std::vector<double>> stack_rows(const std::vector<Window>& windows) {
    std::vector<std::vector<double>> rows;
    rows.reserve(windows.size() * kWindowLen);
    for (const auto& w : windows)
        for (const auto& row : w.features) rows.push_back(row);
    return rows;
}

void save_norm_stats(const NormStats& stats, const CleanReport& clean_report,
                     const std::string& path) {
    nlohmann::json j;
    j["scope"] = stats.scope;
    j["mean"] = stats.mean;
    j["stddev"] = stats.stddev;
    j["kept_columns"] = clean_report.kept_columns;
    j["dropped_columns"] = clean_report.dropped_columns;
    j["dropped_rows"] = clean_report.dropped_rows;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write to " + path + " failed");
}

NormStats load_norm_stats(const std::string& path, CleanReport& clean_report) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path + " for reading");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, true);
    NormStats stats;
    stats.scope = j.at("scope").get<std::string>();
    stats.mean = j.at("mean").get<std::vector<double>>();
    stats.stddev = j.at("stddev").get<std::vector<double>>();
    clean_report.kept_columns = j.at("kept_columns").get<std::vector<int>>();
    clean_report.dropped_columns = j.at("dropped_columns").get<int>();
    clean_report.dropped_rows = j.at("dropped_rows").get<int>();
    return stats;
}

}  // namespace pdm::preprocess
