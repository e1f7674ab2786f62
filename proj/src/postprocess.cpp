#include "pdm/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "pdm/error.hpp"
#include "pdm/log.hpp"

namespace pdm::postprocess {

namespace {

int high_count(const std::vector<RiskLevel>& labels) {
    return static_cast<int>(std::count(labels.begin(), labels.end(), RiskLevel::High));
}

bool is_failing(const std::vector<RiskLevel>& labels) { return high_count(labels) > 0; }

// Key sets across runs and the ensemble must agree; reports the first few
// keys of the symmetric difference.
void check_same_keys(const PredictionSet& a, const PredictionSet& b, const char* what) {
    if (a.entries.size() == b.entries.size()) {
        auto ia = a.entries.begin();
        auto ib = b.entries.begin();
        bool same = true;
        for (; ia != a.entries.end(); ++ia, ++ib)
            if (!(ia->first == ib->first)) {
                same = false;
                break;
            }
        if (same) return;
    }
    std::string diff;
    int listed = 0;
    auto list_missing = [&](const PredictionSet& x, const PredictionSet& y, const char* side) {
        for (const auto& [key, pred] : x.entries) {
            if (y.entries.find(key) == y.entries.end() && listed < 8) {
                diff += std::string(" ") + side + ":" + to_string(key);
                ++listed;
            }
        }
    };
    list_missing(a, b, "-");
    list_missing(b, a, "+");
    throw ContractError(std::string(what) + " key sets differ:" + diff);
}

}  // namespace

std::vector<RiskLevel> monotonic_repair(const std::vector<RiskLevel>& labels) {
    std::vector<RiskLevel> out = labels;
    for (std::size_t i = 1; i < out.size(); ++i) out[i] = max_risk(out[i - 1], out[i]);
    return out;
}

std::vector<RiskLevel> leading_run_smooth(const std::vector<RiskLevel>& labels, int threshold) {
    if (labels.empty() || labels.front() != RiskLevel::Low) return labels;
    if (std::find(labels.begin(), labels.end(), RiskLevel::High) == labels.end()) return labels;
    std::size_t run = 0;
    while (run < labels.size() && labels[run] == RiskLevel::Low) ++run;
    if (run == labels.size() || run > static_cast<std::size_t>(threshold)) return labels;
    std::vector<RiskLevel> out = labels;
    for (std::size_t i = 0; i < run; ++i) out[i] = labels[run];
    return out;
}

std::vector<RiskLevel> repair_chain(const std::vector<RiskLevel>& labels, int smooth_threshold) {
    return leading_run_smooth(monotonic_repair(labels), smooth_threshold);
}

PredictionSet calibrate_high_counts(const PredictionSet& preds, double target_mean,
                                    double tolerance, Rng& rng, CalibrationReport* report) {
    PredictionSet out = preds;
    CalibrationReport rep;

    std::vector<std::vector<RiskLevel>*> failing;
    for (auto& [key, pred] : out.entries)
        if (is_failing(pred.labels)) failing.push_back(&pred.labels);
    rep.failing_sequences = static_cast<int>(failing.size());

    auto mean_high = [&]() {
        double sum = 0.0;
        for (const auto* seq : failing) sum += high_count(*seq);
        return sum / static_cast<double>(failing.size());
    };
    auto histogram = [&](std::array<int, 11>& hist) {
        for (const auto* seq : failing) ++hist[static_cast<std::size_t>(high_count(*seq))];
    };

    if (failing.empty()) {
        if (report) *report = rep;
        return out;
    }
    histogram(rep.histogram_before);
    rep.mean_before = mean_high();

    double mean = rep.mean_before;
    const double n = static_cast<double>(failing.size());
    while (std::abs(mean - target_mean) > tolerance) {
        const bool raise = mean < target_mean;
        std::vector<std::vector<RiskLevel>*> movable;
        for (auto* seq : failing) {
            const int hc = high_count(*seq);
            if (raise) {
                // Promote the Medium just below the High run; sequences whose
                // boundary label is Low cannot move (only M<->H flips).
                if (hc < 9 && (*seq)[seq->size() - 1 - static_cast<std::size_t>(hc)] == RiskLevel::Medium)
                    movable.push_back(seq);
            } else {
                if (hc > 1) movable.push_back(seq);
            }
        }
        if (movable.empty()) break;
        auto* seq = movable[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(movable.size()) - 1))];
        const int hc = high_count(*seq);
        const std::size_t boundary = seq->size() - static_cast<std::size_t>(hc) - (raise ? 1 : 0);
        (*seq)[boundary] = raise ? RiskLevel::High : RiskLevel::Medium;
        mean += (raise ? 1.0 : -1.0) / n;
        ++rep.moves;
    }
    rep.hit_tolerance = std::abs(mean - target_mean) <= tolerance;
    rep.mean_after = mean;
    histogram(rep.histogram_after);
    if (!rep.hit_tolerance)
        log::warn("calibration stopped short of target ", target_mean, ": mean ", mean,
                  " with no corrective move left");
    if (report) *report = rep;
    return out;
}

PredictionSet repair_all(const PredictionSet& preds, int smooth_threshold, RepairReport* report) {
    PredictionSet out = preds;
    RepairReport rep;
    for (auto& [key, pred] : out.entries) {
        auto mono = monotonic_repair(pred.labels);
        if (mono != pred.labels) ++rep.monotonic_changed;
        auto smooth = leading_run_smooth(mono, smooth_threshold);
        if (smooth != mono) ++rep.smooth_changed;
        pred.labels = std::move(smooth);
    }
    if (report) *report = rep;
    return out;
}

PredictionSet consensus_repair(const std::vector<PredictionSet>& runs,
                               const PredictionSet& ensembled, int smooth_threshold,
                               RepairReport* report) {
    if (runs.empty()) throw ContractError("consensus repair needs at least one run");
    for (const auto& run : runs) check_same_keys(run, ensembled, "consensus repair");

    RepairReport rep;
    PredictionSet out = ensembled;
    for (auto& [key, pred] : out.entries) {
        std::vector<std::vector<RiskLevel>> repaired;
        repaired.reserve(runs.size());
        for (const auto& run : runs) {
            const auto& labels = run.entries.at(key).labels;
            auto mono = monotonic_repair(labels);
            if (mono != labels) ++rep.monotonic_changed;
            auto smooth = leading_run_smooth(mono, smooth_threshold);
            if (smooth != mono) ++rep.smooth_changed;
            repaired.push_back(std::move(smooth));
        }

        std::vector<RiskLevel> voted(pred.labels.size());
        for (std::size_t t = 0; t < voted.size(); ++t) {
            std::array<int, 3> votes{};
            for (const auto& seq : repaired) ++votes[static_cast<std::size_t>(to_index(seq[t]))];
            const int top = *std::max_element(votes.begin(), votes.end());
            std::vector<int> tied;
            for (int c = 0; c < 3; ++c)
                if (votes[static_cast<std::size_t>(c)] == top) tied.push_back(c);
            if (tied.size() == 1) {
                voted[t] = risk_from_index(tied.front());
            } else {
                ++rep.vote_ties;
                int best = tied.back();  // higher risk when probabilities absent or equal
                if (pred.probs.size() == voted.size()) {
                    for (int c : tied)
                        if (pred.probs[t][static_cast<std::size_t>(c)] >
                            pred.probs[t][static_cast<std::size_t>(best)])
                            best = c;
                }
                voted[t] = risk_from_index(best);
            }
        }
        pred.labels = monotonic_repair(voted);  // voting can break monotonicity
    }
    if (report) *report = rep;
    return out;
}

}  // namespace pdm::postprocess
