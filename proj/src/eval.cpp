#include "pdm/eval.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"
#include <set>
#include <sstream>

#include "pdm/error.hpp"
#include "pdm/log.hpp"
#include "pdm/rng.hpp"

namespace pdm::eval {

F1Result macro_f1(const std::vector<RiskLevel>& truth, const std::vector<RiskLevel>& pred) {
    if (truth.size() != pred.size())
        throw ContractError("truth has " + std::to_string(truth.size()) + " labels, predictions " +
                            std::to_string(pred.size()));
    if (truth.empty()) throw ContractError("cannot score an empty label vector");

    F1Result res;
    res.n = static_cast<std::int64_t>(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i)
        ++res.confusion[static_cast<std::size_t>(to_index(truth[i]))]
                       [static_cast<std::size_t>(to_index(pred[i]))];

    double macro = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::int64_t tp = res.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < 3; ++o) {
            if (o == c) continue;
            fp += res.confusion[o][c];
            fn += res.confusion[c][o];
        }
        ClassScores& s = res.per_class[c];
        s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        s.f1 = s.precision + s.recall == 0.0
                   ? 0.0
                   : 2.0 * s.precision * s.recall / (s.precision + s.recall);
        macro += s.f1;
    }
    res.macro_f1 = macro / 3.0;
    return res;
}

EvalReport score(const PredictionSet& preds, const PredictionSet& truth,
                 std::optional<double> dev_fraction, std::uint64_t dev_seed) {
    if (preds.empty()) throw ContractError("prediction set is empty");
    std::string missing;
    int listed = 0;
    for (const auto& [key, pred] : preds.entries)
        if (truth.entries.find(key) == truth.entries.end() && listed++ < 8)
            missing += " " + to_string(key);
    if (!missing.empty())
        throw ContractError("predictions have no ground truth for keys:" + missing);

    // Truck-level development subset, stable for a given seed.
    std::set<std::string> kept_trucks;
    if (dev_fraction) {
        if (*dev_fraction <= 0.0 || *dev_fraction > 1.0)
            throw ConfigError("dev fraction must lie in (0,1]");
        std::vector<std::string> trucks;
        for (const auto& [key, pred] : preds.entries)
            if (trucks.empty() || trucks.back() != key.chassis_id) trucks.push_back(key.chassis_id);
        Rng rng(sub_seed(dev_seed, "devsplit"));
        rng.shuffle(trucks);
        const auto keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(*dev_fraction * static_cast<double>(trucks.size()))));
        kept_trucks.insert(trucks.begin(), trucks.begin() + static_cast<std::ptrdiff_t>(
                                                                std::min(keep, trucks.size())));
    }

    std::vector<RiskLevel> t1, p1, t2, p2;
    for (const auto& [key, pred] : preds.entries) {
        if (dev_fraction && kept_trucks.find(key.chassis_id) == kept_trucks.end()) continue;
        const auto& true_pred = truth.entries.at(key);
        if (true_pred.labels.size() != pred.labels.size())
            throw ContractError("label count mismatch for key " + to_string(key));
        auto& t = key.gen == Generation::Gen1 ? t1 : t2;
        auto& p = key.gen == Generation::Gen1 ? p1 : p2;
        t.insert(t.end(), true_pred.labels.begin(), true_pred.labels.end());
        p.insert(p.end(), pred.labels.begin(), pred.labels.end());
    }

    EvalReport report;
    report.dev_fraction = dev_fraction;
    report.dev_seed = dev_seed;
    if (!t1.empty()) {
        report.gen1.scores = macro_f1(t1, p1);
        report.gen1.timesteps = static_cast<std::int64_t>(t1.size());
        report.gen1.scored = true;
    }
    if (!t2.empty()) {
        report.gen2.scores = macro_f1(t2, p2);
        report.gen2.timesteps = static_cast<std::int64_t>(t2.size());
        report.gen2.scored = true;
    }
    if (!report.gen1.scored && !report.gen2.scored)
        throw ContractError("no timesteps to score in either generation");
    if (report.gen1.scored && report.gen2.scored) {
        report.final_score = 0.5 * (report.gen1.scores.macro_f1 + report.gen2.scores.macro_f1);
    } else {
        report.partial = true;
        report.final_score =
            report.gen1.scored ? report.gen1.scores.macro_f1 : report.gen2.scores.macro_f1;
        log::warn("score: one generation has zero scored timesteps; final score covers only ",
                  report.gen1.scored ? "gen1" : "gen2");
    }
    return report;
}

std::string render_table(const EvalReport& report) {
    auto cell = [](double v, bool present) {
        if (!present) return std::string("     -");
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "Final Score  Score Gen1  Score Gen2\n";
    os << cell(report.final_score, true) << "       " << cell(report.gen1.scores.macro_f1, report.gen1.scored)
       << "      " << cell(report.gen2.scores.macro_f1, report.gen2.scored) << "\n";
    if (report.partial) os << "(one generation had no scored timesteps)\n";
    return os.str();
}

std::string to_json(const EvalReport& report) {
    nlohmann::json j;
    auto gen_json = [](const GenerationReport& g) {
        nlohmann::json out;
        out["scored"] = g.scored;
        out["timesteps"] = g.timesteps;
        if (g.scored) {
            out["macro_f1"] = g.scores.macro_f1;
            const char* names[3] = {"Low", "Medium", "High"};
            for (std::size_t c = 0; c < 3; ++c) {
                out["per_class"][names[c]] = {{"precision", g.scores.per_class[c].precision},
                                              {"recall", g.scores.per_class[c].recall},
                                              {"f1", g.scores.per_class[c].f1}};
            }
            out["confusion"] = g.scores.confusion;
        }
        return out;
    };
    j["final_score"] = report.final_score;
    j["gen1"] = gen_json(report.gen1);
    j["gen2"] = gen_json(report.gen2);
    j["partial"] = report.partial;
    if (report.dev_fraction) {
        j["dev_fraction"] = *report.dev_fraction;
        j["dev_seed"] = report.dev_seed;
    }
    return j.dump(2);
}

}  // namespace pdm::eval
