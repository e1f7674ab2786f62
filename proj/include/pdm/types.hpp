#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pdm/error.hpp"

namespace pdm {

// Per-readout risk class. Integer encoding doubles as the loss target.
enum class RiskLevel : int { Low = 0, Medium = 1, High = 2 };

enum class Generation : int { Gen1 = 0, Gen2 = 1 };

inline int to_index(RiskLevel r) { return static_cast<int>(r); }

inline RiskLevel risk_from_index(int i) {
    if (i < 0 || i > 2) throw ContractError("risk index out of range: " + std::to_string(i));
    return static_cast<RiskLevel>(i);
}

inline bool operator<(RiskLevel a, RiskLevel b) { return to_index(a) < to_index(b); }
inline bool operator>(RiskLevel a, RiskLevel b) { return b < a; }
inline bool operator<=(RiskLevel a, RiskLevel b) { return !(b < a); }
inline bool operator>=(RiskLevel a, RiskLevel b) { return !(a < b); }

inline RiskLevel max_risk(RiskLevel a, RiskLevel b) { return a < b ? b : a; }

std::string to_string(RiskLevel r);
std::string to_string(Generation g);
RiskLevel parse_risk(const std::string& s);
Generation parse_generation(const std::string& s);

// One readout: a timestep index, the sensor vector (NaN marks a missing
// cell), and the risk label when present.
struct Readout {
    std::int64_t timestep = 0;
    std::vector<double> features;
    std::optional<RiskLevel> risk;
};

// One truck's complete time series, ordered by timestep.
struct TruckSeries {
    std::string chassis_id;
    Generation gen = Generation::Gen1;
    std::vector<Readout> readouts;

    std::size_t length() const { return readouts.size(); }
    std::size_t feature_count() const {
        return readouts.empty() ? 0 : readouts.front().features.size();
    }
};

inline constexpr std::size_t kWindowLen = 10;

// Fixed 10-step slice, the unit of training and prediction. `labels` is
// empty for unlabeled windows, otherwise has exactly kWindowLen entries.
struct Window {
    std::string chassis_id;
    Generation gen = Generation::Gen1;
    std::vector<std::vector<double>> features;  // kWindowLen rows of length F
    std::vector<RiskLevel> labels;
    double weight = 1.0;

    bool labeled() const { return labels.size() == kWindowLen; }
    std::size_t feature_count() const {
        return features.empty() ? 0 : features.front().size();
    }
};

inline constexpr std::size_t kVariantSpecCount = 12;

struct VariantRecord {
    std::string chassis_id;
    std::vector<std::string> specs;  // exactly kVariantSpecCount codes
};

}  // namespace pdm
