#pragma once

#include <array>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "pdm/types.hpp"

namespace pdm {

// Identity of one predicted 10-step sequence.
struct WindowKey {
    std::string chassis_id;
    Generation gen = Generation::Gen1;
    int seq_idx = 0;

    friend bool operator<(const WindowKey& a, const WindowKey& b) {
        return std::tie(a.chassis_id, a.gen, a.seq_idx) <
               std::tie(b.chassis_id, b.gen, b.seq_idx);
    }
    friend bool operator==(const WindowKey& a, const WindowKey& b) {
        return a.chassis_id == b.chassis_id && a.gen == b.gen && a.seq_idx == b.seq_idx;
    }
};

std::string to_string(const WindowKey& k);

// Per-timestep class probabilities and hard labels for one sequence. `probs`
// may be empty when the set was loaded from a hard-label CSV.
struct SequencePrediction {
    std::vector<std::array<double, 3>> probs;  // kWindowLen rows when present
    std::vector<RiskLevel> labels;             // kWindowLen entries when complete
};

struct PredictionSet {
    std::map<WindowKey, SequencePrediction> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
    bool has_probabilities() const;
};

// Highest-probability class; exact ties go to the higher risk so the label
// never understates an ambiguous row.
inline RiskLevel argmax_label(const std::array<double, 3>& p) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
        if (p[c] >= p[best]) best = c;
    return risk_from_index(best);
}

// Copies probability rows from `probs` onto matching keys of `dst`.
// Throws ContractError when the key sets differ.
void merge_probabilities(PredictionSet& dst, const PredictionSet& probs);

// A test window together with its prediction key.
struct KeyedWindow {
    WindowKey key;
    Window window;
};

// Assigns (chassis, gen, seq) keys in input order: seq_idx counts a chassis'
// windows as they appear, matching the test CSV block order.
std::vector<KeyedWindow> assign_keys(const std::vector<Window>& windows);

}  // namespace pdm
