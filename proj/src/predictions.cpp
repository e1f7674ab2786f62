#include "pdm/predictions.hpp"

#include <sstream>

#include "pdm/error.hpp"

namespace pdm {

std::string to_string(const WindowKey& k) {
    std::ostringstream os;
    os << k.chassis_id << "/" << to_string(k.gen) << "/" << k.seq_idx;
    return os.str();
}

bool PredictionSet::has_probabilities() const {
    for (const auto& [key, pred] : entries)
        if (pred.probs.size() != kWindowLen) return false;
    return !entries.empty();
}

void merge_probabilities(PredictionSet& dst, const PredictionSet& probs) {
    if (dst.entries.size() != probs.entries.size())
        throw ContractError("probability set covers " + std::to_string(probs.entries.size()) +
                            " keys, predictions cover " + std::to_string(dst.entries.size()));
    auto it = probs.entries.begin();
    for (auto& [key, pred] : dst.entries) {
        if (!(it->first == key))
            throw ContractError("probability key " + to_string(it->first) +
                                " does not match prediction key " + to_string(key));
        pred.probs = it->second.probs;
        ++it;
    }
}

std::vector<KeyedWindow> assign_keys(const std::vector<Window>& windows) {
    std::vector<KeyedWindow> out;
    out.reserve(windows.size());
    std::map<std::string, int> next_seq;
    for (const Window& w : windows) {
        WindowKey key{w.chassis_id, w.gen, next_seq[w.chassis_id]++};
        out.push_back(KeyedWindow{std::move(key), w});
    }
    return out;
}

}  // namespace pdm
