#include "pdm/types.hpp"

namespace pdm {

std::string to_string(RiskLevel r) {
    switch (r) {
        case RiskLevel::Low: return "Low";
        case RiskLevel::Medium: return "Medium";
        case RiskLevel::High: return "High";
    }
    throw ContractError("invalid RiskLevel value");
}

std::string to_string(Generation g) {
    return g == Generation::Gen1 ? "gen1" : "gen2";
}

RiskLevel parse_risk(const std::string& s) {
    if (s == "Low") return RiskLevel::Low;
    if (s == "Medium") return RiskLevel::Medium;
    if (s == "High") return RiskLevel::High;
    throw ParseError("unknown risk level \"" + s + "\"");
}

Generation parse_generation(const std::string& s) {
    if (s == "gen1") return Generation::Gen1;
    if (s == "gen2") return Generation::Gen2;
    throw ParseError("unknown generation \"" + s + "\"");
}

}  // namespace pdm
