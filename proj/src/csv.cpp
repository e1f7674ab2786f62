#include "pdm/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pdm/error.hpp"

namespace pdm::csv {

namespace {

// Cells are plain comma-separated values: the formats here never embed
// commas or quotes, so no quoting layer is needed.
std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r')
        cells.back().pop_back();
    return cells;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path + " for reading");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

void finish_write(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("write to " + path + " failed");
}

std::int64_t parse_int_cell(const std::string& cell, std::size_t row_no, const char* what) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw ParseError(std::string("row ") + std::to_string(row_no) + ": bad " + what + " \"" +
                         cell + "\"");
    return v;
}

int find_column(const std::vector<std::string>& header, const std::string& name,
                const std::string& path) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
        throw SchemaError(path + ": header is missing column \"" + name + "\"");
    return static_cast<int>(it - header.begin());
}

struct SeriesSchema {
    int col_timestep, col_chassis, col_gen, col_risk;  // col_risk = -1 for test files
    std::vector<int> feature_cols;
    std::vector<std::string> feature_names;
};

SeriesSchema parse_series_header(const std::vector<std::string>& header, bool with_risk,
                                 const std::string& path) {
    SeriesSchema s{};
    s.col_timestep = find_column(header, "Timesteps", path);
    s.col_chassis = find_column(header, "ChassisId_encoded", path);
    s.col_gen = find_column(header, "gen", path);
    s.col_risk = with_risk ? find_column(header, "risk_level", path) : -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        if (i == s.col_timestep || i == s.col_chassis || i == s.col_gen || i == s.col_risk)
            continue;
        s.feature_cols.push_back(i);
        s.feature_names.push_back(header[i]);
    }
    return s;
}

std::vector<std::string> default_feature_names(std::size_t n) {
    std::vector<std::string> names(n);
    for (std::size_t i = 0; i < n; ++i) names[i] = "f" + std::to_string(i);
    return names;
}

void write_series_header(std::ofstream& out, bool with_risk,
                         const std::vector<std::string>& names) {
    out << "Timesteps,ChassisId_encoded,gen";
    if (with_risk) out << ",risk_level";
    for (const auto& n : names) out << "," << n;
    out << "\n";
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw NumericError("double formatting failed");
    return std::string(buf, ptr);
}

double parse_double_cell(const std::string& cell, std::size_t row_no) {
    std::size_t a = cell.find_first_not_of(" \t");
    if (a == std::string::npos) return std::nan("");
    std::size_t b = cell.find_last_not_of(" \t");
    double v = 0.0;
    const char* first = cell.data() + a;
    const char* last = cell.data() + b + 1;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw ParseError("row " + std::to_string(row_no) + ": feature cell \"" + cell +
                         "\" is not a real number");
    return v;
}

std::vector<TruckSeries> read_train_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, no header");
    SeriesSchema schema = parse_series_header(split_line(line), true, path);

    std::vector<TruckSeries> series;
    std::map<std::string, std::size_t> index_of;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != schema.feature_cols.size() + 4)
            throw SchemaError(path + ": row " + std::to_string(row_no) + " has " +
                              std::to_string(cells.size()) + " cells, header defines " +
                              std::to_string(schema.feature_cols.size() + 4));
        const std::string& chassis = cells[schema.col_chassis];
        auto [it, inserted] = index_of.try_emplace(chassis, series.size());
        if (inserted) {
            series.push_back(TruckSeries{chassis, parse_generation(cells[schema.col_gen]), {}});
        } else if (series[it->second].gen != parse_generation(cells[schema.col_gen])) {
            throw IntegrityError(path + ": chassis " + chassis + " appears under two generations");
        }
        Readout r;
        r.timestep = parse_int_cell(cells[schema.col_timestep], row_no, "Timesteps");
        r.risk = parse_risk(cells[schema.col_risk]);
        r.features.reserve(schema.feature_cols.size());
        for (int col : schema.feature_cols)
            r.features.push_back(parse_double_cell(cells[col], row_no));
        series[it->second].readouts.push_back(std::move(r));
    }
    for (auto& s : series) {
        std::stable_sort(s.readouts.begin(), s.readouts.end(),
                         [](const Readout& a, const Readout& b) { return a.timestep < b.timestep; });
        for (std::size_t i = 1; i < s.readouts.size(); ++i)
            if (s.readouts[i].timestep == s.readouts[i - 1].timestep)
                throw IntegrityError(path + ": chassis " + s.chassis_id +
                                     " repeats timestep " +
                                     std::to_string(s.readouts[i].timestep));
    }
    return series;
}

void write_train_csv(const std::vector<TruckSeries>& series, const std::string& path,
                     const std::vector<std::string>& feature_names) {
    std::size_t f = series.empty() ? 0 : series.front().feature_count();
    auto names = feature_names.empty() ? default_feature_names(f) : feature_names;
    if (names.size() != f) throw ContractError("feature name count does not match data");
    auto out = open_out(path);
    write_series_header(out, true, names);
    for (const auto& s : series) {
        for (const auto& r : s.readouts) {
            if (!r.risk) throw ContractError("chassis " + s.chassis_id + " has an unlabeled readout");
            out << r.timestep << "," << s.chassis_id << "," << to_string(s.gen) << ","
                << to_string(*r.risk);
            for (double v : r.features) out << "," << format_double(v);
            out << "\n";
        }
    }
    finish_write(out, path);
}

std::vector<Window> read_test_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, no header");
    SeriesSchema schema = parse_series_header(split_line(line), false, path);

    std::vector<Window> windows;
    std::map<std::string, Window> partial;  // current <10-row block per chassis
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != schema.feature_cols.size() + 3)
            throw SchemaError(path + ": row " + std::to_string(row_no) + " has " +
                              std::to_string(cells.size()) + " cells, header defines " +
                              std::to_string(schema.feature_cols.size() + 3));
        const std::string& chassis = cells[schema.col_chassis];
        Window& w = partial[chassis];
        if (w.features.empty()) {
            w.chassis_id = chassis;
            w.gen = parse_generation(cells[schema.col_gen]);
        }
        std::vector<double> feats;
        feats.reserve(schema.feature_cols.size());
        for (int col : schema.feature_cols) feats.push_back(parse_double_cell(cells[col], row_no));
        w.features.push_back(std::move(feats));
        if (w.features.size() == kWindowLen) {
            windows.push_back(std::move(w));
            partial.erase(chassis);
        }
    }
    if (!partial.empty()) {
        const auto& [chassis, w] = *partial.begin();
        throw StructureError(path + ": chassis " + chassis + " row count is not a multiple of 10 (" +
                             std::to_string(w.features.size()) + " rows left over)");
    }
    return windows;
}

void write_test_csv(const std::vector<Window>& windows, const std::string& path,
                    const std::vector<std::string>& feature_names) {
    std::size_t f = windows.empty() ? 0 : windows.front().feature_count();
    auto names = feature_names.empty() ? default_feature_names(f) : feature_names;
    if (names.size() != f) throw ContractError("feature name count does not match data");
    auto out = open_out(path);
    write_series_header(out, false, names);
    std::map<std::string, std::int64_t> next_step;  // running timestep per chassis
    for (const auto& w : windows) {
        for (const auto& row : w.features) {
            out << next_step[w.chassis_id]++ << "," << w.chassis_id << "," << to_string(w.gen);
            for (double v : row) out << "," << format_double(v);
            out << "\n";
        }
    }
    finish_write(out, path);
}

std::vector<VariantRecord> read_variants_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, no header");
    auto header = split_line(line);
    if (header.size() != kVariantSpecCount + 1)
        throw SchemaError(path + ": expected 13 columns (ChassisId_encoded + 12 specs), found " +
                          std::to_string(header.size()));
    if (header[0] != "ChassisId_encoded")
        throw SchemaError(path + ": header is missing column \"ChassisId_encoded\"");

    std::vector<VariantRecord> records;
    std::set<std::string> seen;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != kVariantSpecCount + 1)
            throw SchemaError(path + ": row " + std::to_string(row_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected 13");
        if (!seen.insert(cells[0]).second)
            throw IntegrityError(path + ": duplicate chassis id " + cells[0]);
        records.push_back(VariantRecord{cells[0], {cells.begin() + 1, cells.end()}});
    }
    return records;
}

void write_variants_csv(const std::vector<VariantRecord>& records, const std::string& path,
                        const std::vector<std::string>& spec_names) {
    std::vector<std::string> names = spec_names;
    if (names.empty())
        for (std::size_t i = 0; i < kVariantSpecCount; ++i) names.push_back("spec_" + std::to_string(i));
    if (names.size() != kVariantSpecCount) throw ContractError("variants need exactly 12 spec names");
    auto out = open_out(path);
    out << "ChassisId_encoded";
    for (const auto& n : names) out << "," << n;
    out << "\n";
    for (const auto& r : records) {
        if (r.specs.size() != kVariantSpecCount)
            throw ContractError("chassis " + r.chassis_id + " has " +
                                std::to_string(r.specs.size()) + " specs, expected 12");
        out << r.chassis_id;
        for (const auto& s : r.specs) out << "," << s;
        out << "\n";
    }
    finish_write(out, path);
}

void write_predictions_csv(const PredictionSet& preds, const std::string& path,
                           const std::string& label_column) {
    auto out = open_out(path);
    out << "ChassisId_encoded,gen,seq_idx,step," << label_column << "\n";
    for (const auto& [key, pred] : preds.entries) {
        if (pred.labels.size() != kWindowLen)
            throw ContractError("window " + to_string(key) + " has " +
                                std::to_string(pred.labels.size()) + " labels, expected 10");
        for (std::size_t step = 0; step < kWindowLen; ++step)
            out << key.chassis_id << "," << to_string(key.gen) << "," << key.seq_idx << "," << step
                << "," << to_string(pred.labels[step]) << "\n";
    }
    finish_write(out, path);
}

PredictionSet read_predictions_csv(const std::string& path, const std::string& label_column) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, no header");
    auto header = split_line(line);
    const std::vector<std::string> expected{"ChassisId_encoded", "gen", "seq_idx", "step",
                                            label_column};
    if (header != expected)
        throw SchemaError(path + ": header does not match predictions schema with label column \"" +
                          label_column + "\"");

    PredictionSet set;
    std::map<WindowKey, std::array<bool, kWindowLen>> seen;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != 5)
            throw SchemaError(path + ": row " + std::to_string(row_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected 5");
        WindowKey key{cells[0], parse_generation(cells[1]),
                      static_cast<int>(parse_int_cell(cells[2], row_no, "seq_idx"))};
        auto step = parse_int_cell(cells[3], row_no, "step");
        if (step < 0 || step >= static_cast<std::int64_t>(kWindowLen))
            throw StructureError(path + ": row " + std::to_string(row_no) + " step " +
                                 std::to_string(step) + " outside 0..9");
        auto& pred = set.entries[key];
        if (pred.labels.empty()) pred.labels.resize(kWindowLen, RiskLevel::Low);
        pred.labels[static_cast<std::size_t>(step)] = parse_risk(cells[4]);
        seen[key][static_cast<std::size_t>(step)] = true;
    }
    for (const auto& [key, mask] : seen)
        for (std::size_t step = 0; step < kWindowLen; ++step)
            if (!mask[step])
                throw StructureError(path + ": key " + to_string(key) + " is missing step " +
                                     std::to_string(step));
    return set;
}

void write_probs_csv(const PredictionSet& preds, const std::string& path) {
    auto out = open_out(path);
    out << "ChassisId_encoded,gen,seq_idx,step,p_low,p_medium,p_high\n";
    for (const auto& [key, pred] : preds.entries) {
        if (pred.probs.size() != kWindowLen)
            throw ContractError("window " + to_string(key) + " has no probability rows");
        for (std::size_t step = 0; step < kWindowLen; ++step) {
            out << key.chassis_id << "," << to_string(key.gen) << "," << key.seq_idx << "," << step;
            for (double p : pred.probs[step]) out << "," << format_double(p);
            out << "\n";
        }
    }
    finish_write(out, path);
}

PredictionSet read_probs_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": empty file, no header");
    auto header = split_line(line);
    const std::vector<std::string> expected{"ChassisId_encoded", "gen",   "seq_idx", "step",
                                            "p_low",             "p_medium", "p_high"};
    if (header != expected) throw SchemaError(path + ": header does not match probability schema");

    PredictionSet set;
    std::map<WindowKey, std::array<bool, kWindowLen>> seen;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != 7)
            throw SchemaError(path + ": row " + std::to_string(row_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected 7");
        WindowKey key{cells[0], parse_generation(cells[1]),
                      static_cast<int>(parse_int_cell(cells[2], row_no, "seq_idx"))};
        auto step = parse_int_cell(cells[3], row_no, "step");
        if (step < 0 || step >= static_cast<std::int64_t>(kWindowLen))
            throw StructureError(path + ": row " + std::to_string(row_no) + " step " +
                                 std::to_string(step) + " outside 0..9");
        auto& pred = set.entries[key];
        if (pred.probs.empty()) pred.probs.resize(kWindowLen, {0.0, 0.0, 0.0});
        for (int c = 0; c < 3; ++c)
            pred.probs[static_cast<std::size_t>(step)][static_cast<std::size_t>(c)] =
                parse_double_cell(cells[static_cast<std::size_t>(4 + c)], row_no);
        seen[key][static_cast<std::size_t>(step)] = true;
    }
    for (const auto& [key, mask] : seen)
        for (std::size_t step = 0; step < kWindowLen; ++step)
            if (!mask[step])
                throw StructureError(path + ": key " + to_string(key) + " is missing step " +
                                     std::to_string(step));
    return set;
}

std::string probs_sidecar_path(const std::string& path) { return path + ".probs.csv"; }

}  // namespace pdm::csv
