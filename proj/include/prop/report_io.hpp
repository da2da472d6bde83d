#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prop/detector.hpp"
#include "prop/errors.hpp"
#include "prop/model_io.hpp"

namespace prop {

constexpr int kReportSchemaVersion = 1;

inline nlohmann::json report_to_json(const DetectionReport& report) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["benign_score"] = report.benign_score;
    j["p_max"] = report.p_max;
    j["s_all"] = report.s_all;
    j["s_rest"] = report.s_rest;
    j["distribution"] = report.distribution.probs;
    j["counts"] = report.distribution.counts;
    j["mean_softmax"] = report.distribution.mean_softmax;
    j["suspected_target"] = report.suspected_target;
    j["verdict"] = report.verdict();
    j["threshold"] = report.threshold;
    j["sigma2"] = report.sigma2;
    j["runs"] = report.runs;
    j["seed"] = report.seed;
    j["model_sha256"] = report.model_sha256;
    j["input_source"] = report.input_source;
    j["score_basis"] = report.score_basis;
    j["model_metadata"] = report.model_metadata;
    return j;
}

inline DetectionReport report_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != kReportSchemaVersion)
        throw FormatError("unsupported or missing report schema_version");
    DetectionReport r;
    r.benign_score = j.at("benign_score").get<double>();
    r.p_max = j.at("p_max").get<double>();
    r.s_all = j.at("s_all").get<double>();
    r.s_rest = j.at("s_rest").get<double>();
    r.suspected_target = j.at("suspected_target").get<int>();
    r.backdoored = j.at("verdict").get<std::string>() == "backdoored";
    r.threshold = j.at("threshold").get<double>();
    r.sigma2 = j.at("sigma2").get<double>();
    r.runs = j.at("runs").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.model_sha256 = j.value("model_sha256", "");
    r.input_source = j.value("input_source", "noise");
    r.score_basis = j.value("score_basis", "frequency");
    r.distribution.probs = j.at("distribution").get<std::vector<double>>();
    if (j.contains("counts"))
        r.distribution.counts = j["counts"].get<std::vector<std::int64_t>>();
    if (j.contains("mean_softmax"))
        r.distribution.mean_softmax = j["mean_softmax"].get<std::vector<double>>();
    r.distribution.runs = r.runs;
    r.distribution.input_mode = r.input_source;
    if (j.contains("model_metadata"))
        r.model_metadata = j["model_metadata"].get<std::map<std::string, std::string>>();
    return r;
}

inline void write_report_json(const DetectionReport& report, const std::filesystem::path& path) {
    atomic_write_text(path, report_to_json(report).dump(2) + "\n");
}

inline DetectionReport load_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open report " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("invalid report JSON in " + path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

// class,probability histogram for external plotting
inline void write_histogram_csv(const OutputDistribution& dist, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "class,probability\n";
    char line[64];
    for (std::size_t c = 0; c < dist.probs.size(); ++c) {
        std::snprintf(line, sizeof(line), "%zu,%.12g\n", c, dist.probs[c]);
        out << line;
    }
    atomic_write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Report aggregation (consolidated benign-score table + success rate)
// ---------------------------------------------------------------------------

struct ReportTable {
    std::vector<std::string> datasets;                 // column order
    std::vector<std::string> model_types;              // row order; "benign" first
    // (model_type, dataset) -> scores of all matching reports
    std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
    int total = 0;
    int correct = 0;  // verdict matches ground truth from model metadata

    double success_rate() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

inline ReportTable aggregate_reports(const std::vector<DetectionReport>& reports) {
    ReportTable table;
    std::set<std::string> datasets, attacks;
    for (const DetectionReport& r : reports) {
        const auto it_attack = r.model_metadata.find("attack");
        const auto it_dataset = r.model_metadata.find("dataset");
        const std::string attack = it_attack == r.model_metadata.end() ? "unknown"
                                                                       : it_attack->second;
        const std::string dataset = it_dataset == r.model_metadata.end() ? "unknown"
                                                                         : it_dataset->second;
        const std::string model_type = attack == "none" ? "benign" : attack;
        datasets.insert(dataset);
        attacks.insert(model_type);
        table.cells[{model_type, dataset}].push_back(r.benign_score);
        ++table.total;
        const bool truly_backdoored = attack != "none" && attack != "unknown";
        if (r.backdoored == truly_backdoored) ++table.correct;
    }
    table.datasets.assign(datasets.begin(), datasets.end());
    if (attacks.count("benign")) table.model_types.push_back("benign");
    for (const std::string& a : attacks)
        if (a != "benign") table.model_types.push_back(a);
    return table;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::string format_table_csv(const ReportTable& table) {
    std::ostringstream out;
    out << "model_type";
    for (const auto& d : table.datasets) out << "," << d;
    out << "\n";
    char buf[64];
    for (const auto& mt : table.model_types) {
        out << mt;
        for (const auto& d : table.datasets) {
            const auto it = table.cells.find({mt, d});
            out << ",";
            if (it != table.cells.end() && !it->second.empty()) {
                std::snprintf(buf, sizeof(buf), "%.6g", mean_of(it->second));
                out << buf;
            }
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.6g", table.success_rate());
    out << "detection_success_rate," << buf;
    for (std::size_t i = 1; i < table.datasets.size(); ++i) out << ",";
    out << "\n";
    return out.str();
}

inline std::string format_table_text(const ReportTable& table) {
    std::ostringstream out;
    char buf[64];
    out << "mean benign score per (model type, dataset)\n";
    std::size_t width = 12;
    for (const auto& mt : table.model_types) width = std::max(width, mt.size() + 2);
    out << std::string(width, ' ');
    for (const auto& d : table.datasets) {
        std::snprintf(buf, sizeof(buf), "%12s", d.c_str());
        out << buf;
    }
    out << "\n";
    for (const auto& mt : table.model_types) {
        out << mt << std::string(width - mt.size(), ' ');
        for (const auto& d : table.datasets) {
            const auto it = table.cells.find({mt, d});
            if (it != table.cells.end() && !it->second.empty())
                std::snprintf(buf, sizeof(buf), "%12.4f", mean_of(it->second));
            else
                std::snprintf(buf, sizeof(buf), "%12s", "-");
            out << buf;
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * table.success_rate());
    out << "detection success rate: " << buf << " (" << table.correct << "/" << table.total
        << ")\n";
    return out.str();
}

}  // namespace prop
