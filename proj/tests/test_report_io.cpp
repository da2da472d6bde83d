#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "prop/report_io.hpp"

using namespace prop;
namespace fs = std::filesystem;

namespace {

DetectionReport sample_report(double beta, bool backdoored, const std::string& attack,
                              const std::string& dataset) {
    DetectionReport r;
    r.benign_score = beta;
    r.p_max = 0.8;
    r.s_all = 0.2;
    r.s_rest = 0.05;
    r.suspected_target = 3;
    r.backdoored = backdoored;
    r.threshold = 0.15;
    r.sigma2 = 10000.0;
    r.runs = 1000;
    r.seed = 42;
    r.input_source = "noise";
    r.score_basis = "frequency";
    r.distribution.probs = {0.1, 0.1, 0.0, 0.8};
    r.distribution.counts = {100, 100, 0, 800};
    r.distribution.mean_softmax = {0.12, 0.1, 0.03, 0.75};
    r.distribution.runs = 1000;
    r.distribution.input_mode = "noise";
    r.model_sha256 = "deadbeef";
    r.model_metadata = {{"attack", attack}, {"dataset", dataset}, {"seed", "1"}};
    return r;
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(ReportJson, RoundTripPreservesFields) {
    const DetectionReport r = sample_report(0.03, true, "badnets", "synthetic");
    const DetectionReport back = report_from_json(report_to_json(r));
    EXPECT_DOUBLE_EQ(back.benign_score, r.benign_score);
    EXPECT_DOUBLE_EQ(back.p_max, r.p_max);
    EXPECT_DOUBLE_EQ(back.s_all, r.s_all);
    EXPECT_DOUBLE_EQ(back.s_rest, r.s_rest);
    EXPECT_EQ(back.suspected_target, r.suspected_target);
    EXPECT_EQ(back.backdoored, r.backdoored);
    EXPECT_DOUBLE_EQ(back.threshold, r.threshold);
    EXPECT_DOUBLE_EQ(back.sigma2, r.sigma2);
    EXPECT_EQ(back.runs, r.runs);
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(back.model_sha256, r.model_sha256);
    EXPECT_EQ(back.input_source, r.input_source);
    EXPECT_EQ(back.score_basis, r.score_basis);
    EXPECT_EQ(back.distribution.probs, r.distribution.probs);
    EXPECT_EQ(back.distribution.counts, r.distribution.counts);
    EXPECT_EQ(back.model_metadata, r.model_metadata);
}

TEST(ReportJson, SchemaHasTheDocumentedFieldNames) {
    const auto j = report_to_json(sample_report(0.5, false, "none", "synthetic"));
    for (const char* field :
         {"schema_version", "benign_score", "p_max", "s_all", "s_rest", "distribution",
          "suspected_target", "verdict", "threshold", "sigma2", "runs", "seed", "model_sha256"})
        EXPECT_TRUE(j.contains(field)) << field;
    EXPECT_EQ(j["verdict"], "benign");
}

TEST(ReportJson, WriteIsDeterministic) {
    const fs::path dir = temp_dir("prop_report_det");
    const DetectionReport r = sample_report(0.42, false, "none", "synthetic");
    write_report_json(r, dir / "a.json");
    write_report_json(r, dir / "b.json");
    EXPECT_EQ(read_file_bytes(dir / "a.json"), read_file_bytes(dir / "b.json"));
}

TEST(ReportJson, RejectsUnknownSchemaVersion) {
    auto j = report_to_json(sample_report(0.1, true, "badnets", "synthetic"));
    j["schema_version"] = 999;
    EXPECT_THROW(report_from_json(j), FormatError);
    j.erase("schema_version");
    EXPECT_THROW(report_from_json(j), FormatError);
}

TEST(ReportJson, LoadRejectsInvalidJson) {
    const fs::path dir = temp_dir("prop_report_badjson");
    atomic_write_text(dir / "bad.json", "{not json");
    EXPECT_THROW(load_report_json(dir / "bad.json"), FormatError);
    EXPECT_THROW(load_report_json(dir / "missing.json"), UsageError);
}

TEST(HistogramCsv, OneRowPerClass) {
    const fs::path dir = temp_dir("prop_report_csv");
    const DetectionReport r = sample_report(0.1, true, "badnets", "synthetic");
    write_histogram_csv(r.distribution, dir / "hist.csv");
    std::ifstream in(dir / "hist.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "class,probability");
    std::getline(in, line);
    EXPECT_EQ(line, "0,0.1");
    int rows = 1;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 4);
}

TEST(Aggregate, SuccessRateCountsCorrectVerdicts) {
    std::vector<DetectionReport> reports = {
        sample_report(0.45, false, "none", "synthetic"),     // benign, verdict benign: correct
        sample_report(0.02, true, "badnets", "synthetic"),   // backdoored, flagged: correct
        sample_report(0.03, true, "blended", "synthetic"),   // correct
    };
    ReportTable table = aggregate_reports(reports);
    EXPECT_EQ(table.total, 3);
    EXPECT_EQ(table.correct, 3);
    EXPECT_DOUBLE_EQ(table.success_rate(), 1.0);
    EXPECT_EQ(table.model_types.front(), "benign");

    // a missed backdoor halves nothing but drops the rate
    reports.push_back(sample_report(0.5, false, "badnets", "synthetic"));
    table = aggregate_reports(reports);
    EXPECT_EQ(table.correct, 3);
    EXPECT_DOUBLE_EQ(table.success_rate(), 0.75);
}

TEST(Aggregate, TableFormatsContainCellsAndRate) {
    const std::vector<DetectionReport> reports = {
        sample_report(0.5, false, "none", "synthetic"),
        sample_report(0.01, true, "badnets", "synthetic"),
    };
    const ReportTable table = aggregate_reports(reports);
    const std::string text = format_table_text(table);
    EXPECT_NE(text.find("benign"), std::string::npos);
    EXPECT_NE(text.find("badnets"), std::string::npos);
    EXPECT_NE(text.find("100.0%"), std::string::npos);
    const std::string csv = format_table_csv(table);
    EXPECT_NE(csv.find("model_type,synthetic"), std::string::npos);
    EXPECT_NE(csv.find("detection_success_rate,1"), std::string::npos);
}
