#pragma once

// Report emission (weights/metrics tables, SVG heatmap) and run comparison.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mplbench/prober.hpp"

namespace mplbench::report {

struct ReportRow {
    std::string label;
    probe::ProbeResult result;
};

// Throws std::invalid_argument when rows is empty or layer counts differ.
void check_rows(const std::vector<ReportRow>& rows);

// task,layer_0,...,layer_L
std::string weights_csv(const std::vector<ReportRow>& rows);
// task,metric,center_of_mass,entropy
std::string metrics_csv(const std::vector<ReportRow>& rows);
// One row per result, one cell per layer; cells are <rect class="cell">.
std::string heatmap_svg(const std::vector<ReportRow>& rows);

struct WeightsTable {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> weights;
};
WeightsTable parse_weights_csv(const std::string& text);

// Writes weights.csv, metrics.csv and heatmap.svg into `dir`.
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& dir);

probe::ProbeResult load_probe_result(const std::filesystem::path& path);

struct RunSummary {
    std::string id;
    std::map<probe::TaskKind, probe::ProbeResult> probes;
};

// Reads config.json (for the run id) and probes/*.json of a run directory.
RunSummary load_run(const std::filesystem::path& dir);

struct Verdict {
    std::string quantity;
    std::string run_a;
    std::string run_b;
    double value_a = 0.0;
    double value_b = 0.0;
    double delta = 0.0;   // b - a
    std::string outcome;  // "B higher", "B lower", "tie"
    std::string text;
};

struct ComparisonReport {
    std::string run_a;
    std::string run_b;
    std::map<std::string, double> metrics_a;
    std::map<std::string, double> metrics_b;
    std::map<std::string, std::vector<double>> weights_a;
    std::map<std::string, std::vector<double>> weights_b;
    std::map<std::string, double> center_of_mass_a;
    std::map<std::string, double> center_of_mass_b;
    double content_accuracy_delta = 0.0;
    double speaker_accuracy_delta = 0.0;
    double speaker_center_of_mass_delta = 0.0;
    double content_entropy_delta = 0.0;
    std::vector<Verdict> verdicts;
};

// Requires both runs to carry frame_content and utterance_speaker probes
// over the same number of layers; throws std::invalid_argument otherwise.
ComparisonReport compare_runs(const RunSummary& a, const RunSummary& b);

void to_json(nlohmann::json& j, const ComparisonReport& r);
std::string render_text(const ComparisonReport& r);

} // namespace mplbench::report
