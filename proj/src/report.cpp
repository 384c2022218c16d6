#include "mplbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mplbench/io/container.hpp"

namespace mplbench::report {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '&':
            out += "&amp;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) {
        out.push_back(cur);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

Verdict make_verdict(const std::string& quantity, const std::string& run_a, double a,
                     const std::string& run_b, double b) {
    Verdict v;
    v.quantity = quantity;
    v.run_a = run_a;
    v.run_b = run_b;
    v.value_a = a;
    v.value_b = b;
    v.delta = b - a;
    v.outcome = b > a ? "B higher" : (b < a ? "B lower" : "tie");
    v.text = quantity + ": " + run_b + " " + short_num(b) + " vs " + run_a + " " + short_num(a) +
             " (delta " + short_num(v.delta) + ", " + v.outcome + ")";
    return v;
}

const probe::ProbeResult& need(const RunSummary& run, probe::TaskKind kind) {
    const auto it = run.probes.find(kind);
    if (it == run.probes.end()) {
        throw std::invalid_argument("run " + run.id + " has no " + probe::to_string(kind) +
                                    " probe result");
    }
    return it->second;
}

} // namespace

void check_rows(const std::vector<ReportRow>& rows) {
    if (rows.empty()) {
        throw std::invalid_argument("report: need at least one probe result");
    }
    const std::size_t n = rows.front().result.layer_weights.size();
    for (const auto& row : rows) {
        if (row.result.layer_weights.size() != n) {
            throw std::invalid_argument(
                "report: results disagree on depth (" + std::to_string(n - 1) + " vs " +
                std::to_string(row.result.layer_weights.size() - 1) + " layers)");
        }
    }
    if (n < 2) {
        throw std::invalid_argument("report: weight vectors need at least 2 entries");
    }
}

std::string weights_csv(const std::vector<ReportRow>& rows) {
    check_rows(rows);
    std::string out = "task";
    for (std::size_t l = 0; l < rows.front().result.layer_weights.size(); ++l) {
        out += ",layer_" + std::to_string(l);
    }
    out += "\n";
    for (const auto& row : rows) {
        out += row.label;
        for (const double w : row.result.layer_weights) {
            out += "," + num(w);
        }
        out += "\n";
    }
    return out;
}

std::string metrics_csv(const std::vector<ReportRow>& rows) {
    check_rows(rows);
    std::string out = "task,metric,center_of_mass,entropy\n";
    for (const auto& row : rows) {
        const auto& w = row.result.layer_weights;
        out += row.label + "," + num(row.result.metric) + "," +
               num(probe::weight_center_of_mass(w)) + "," + num(probe::weight_entropy(w)) + "\n";
    }
    return out;
}

std::string heatmap_svg(const std::vector<ReportRow>& rows) {
    check_rows(rows);
    const std::size_t cols = rows.front().result.layer_weights.size();
    constexpr int cell_w = 64;
    constexpr int cell_h = 32;
    constexpr int left = 160;
    constexpr int top = 28;
    const int width = left + static_cast<int>(cols) * cell_w + 8;
    const int height = top + static_cast<int>(rows.size()) * cell_h + 8;

    // Linear ramp from white (0) to black (largest weight in the grid).
    double top_weight = 0.0;
    for (const auto& row : rows) {
        for (const double w : row.result.layer_weights) {
            top_weight = std::max(top_weight, w);
        }
    }
    if (top_weight <= 0.0) {
        top_weight = 1.0;
    }

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (std::size_t l = 0; l < cols; ++l) {
        svg << "<text x=\"" << left + static_cast<int>(l) * cell_w + cell_w / 2 << "\" y=\""
            << top - 10 << "\" text-anchor=\"middle\">layer " << l << "</text>\n";
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int y = top + static_cast<int>(r) * cell_h;
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y + cell_h / 2 + 4
            << "\" text-anchor=\"end\">" << xml_escape(rows[r].label) << "</text>\n";
        for (std::size_t l = 0; l < cols; ++l) {
            const double w = rows[r].result.layer_weights[l];
            const int level = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(w / top_weight, 0.0, 1.0))));
            const int x = left + static_cast<int>(l) * cell_w;
            svg << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w
                << "\" height=\"" << cell_h << "\" fill=\"rgb(" << level << "," << level << ","
                << level << ")\" stroke=\"#888\"/>\n";
            svg << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4
                << "\" text-anchor=\"middle\" fill=\"" << (level < 128 ? "#fff" : "#000") << "\">"
                << short_num(w) << "</text>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

WeightsTable parse_weights_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("weights.csv: empty");
    }
    const auto header = split(line, ',');
    if (header.size() < 3 || header.front() != "task") {
        throw std::invalid_argument("weights.csv: bad header");
    }
    WeightsTable table;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto fields = split(line, ',');
        if (fields.size() != header.size()) {
            throw std::invalid_argument("weights.csv: row has " + std::to_string(fields.size()) +
                                        " fields, header has " + std::to_string(header.size()));
        }
        table.labels.push_back(fields.front());
        std::vector<double> w;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            w.push_back(std::stod(fields[i]));
        }
        table.weights.push_back(std::move(w));
    }
    return table;
}

void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& dir) {
    check_rows(rows);
    std::filesystem::create_directories(dir);
    io::write_text_atomic(dir / "weights.csv", weights_csv(rows));
    io::write_text_atomic(dir / "metrics.csv", metrics_csv(rows));
    io::write_text_atomic(dir / "heatmap.svg", heatmap_svg(rows));
}

probe::ProbeResult load_probe_result(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read probe result " + path.string());
    }
    nlohmann::json j;
    in >> j;
    return probe::probe_result_from_json(j);
}

RunSummary load_run(const std::filesystem::path& dir) {
    RunSummary run;
    run.id = dir.filename().string();
    if (run.id.empty()) {
        run.id = dir.parent_path().filename().string();
    }
    std::ifstream cfg(dir / "config.json");
    if (cfg) {
        nlohmann::json j;
        cfg >> j;
        if (j.contains("name") && j.at("name").is_string() && !j.at("name").get<std::string>().empty()) {
            run.id = j.at("name").get<std::string>() + " [" + run.id + "]";
        }
    }
    const auto probes = dir / "probes";
    if (!std::filesystem::is_directory(probes)) {
        throw std::invalid_argument("run " + dir.string() + " has no probes directory");
    }
    for (const auto kind : {probe::TaskKind::frame_content, probe::TaskKind::utterance_speaker}) {
        const auto path = probes / (probe::to_string(kind) + ".json");
        if (std::filesystem::exists(path)) {
            run.probes.emplace(kind, load_probe_result(path));
        }
    }
    return run;
}

ComparisonReport compare_runs(const RunSummary& a, const RunSummary& b) {
    using probe::TaskKind;
    const auto& ca = need(a, TaskKind::frame_content);
    const auto& sa = need(a, TaskKind::utterance_speaker);
    const auto& cb = need(b, TaskKind::frame_content);
    const auto& sb = need(b, TaskKind::utterance_speaker);
    const std::size_t n = ca.layer_weights.size();
    for (const auto* r : {&sa, &cb, &sb}) {
        if (r->layer_weights.size() != n) {
            throw std::invalid_argument("compare: runs " + a.id + " and " + b.id +
                                        " differ in encoder depth");
        }
    }

    ComparisonReport rep;
    rep.run_a = a.id;
    rep.run_b = b.id;
    for (const auto& [kind, r] : a.probes) {
        rep.metrics_a[probe::to_string(kind)] = r.metric;
        rep.weights_a[probe::to_string(kind)] = r.layer_weights;
        rep.center_of_mass_a[probe::to_string(kind)] = probe::weight_center_of_mass(r.layer_weights);
    }
    for (const auto& [kind, r] : b.probes) {
        rep.metrics_b[probe::to_string(kind)] = r.metric;
        rep.weights_b[probe::to_string(kind)] = r.layer_weights;
        rep.center_of_mass_b[probe::to_string(kind)] = probe::weight_center_of_mass(r.layer_weights);
    }
    rep.verdicts.push_back(
        make_verdict("content accuracy", a.id, ca.metric, b.id, cb.metric));
    rep.verdicts.push_back(
        make_verdict("speaker accuracy", a.id, sa.metric, b.id, sb.metric));
    rep.verdicts.push_back(make_verdict("speaker center of mass", a.id,
                                        probe::weight_center_of_mass(sa.layer_weights), b.id,
                                        probe::weight_center_of_mass(sb.layer_weights)));
    rep.verdicts.push_back(make_verdict("content weight entropy", a.id,
                                        probe::weight_entropy(ca.layer_weights), b.id,
                                        probe::weight_entropy(cb.layer_weights)));
    rep.content_accuracy_delta = rep.verdicts[0].delta;
    rep.speaker_accuracy_delta = rep.verdicts[1].delta;
    rep.speaker_center_of_mass_delta = rep.verdicts[2].delta;
    rep.content_entropy_delta = rep.verdicts[3].delta;
    return rep;
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
    auto verdicts = nlohmann::json::array();
    for (const auto& v : r.verdicts) {
        verdicts.push_back({{"quantity", v.quantity},
                            {"run_a", v.run_a},
                            {"run_b", v.run_b},
                            {"value_a", v.value_a},
                            {"value_b", v.value_b},
                            {"delta", v.delta},
                            {"outcome", v.outcome},
                            {"text", v.text}});
    }
    j = nlohmann::json{{"run_a", r.run_a},
                       {"run_b", r.run_b},
                       {"metrics", {{"a", r.metrics_a}, {"b", r.metrics_b}}},
                       {"weights", {{"a", r.weights_a}, {"b", r.weights_b}}},
                       {"center_of_mass", {{"a", r.center_of_mass_a}, {"b", r.center_of_mass_b}}},
                       {"deltas",
                        {{"content_accuracy", r.content_accuracy_delta},
                         {"speaker_accuracy", r.speaker_accuracy_delta},
                         {"speaker_center_of_mass", r.speaker_center_of_mass_delta},
                         {"content_entropy", r.content_entropy_delta}}},
                       {"verdicts", verdicts}};
}

std::string render_text(const ComparisonReport& r) {
    std::string out = "A = " + r.run_a + "\nB = " + r.run_b + "\n";
    for (const auto& v : r.verdicts) {
        out += v.text + "\n";
    }
    return out;
}

} // namespace mplbench::report
