// mplbench: command-line front end for the MPL pre-training workbench.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mplbench/experiment.hpp"
#include "mplbench/io/container.hpp"
#include "mplbench/report.hpp"

namespace fs = std::filesystem;
using namespace mplbench;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

experiment::ExperimentConfig resolve(const CommonOptions& opts) {
    auto cfg = experiment::load_config(opts.config);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.apply_seed();
    }
    if (!opts.out.empty()) {
        cfg.output_dir = opts.out;
    }
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config, "experiment config (JSON)")->required();
    cmd->add_option("--seed", opts.seed, "overrides the config seed");
    cmd->add_option("--out", opts.out, "run directory (overrides output_dir)");
}

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-position masked prediction workbench"};
    app.require_subcommand(1);

    CommonOptions common;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen, common);
    auto* labels = app.add_subcommand("make-labels", "cluster frames into pseudo-label codebooks");
    add_common(labels, common);
    bool resume = false;
    auto* train = app.add_subcommand("pretrain", "masked-prediction pre-training");
    add_common(train, common);
    train->add_flag("--resume", resume, "continue from the run's checkpoint");
    auto* probe_cmd = app.add_subcommand("probe", "train layer-weighted probes on the frozen encoder");
    add_common(probe_cmd, common);
    auto* run = app.add_subcommand("run", "gen-data, make-labels, pretrain, probe and report");
    add_common(run, common);

    std::string report_run;
    std::string report_out;
    std::vector<std::string> report_inputs;
    auto* rep = app.add_subcommand("report", "weights/metrics tables and heatmap from probe results");
    rep->add_option("--run", report_run, "run directory; uses its probes/ and writes to its report/");
    rep->add_option("--out", report_out, "output directory");
    rep->add_option("results", report_inputs, "probe result JSON files, one heatmap row each");

    std::string run_a;
    std::string run_b;
    std::string compare_out;
    auto* cmp = app.add_subcommand("compare", "directional comparison of two probed runs (B vs A)");
    cmp->add_option("run_a", run_a, "baseline run directory")->required();
    cmp->add_option("run_b", run_b, "candidate run directory")->required();
    cmp->add_option("--out", compare_out, "write comparison.json here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            experiment::cmd_gen_data(resolve(common), log_line);
        } else if (labels->parsed()) {
            experiment::cmd_make_labels(resolve(common), log_line);
        } else if (train->parsed()) {
            experiment::cmd_pretrain(resolve(common), resume, log_line);
        } else if (probe_cmd->parsed()) {
            experiment::cmd_probe(resolve(common), log_line);
        } else if (run->parsed()) {
            experiment::cmd_run(resolve(common), log_line);
        } else if (rep->parsed()) {
            std::vector<report::ReportRow> rows;
            fs::path out = report_out;
            if (!report_run.empty()) {
                const auto summary = report::load_run(report_run);
                for (const auto& [kind, result] : summary.probes) {
                    rows.push_back({probe::to_string(kind), result});
                }
                if (out.empty()) {
                    out = fs::path(report_run) / "report";
                }
            }
            for (const auto& input : report_inputs) {
                auto result = report::load_probe_result(input);
                rows.push_back({probe::to_string(result.task), std::move(result)});
            }
            if (rows.empty()) {
                std::cerr << "report: give --run DIR or at least one probe result file\n";
                return kExitConfig;
            }
            if (out.empty()) {
                std::cerr << "report: --out is required without --run\n";
                return kExitConfig;
            }
            report::write_report(rows, out);
            log_line("wrote " + out.string());
        } else if (cmp->parsed()) {
            const auto comparison =
                report::compare_runs(report::load_run(run_a), report::load_run(run_b));
            std::cout << report::render_text(comparison);
            if (!compare_out.empty()) {
                fs::create_directories(compare_out);
                io::write_text_atomic(fs::path(compare_out) / "comparison.json",
                                      nlohmann::json(comparison).dump(2) + "\n");
            }
        }
    } catch (const experiment::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
