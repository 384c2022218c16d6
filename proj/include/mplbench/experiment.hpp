#pragma once

// Experiment configuration and the pipeline commands behind the CLI.
//
// One run directory holds one experiment:
//   config.json        resolved configuration
//   corpus.mpld        generated corpus (absent when corpus_path is given)
//   labels.mplb        pseudo-label bundle
//   checkpoint.mplc    latest pre-training checkpoint
//   loss.csv           per-step loss log
//   probes/<task>.json probe results
//   report/            weights.csv, metrics.csv, heatmap.svg

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mplbench/encoder.hpp"
#include "mplbench/labeler.hpp"
#include "mplbench/mpl_objective.hpp"
#include "mplbench/pretrainer.hpp"
#include "mplbench/prober.hpp"
#include "mplbench/synthcorpus.hpp"

namespace mplbench::experiment {

// Raised for anything wrong with a configuration (malformed JSON, bad
// values, inconsistent sections). The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PlanConfig {
    objective::PlanMode mode = objective::PlanMode::single;
    std::size_t codebook_size = 32; // single mode
    double loc_big = 0.4;           // triple mode, depth of the largest codebook

    friend bool operator==(const PlanConfig&, const PlanConfig&) = default;
};

struct LabelConfig {
    labeler::Strategy strategy = labeler::Strategy::ca1;
    std::vector<std::size_t> sizes{64, 48, 32};
    double subset_frac = 0.1;
    std::size_t max_iters = 100;

    friend bool operator==(const LabelConfig&, const LabelConfig&) = default;
};

struct ExperimentConfig {
    std::string name; // empty: derived by run_name()
    std::uint64_t seed = 1;
    synth::CorpusSpec corpus;
    std::optional<std::filesystem::path> corpus_path;
    LabelConfig labels;
    encoder::EncoderConfig encoder;
    PlanConfig plan;
    pretrain::TrainConfig train;
    probe::ProbeConfig probe;
    std::vector<probe::TaskKind> tasks{probe::TaskKind::frame_content,
                                       probe::TaskKind::utterance_speaker};
    std::size_t checkpoint_every = 500; // 0: only the final checkpoint
    std::filesystem::path output_dir;

    // Copies `seed` into the label, encoder, train and probe seeds. The corpus
    // keeps its own seed so runs that differ only in seed share data.
    void apply_seed();
    // Throws ConfigError.
    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// HuBERT_1, HuBERT_3_<loc>, with "_stable" appended for CA2 labels.
std::string run_name(const ExperimentConfig& config);

objective::PlacementPlan build_plan(const ExperimentConfig& config);

struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path corpus() const { return root / "corpus.mpld"; }
    std::filesystem::path labels() const { return root / "labels.mplb"; }
    std::filesystem::path checkpoint() const { return root / "checkpoint.mplc"; }
    std::filesystem::path loss_csv() const { return root / "loss.csv"; }
    std::filesystem::path probes() const { return root / "probes"; }
    std::filesystem::path probe(probe::TaskKind kind) const {
        return probes() / (probe::to_string(kind) + ".json");
    }
    std::filesystem::path report() const { return root / "report"; }
};

RunPaths run_paths(const ExperimentConfig& config);

using Progress = std::function<void(const std::string&)>;

void write_config(const ExperimentConfig& config);
synth::Corpus cmd_gen_data(const ExperimentConfig& config, const Progress& progress = {});
labeler::LabelBundle cmd_make_labels(const ExperimentConfig& config, const Progress& progress = {});
// With `resume`, continues from the run's checkpoint if one exists.
pretrain::TrainState cmd_pretrain(const ExperimentConfig& config, bool resume = false,
                                  const Progress& progress = {});
std::vector<probe::ProbeResult> cmd_probe(const ExperimentConfig& config,
                                          const Progress& progress = {});
// All of the above followed by the run's report.
void cmd_run(const ExperimentConfig& config, const Progress& progress = {});

synth::Corpus load_run_corpus(const ExperimentConfig& config);

} // namespace mplbench::experiment
