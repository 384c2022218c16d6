#pragma once

// Frozen-feature probing with a learnable softmax-weighted sum over the L+1
// encoder layers followed by a linear classifier.
//
// Each layer's frame features are normalized per frame (parameter-free layer
// norm) before mixing, so the weights compare layers on an equal footing.
// Utterance-level tasks mean-pool the normalized frames over time.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mplbench/encoder.hpp"
#include "mplbench/numerics/matrix.hpp"
#include "mplbench/synthcorpus.hpp"

namespace mplbench::probe {

enum class TaskKind { frame_content, utterance_speaker };

std::string to_string(TaskKind kind);
TaskKind task_from_string(const std::string& name);

struct ProbeTask {
    TaskKind kind = TaskKind::frame_content;
    std::size_t num_classes = 0;
};

// learned: softmax over L+1 trainable scalars.
// pinned: all weight fixed on `layer`, scalars not trained.
// single_layer: the head sees layer `layer` directly, no mixing at all.
enum class WeightMode { learned, pinned, single_layer };

struct ProbeConfig {
    std::size_t steps = 1000;
    std::size_t batch_utterances = 16;
    double learning_rate = 5e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-6;
    std::uint64_t seed = 0;
    WeightMode mode = WeightMode::learned;
    std::size_t layer = 0; // used by pinned and single_layer

    void validate() const;
    friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

// Frozen features of one utterance: L+1 matrices of T x d.
std::vector<numerics::Matrix> extract_features(const encoder::EncoderModel& model,
                                               const numerics::Matrix& frames);

// Probe inputs for one split: per-layer rows plus targets, with an index of
// which rows belong to which utterance.
struct FeatureSet {
    std::vector<numerics::Matrix> layers; // L+1 of N x d
    std::vector<std::uint32_t> targets;   // N
    std::vector<std::size_t> offsets;     // utterance u owns rows [offsets[u], offsets[u+1])

    std::size_t num_layers() const { return layers.size(); }
    std::size_t num_rows() const { return targets.size(); }
    std::size_t num_groups() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

FeatureSet build_features(const encoder::EncoderModel& model,
                          const std::vector<synth::Utterance>& utterances, TaskKind kind);

struct ProbeStep {
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<double> weights;
};

struct ProbeResult {
    TaskKind task = TaskKind::frame_content;
    double metric = 0.0;
    std::vector<double> layer_weights;
    numerics::Matrix head_weight; // d x classes
    std::vector<double> head_bias;
    std::vector<ProbeStep> log;
    ProbeConfig config;
};

void to_json(nlohmann::json& j, const ProbeResult& r);
ProbeResult probe_result_from_json(const nlohmann::json& j);

// Trains on `train`, reports accuracy on `test`. Throws std::domain_error if
// the loss becomes non-finite.
ProbeResult train_probe_on_features(const FeatureSet& train, const FeatureSet& test,
                                    const ProbeTask& task, const ProbeConfig& config);

ProbeResult train_probe(const encoder::EncoderModel& model, const ProbeTask& task,
                        const synth::Corpus& corpus, const ProbeConfig& config);

// (sum_l l * w_l) / L for weights over layers 0..L.
double weight_center_of_mass(const std::vector<double>& weights);
// Shannon entropy in nats; 0 * log 0 counts as 0.
double weight_entropy(const std::vector<double>& weights);

} // namespace mplbench::probe
