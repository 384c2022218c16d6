#pragma once

// Masked-prediction pre-training loop with Adam, linear warmup, global-norm
// clipping, and bit-exact checkpoint resume.
//
// All randomness is derived from (seed, step, slot), so the loop carries no
// hidden generator state: the batch of step s is slots s*B .. s*B+B-1 of an
// endless sequence of per-epoch permutations, and each slot's mask and
// dropout streams are derived from (seed, s, slot). Resuming at step k
// therefore only needs the parameters, the Adam moments and k.

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
#include "mplbench/masking.hpp"
#include "mplbench/mpl_objective.hpp"
#include "mplbench/synthcorpus.hpp"

namespace mplbench::pretrain {

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_utterances = 8;
    double learning_rate = 5e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-6;
    // Linear warmup length; unset means 10% of steps.
    std::optional<std::size_t> warmup_steps;
    // Global gradient-norm bound; unset disables clipping.
    std::optional<double> grad_clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;
    masking::MaskPolicy mask;

    std::size_t effective_warmup() const;
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

struct TrainState {
    encoder::EncoderModel model;
    objective::PlacementPlan plan;
    TrainConfig config;
    std::vector<AdamMoments> moments; // aligned with parameters()
    std::size_t step = 0;

    std::vector<numerics::Parameter> parameters() const;
};

TrainState init_train_state(const encoder::EncoderConfig& encoder_config,
                            objective::PlacementPlan plan, const TrainConfig& config);

struct LogRow {
    std::size_t step = 0; // 1-based index of the completed step
    double total = 0.0;
    std::vector<objective::LossTerm> terms;
    double grad_norm = 0.0;
    double learning_rate = 0.0;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t step, double value);
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

class Trainer {
public:
    // `corpus` and `labels` must outlive the trainer; labels must cover every
    // utterance of the corpus (same ids, same order) and every plan size.
    Trainer(const std::vector<synth::Utterance>& corpus, const labeler::LabelBundle& labels,
            TrainState state);

    LogRow step();
    // Runs until state().step == target_step, invoking `on_log` every
    // log_every steps.
    void run_until(std::size_t target_step, const std::function<void(const LogRow&)>& on_log = {});

    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }

private:
    const std::vector<std::size_t>& epoch_order(std::size_t epoch);

    const std::vector<synth::Utterance>& corpus_;
    const labeler::LabelBundle& labels_;
    TrainState state_;
    std::vector<numerics::Parameter> params_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> cached_order_;
};

struct PretrainResult {
    TrainState state;
    std::vector<LogRow> log;
};

PretrainResult pretrain(const std::vector<synth::Utterance>& corpus,
                        const labeler::LabelBundle& labels,
                        const encoder::EncoderConfig& encoder_config,
                        objective::PlacementPlan plan, const TrainConfig& config);

// CSV: step,total,<tag>... with one column per placement ("K32@L6").
std::string loss_csv_header(const objective::PlacementPlan& plan);
std::string loss_csv_row(const LogRow& row);

inline constexpr std::uint8_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
TrainState parse_checkpoint(std::span<const std::uint8_t> bytes);

// Order-sensitive FNV-1a digest over parameter names and value bits.
std::uint64_t parameter_digest(const std::vector<numerics::Parameter>& params);

} // namespace mplbench::pretrain
