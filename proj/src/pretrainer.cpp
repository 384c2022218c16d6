#include "mplbench/pretrainer.hpp"

#include <bit>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mplbench/io/container.hpp"
#include "mplbench/numerics/ops.hpp"
#include "mplbench/numerics/random.hpp"

namespace mplbench::pretrain {

namespace {

using numerics::derive_seed;
using numerics::Parameter;
using numerics::Rng;
using numerics::Tensor;

constexpr io::Magic kCheckpointMagic{'M', 'P', 'L', 'C'};

constexpr std::uint64_t kEpochStream = 0x65706f6368;
constexpr std::uint64_t kMaskStream = 0x6d61736b;
constexpr std::uint64_t kDropoutStream = 0x64726f70;
constexpr std::uint64_t kHeadStream = 0x68656164;

std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

} // namespace

std::size_t TrainConfig::effective_warmup() const {
    return warmup_steps ? *warmup_steps : steps / 10;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
    if (batch_utterances < 1) {
        fail("batch_utterances must be positive");
    }
    if (!(learning_rate > 0.0)) {
        fail("learning_rate must be positive");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        fail("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        fail("adam_eps must be positive");
    }
    if (effective_warmup() > steps) {
        fail("warmup_steps exceeds steps");
    }
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
        fail("grad_clip_norm must be positive");
    }
    if (log_every < 1) {
        fail("log_every must be positive");
    }
    mask.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_utterances", c.batch_utterances},
                       {"learning_rate", c.learning_rate},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       // null means "10% of steps" so the echo survives a change of steps
                       {"warmup_steps", c.warmup_steps ? nlohmann::json(*c.warmup_steps)
                                                       : nlohmann::json(nullptr)},
                       {"grad_clip_norm", c.grad_clip_norm ? nlohmann::json(*c.grad_clip_norm)
                                                           : nlohmann::json(nullptr)},
                       {"seed", c.seed},
                       {"log_every", c.log_every},
                       {"mask",
                        {{"start_prob", c.mask.start_prob},
                         {"span_length", c.mask.span_length},
                         {"require_nonempty", c.mask.require_nonempty}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.steps = j.value("steps", d.steps);
    c.batch_utterances = j.value("batch_utterances", d.batch_utterances);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    if (j.contains("warmup_steps") && !j.at("warmup_steps").is_null()) {
        c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    } else {
        c.warmup_steps.reset();
    }
    if (j.contains("grad_clip_norm")) {
        const auto& g = j.at("grad_clip_norm");
        c.grad_clip_norm = g.is_null() ? std::nullopt : std::optional<double>(g.get<double>());
    } else {
        c.grad_clip_norm = d.grad_clip_norm;
    }
    c.seed = j.value("seed", d.seed);
    c.log_every = j.value("log_every", d.log_every);
    c.mask = d.mask;
    if (j.contains("mask")) {
        const auto& m = j.at("mask");
        c.mask.start_prob = m.value("start_prob", d.mask.start_prob);
        c.mask.span_length = m.value("span_length", d.mask.span_length);
        c.mask.require_nonempty = m.value("require_nonempty", d.mask.require_nonempty);
    }
}

std::vector<Parameter> TrainState::parameters() const {
    auto params = model.parameters();
    for (auto& p : plan.parameters()) {
        params.push_back(std::move(p));
    }
    return params;
}

TrainState init_train_state(const encoder::EncoderConfig& encoder_config,
                            objective::PlacementPlan plan, const TrainConfig& config) {
    config.validate();
    TrainState state;
    state.model = encoder::init_encoder(encoder_config);
    state.plan = std::move(plan);
    for (const auto& p : state.plan.placements) {
        if (p.layer > encoder_config.num_layers) {
            throw std::invalid_argument("placement " + p.tag() + " exceeds encoder depth");
        }
    }
    objective::init_heads(state.plan, encoder_config.model_dim,
                          derive_seed(encoder_config.seed, kHeadStream));
    state.config = config;
    for (const auto& p : state.parameters()) {
        state.moments.push_back({std::vector<double>(p.tensor.numel(), 0.0),
                                 std::vector<double>(p.tensor.numel(), 0.0)});
    }
    return state;
}

TrainingDiverged::TrainingDiverged(std::size_t step, double value)
    : std::runtime_error("training diverged at step " + std::to_string(step) +
                         ": non-finite loss " + std::to_string(value)),
      step_(step) {}

Trainer::Trainer(const std::vector<synth::Utterance>& corpus, const labeler::LabelBundle& labels,
                 TrainState state)
    : corpus_(corpus), labels_(labels), state_(std::move(state)) {
    if (corpus_.empty()) {
        throw std::invalid_argument("Trainer: empty corpus");
    }
    if (labels_.utterance_ids.size() != corpus_.size()) {
        throw std::invalid_argument("Trainer: label bundle covers " +
                                    std::to_string(labels_.utterance_ids.size()) +
                                    " utterances, corpus has " + std::to_string(corpus_.size()));
    }
    for (std::size_t i = 0; i < corpus_.size(); ++i) {
        if (labels_.utterance_ids[i] != corpus_[i].utterance_id) {
            throw std::invalid_argument("Trainer: label bundle utterance order differs from corpus");
        }
    }
    for (const auto& p : state_.plan.placements) {
        labels_.size_index_of(p.codebook_size);
    }
    state_.config.validate();
    params_ = state_.parameters();
    if (state_.moments.size() != params_.size()) {
        throw std::invalid_argument("Trainer: optimizer moments do not match parameters");
    }
}

const std::vector<std::size_t>& Trainer::epoch_order(std::size_t epoch) {
    if (epoch != cached_epoch_) {
        cached_order_.resize(corpus_.size());
        std::iota(cached_order_.begin(), cached_order_.end(), 0);
        Rng rng(derive_seed(state_.config.seed, kEpochStream, epoch));
        rng.shuffle(cached_order_);
        cached_epoch_ = epoch;
    }
    return cached_order_;
}

LogRow Trainer::step() {
    const auto& cfg = state_.config;
    const std::size_t s = state_.step;
    const std::size_t batch = cfg.batch_utterances;
    const double inv_batch = 1.0 / static_cast<double>(batch);

    for (auto& p : params_) {
        p.tensor.zero_grad();
    }

    LogRow row;
    row.step = s + 1;
    for (const auto& p : state_.plan.placements) {
        row.terms.push_back({p.tag(), 0.0});
    }
    for (std::size_t slot = 0; slot < batch; ++slot) {
        const std::size_t global = s * batch + slot;
        const std::size_t utt_index = epoch_order(global / corpus_.size())[global % corpus_.size()];
        const auto& utt = corpus_[utt_index];

        Rng mask_rng(derive_seed(cfg.seed, kMaskStream, global));
        const auto mask = masking::sample_mask(utt.num_frames(), cfg.mask, mask_rng);
        if (mask.empty()) {
            continue;
        }
        Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream, global));
        const auto acts = encoder::encode(state_.model, utt.features, mask, {&dropout_rng});
        const auto loss = objective::total_loss(state_.plan, acts, labels_, utt_index, mask);
        const double value = loss.total.item();
        if (!std::isfinite(value)) {
            throw TrainingDiverged(s + 1, value);
        }
        row.total += value * inv_batch;
        for (std::size_t i = 0; i < loss.terms.size(); ++i) {
            row.terms[i].value += loss.terms[i].value * inv_batch;
        }
        numerics::backward(numerics::scale(loss.total, inv_batch));
    }

    double sq = 0.0;
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (const double g : p.tensor.grad()) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        throw TrainingDiverged(s + 1, norm);
    }
    row.grad_norm = norm;
    const double clip_scale =
        (cfg.grad_clip_norm && norm > *cfg.grad_clip_norm) ? *cfg.grad_clip_norm / norm : 1.0;

    const std::size_t warmup = cfg.effective_warmup();
    const double lr = warmup > 0 && s < warmup
                          ? cfg.learning_rate * static_cast<double>(s + 1) / static_cast<double>(warmup)
                          : cfg.learning_rate;
    row.learning_rate = lr;
    const double t = static_cast<double>(s + 1);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.tensor.has_grad()) {
            continue;
        }
        const auto grad = p.tensor.grad();
        auto values = p.tensor.mutable_data();
        auto& mom = state_.moments[i];
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad[k] * clip_scale;
            mom.m[k] = cfg.adam_beta1 * mom.m[k] + (1.0 - cfg.adam_beta1) * g;
            mom.v[k] = cfg.adam_beta2 * mom.v[k] + (1.0 - cfg.adam_beta2) * g * g;
            const double m_hat = mom.m[k] / bc1;
            const double v_hat = mom.v[k] / bc2;
            values[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
        p.tensor.zero_grad();
    }
    state_.step = s + 1;
    return row;
}

void Trainer::run_until(std::size_t target_step, const std::function<void(const LogRow&)>& on_log) {
    while (state_.step < target_step) {
        const LogRow row = step();
        if (on_log && (row.step % state_.config.log_every == 0)) {
            on_log(row);
        }
    }
}

PretrainResult pretrain(const std::vector<synth::Utterance>& corpus,
                        const labeler::LabelBundle& labels,
                        const encoder::EncoderConfig& encoder_config,
                        objective::PlacementPlan plan, const TrainConfig& config) {
    Trainer trainer(corpus, labels, init_train_state(encoder_config, std::move(plan), config));
    PretrainResult result;
    trainer.run_until(config.steps, [&](const LogRow& row) { result.log.push_back(row); });
    result.state = std::move(trainer.state());
    return result;
}

std::string loss_csv_header(const objective::PlacementPlan& plan) {
    std::string out = "step,total";
    for (const auto& p : plan.placements) {
        out += "," + p.tag();
    }
    return out + "\n";
}

std::string loss_csv_row(const LogRow& row) {
    std::string out = std::to_string(row.step) + "," + format_double(row.total);
    for (const auto& t : row.terms) {
        out += "," + format_double(t.value);
    }
    return out + "\n";
}

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
    io::ContainerWriter writer(kCheckpointMagic, kCheckpointVersion);
    const auto params = state.parameters();
    auto index = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        index.push_back({{"name", params[i].name}, {"shape", params[i].tensor.shape()}});
        const auto values = params[i].tensor.data();
        writer.add_f64("param/" + params[i].name, values);
        writer.add_f64("adam_m/" + params[i].name, state.moments.at(i).m);
        writer.add_f64("adam_v/" + params[i].name, state.moments.at(i).v);
    }
    writer.set_manifest({{"format_version", kCheckpointVersion},
                         {"encoder", state.model.config},
                         {"plan", state.plan.describe()},
                         {"train", state.config},
                         {"step", state.step},
                         // The loop's streams are derived from (seed, step); this is the
                         // whole generator state.
                         {"rng", {{"seed", state.config.seed}, {"step", state.step}}},
                         {"parameters", index}});
    return writer.serialize();
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_checkpoint(state));
}

TrainState parse_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto reader = io::ContainerReader::parse(bytes, kCheckpointMagic, kCheckpointVersion);
    const auto& m = reader.manifest();
    try {
        TrainState state;
        const auto enc_cfg = m.at("encoder").get<encoder::EncoderConfig>();
        state.model = encoder::init_encoder(enc_cfg);
        state.plan = objective::plan_from_description(m.at("plan"), enc_cfg.num_layers);
        objective::init_heads(state.plan, enc_cfg.model_dim, derive_seed(enc_cfg.seed, kHeadStream));
        state.config = m.at("train").get<TrainConfig>();
        state.step = m.at("step").get<std::size_t>();

        auto params = state.parameters();
        const auto& index = m.at("parameters");
        if (index.size() != params.size()) {
            throw std::runtime_error("checkpoint: parameter count mismatch");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto name = index[i].at("name").get<std::string>();
            if (name != params[i].name) {
                throw std::runtime_error("checkpoint: expected parameter '" + params[i].name +
                                         "', found '" + name + "'");
            }
            const auto values = reader.f64("param/" + name);
            if (values.size() != params[i].tensor.numel()) {
                throw std::runtime_error("checkpoint: size mismatch for '" + name + "'");
            }
            std::copy(values.begin(), values.end(), params[i].tensor.mutable_data().begin());
            AdamMoments mom{reader.f64("adam_m/" + name), reader.f64("adam_v/" + name)};
            if (mom.m.size() != values.size() || mom.v.size() != values.size()) {
                throw std::runtime_error("checkpoint: optimizer moment size mismatch for '" + name + "'");
            }
            state.moments.push_back(std::move(mom));
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: malformed manifest: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("checkpoint: invalid content: ") + e.what());
    }
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    return parse_checkpoint(bytes);
}

std::uint64_t parameter_digest(const std::vector<Parameter>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (const auto& p : params) {
        for (const char c : p.name) {
            mix(static_cast<unsigned char>(c));
        }
        for (const double v : p.tensor.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                mix((bits >> (8 * i)) & 0xff);
            }
        }
    }
    return h;
}

} // namespace mplbench::pretrain
