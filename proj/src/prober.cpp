#include "mplbench/prober.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mplbench/masking.hpp"
#include "mplbench/numerics/ops.hpp"
#include "mplbench/numerics/random.hpp"

namespace mplbench::probe {

namespace {

using numerics::Matrix;
using numerics::Rng;
using numerics::Tensor;

constexpr std::uint64_t kProbeEpochStream = 0x70657063;
constexpr std::uint64_t kProbeHeadStream = 0x70686561;

std::string mode_name(WeightMode mode) {
    switch (mode) {
    case WeightMode::learned:
        return "learned";
    case WeightMode::pinned:
        return "pinned";
    case WeightMode::single_layer:
        return "single_layer";
    }
    return "?";
}

WeightMode mode_from_name(const std::string& name) {
    if (name == "learned") {
        return WeightMode::learned;
    }
    if (name == "pinned") {
        return WeightMode::pinned;
    }
    if (name == "single_layer") {
        return WeightMode::single_layer;
    }
    throw std::invalid_argument("unknown probe weight mode '" + name + "'");
}

void normalize_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        const double mu = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(m.cols);
        double var = 0.0;
        for (const double v : row) {
            var += (v - mu) * (v - mu);
        }
        var /= static_cast<double>(m.cols);
        const double inv = 1.0 / std::sqrt(var + numerics::kLayerNormEps);
        for (double& v : row) {
            v = (v - mu) * inv;
        }
    }
}

struct Adam {
    std::vector<double> m;
    std::vector<double> v;
};

void adam_update(Tensor& param, Adam& state, const ProbeConfig& cfg, std::size_t t) {
    if (!param.has_grad()) {
        return;
    }
    auto grad = param.grad();
    auto values = param.mutable_data();
    if (state.m.empty()) {
        state.m.assign(values.size(), 0.0);
        state.v.assign(values.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < values.size(); ++k) {
        const double g = grad[k];
        state.m[k] = cfg.adam_beta1 * state.m[k] + (1.0 - cfg.adam_beta1) * g;
        state.v[k] = cfg.adam_beta2 * state.v[k] + (1.0 - cfg.adam_beta2) * g * g;
        const double m_hat = state.m[k] / bc1;
        const double v_hat = state.v[k] / bc2;
        values[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
    param.zero_grad();
}

std::vector<double> softmax_values(std::span<const double> x) {
    const double top = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - top);
        total += out[i];
    }
    for (auto& v : out) {
        v /= total;
    }
    return out;
}

void check_compatible(const FeatureSet& fs, const ProbeTask& task, const char* which) {
    if (fs.layers.empty() || fs.num_rows() == 0) {
        throw std::invalid_argument(std::string("train_probe: empty ") + which + " features");
    }
    for (const auto& layer : fs.layers) {
        if (layer.rows != fs.num_rows() || layer.cols != fs.layers.front().cols) {
            throw std::invalid_argument(std::string("train_probe: ragged ") + which + " features");
        }
    }
    for (const auto t : fs.targets) {
        if (t >= task.num_classes) {
            throw std::invalid_argument("train_probe: target " + std::to_string(t) +
                                        " out of range for " + std::to_string(task.num_classes) +
                                        " classes");
        }
    }
}

} // namespace

std::string to_string(TaskKind kind) {
    return kind == TaskKind::frame_content ? "frame_content" : "utterance_speaker";
}

TaskKind task_from_string(const std::string& name) {
    if (name == "frame_content") {
        return TaskKind::frame_content;
    }
    if (name == "utterance_speaker") {
        return TaskKind::utterance_speaker;
    }
    throw std::invalid_argument("unknown probe task '" + name + "'");
}

void ProbeConfig::validate() const {
    if (steps == 0 || batch_utterances == 0) {
        throw std::invalid_argument("ProbeConfig: steps and batch_utterances must be positive");
    }
    if (!(learning_rate > 0.0) || !(adam_eps > 0.0)) {
        throw std::invalid_argument("ProbeConfig: learning_rate and adam_eps must be positive");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("ProbeConfig: Adam betas must lie in [0, 1)");
    }
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_utterances", c.batch_utterances},
                       {"learning_rate", c.learning_rate},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"seed", c.seed},
                       {"mode", mode_name(c.mode)},
                       {"layer", c.layer}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
    const ProbeConfig d;
    c.steps = j.value("steps", d.steps);
    c.batch_utterances = j.value("batch_utterances", d.batch_utterances);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.seed = j.value("seed", d.seed);
    c.mode = mode_from_name(j.value("mode", mode_name(d.mode)));
    c.layer = j.value("layer", d.layer);
}

std::vector<Matrix> extract_features(const encoder::EncoderModel& model, const Matrix& frames) {
    numerics::NoGradGuard guard;
    const auto acts = encoder::encode(model, frames, masking::MaskSet{});
    std::vector<Matrix> out;
    out.reserve(acts.layers.size());
    for (const auto& layer : acts.layers) {
        out.push_back(layer.to_matrix());
    }
    return out;
}

FeatureSet build_features(const encoder::EncoderModel& model,
                          const std::vector<synth::Utterance>& utterances, TaskKind kind) {
    const std::size_t n_layers = model.config.num_layers + 1;
    const std::size_t d = model.config.model_dim;
    std::size_t rows = 0;
    for (const auto& utt : utterances) {
        rows += kind == TaskKind::frame_content ? utt.num_frames() : 1;
    }

    FeatureSet fs;
    fs.layers.assign(n_layers, Matrix(rows, d));
    fs.targets.reserve(rows);
    fs.offsets.reserve(utterances.size() + 1);
    fs.offsets.push_back(0);
    std::size_t at = 0;
    for (const auto& utt : utterances) {
        auto feats = extract_features(model, utt.features);
        for (std::size_t l = 0; l < n_layers; ++l) {
            normalize_rows(feats[l]);
            if (kind == TaskKind::frame_content) {
                std::copy(feats[l].data.begin(), feats[l].data.end(),
                          fs.layers[l].data.begin() + static_cast<std::ptrdiff_t>(at * d));
            } else {
                auto dst = fs.layers[l].row(at);
                for (std::size_t t = 0; t < feats[l].rows; ++t) {
                    for (std::size_t c = 0; c < d; ++c) {
                        dst[c] += feats[l](t, c);
                    }
                }
                for (auto& v : dst) {
                    v /= static_cast<double>(feats[l].rows);
                }
            }
        }
        if (kind == TaskKind::frame_content) {
            fs.targets.insert(fs.targets.end(), utt.content_labels.begin(), utt.content_labels.end());
            at += utt.num_frames();
        } else {
            fs.targets.push_back(utt.speaker_id);
            at += 1;
        }
        fs.offsets.push_back(at);
    }
    return fs;
}

ProbeResult train_probe_on_features(const FeatureSet& train, const FeatureSet& test,
                                    const ProbeTask& task, const ProbeConfig& config) {
    config.validate();
    if (task.num_classes < 2) {
        throw std::invalid_argument("train_probe: need at least 2 classes");
    }
    check_compatible(train, task, "train");
    check_compatible(test, task, "test");
    const std::size_t n_layers = train.num_layers();
    const std::size_t d = train.layers.front().cols;
    if (test.num_layers() != n_layers || test.layers.front().cols != d) {
        throw std::invalid_argument("train_probe: train and test features disagree in shape");
    }
    if (config.mode != WeightMode::learned && config.layer >= n_layers) {
        throw std::invalid_argument("train_probe: layer " + std::to_string(config.layer) +
                                    " out of range for " + std::to_string(n_layers) + " layers");
    }

    const std::size_t k = task.num_classes;
    Rng head_rng(numerics::derive_seed(config.seed, kProbeHeadStream));
    std::vector<double> w0(d * k);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& v : w0) {
        v = w_std * head_rng.normal();
    }
    Tensor head_w = Tensor::from_data({d, k}, std::move(w0), true);
    Tensor head_b = Tensor::zeros({k}, true);
    Tensor scalars = Tensor::zeros({1, n_layers}, config.mode == WeightMode::learned);
    if (config.mode == WeightMode::pinned) {
        scalars = Tensor::from_data({1, n_layers}, std::vector<double>(n_layers, 0.0));
        scalars.mutable_data()[config.layer] = 1.0;
    }
    Adam adam_w;
    Adam adam_b;
    Adam adam_s;

    const std::size_t groups = train.num_groups();
    std::vector<std::size_t> order;
    std::size_t cached_epoch = static_cast<std::size_t>(-1);

    ProbeResult result;
    result.task = task.kind;
    result.config = config;
    result.log.reserve(config.steps);

    for (std::size_t step = 0; step < config.steps; ++step) {
        // Batch slots walk an endless sequence of per-epoch permutations.
        std::vector<std::size_t> batch;
        batch.reserve(config.batch_utterances);
        for (std::size_t s = 0; s < config.batch_utterances; ++s) {
            const std::size_t slot = step * config.batch_utterances + s;
            const std::size_t epoch = slot / groups;
            if (epoch != cached_epoch) {
                order.resize(groups);
                std::iota(order.begin(), order.end(), 0);
                Rng rng(numerics::derive_seed(config.seed, kProbeEpochStream, epoch));
                rng.shuffle(order);
                cached_epoch = epoch;
            }
            batch.push_back(order[slot % groups]);
        }

        std::size_t n = 0;
        for (const auto g : batch) {
            n += train.offsets[g + 1] - train.offsets[g];
        }
        std::vector<std::uint32_t> targets;
        targets.reserve(n);
        for (const auto g : batch) {
            targets.insert(targets.end(),
                           train.targets.begin() + static_cast<std::ptrdiff_t>(train.offsets[g]),
                           train.targets.begin() + static_cast<std::ptrdiff_t>(train.offsets[g + 1]));
        }
        auto gather = [&](std::size_t layer) {
            std::vector<double> data;
            data.reserve(n * d);
            const auto& src = train.layers[layer].data;
            for (const auto g : batch) {
                data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(train.offsets[g] * d),
                            src.begin() + static_cast<std::ptrdiff_t>(train.offsets[g + 1] * d));
            }
            return Tensor::from_data({n, d}, std::move(data));
        };

        Tensor mixed;
        std::vector<double> weights;
        if (config.mode == WeightMode::single_layer) {
            mixed = gather(config.layer);
            weights.assign(n_layers, 0.0);
            weights[config.layer] = 1.0;
        } else {
            const Tensor w = config.mode == WeightMode::learned ? numerics::softmax(scalars) : scalars;
            weights.assign(w.data().begin(), w.data().end());
            for (std::size_t l = 0; l < n_layers; ++l) {
                const Tensor term = numerics::scale_by(gather(l), numerics::slice_cols(w, l, 1));
                mixed = l == 0 ? term : numerics::add(mixed, term);
            }
        }
        const Tensor logits = numerics::add_rowwise(numerics::matmul(mixed, head_w), head_b);
        const Tensor loss = numerics::cross_entropy(logits, targets);
        if (!std::isfinite(loss.item())) {
            throw std::domain_error("train_probe: non-finite loss at step " + std::to_string(step + 1));
        }
        numerics::backward(loss);
        adam_update(head_w, adam_w, config, step + 1);
        adam_update(head_b, adam_b, config, step + 1);
        if (config.mode == WeightMode::learned) {
            adam_update(scalars, adam_s, config, step + 1);
        }
        result.log.push_back({step + 1, loss.item(), std::move(weights)});
    }

    if (config.mode == WeightMode::learned) {
        result.layer_weights = softmax_values(scalars.data());
    } else {
        result.layer_weights.assign(n_layers, 0.0);
        result.layer_weights[config.layer] = 1.0;
    }
    result.head_weight = head_w.to_matrix();
    result.head_bias.assign(head_b.data().begin(), head_b.data().end());

    // Test accuracy with the final weights.
    std::size_t correct = 0;
    std::vector<double> row(d);
    std::vector<double> logits(k);
    for (std::size_t r = 0; r < test.num_rows(); ++r) {
        if (config.mode == WeightMode::single_layer) {
            const auto src = test.layers[config.layer].row(r);
            std::copy(src.begin(), src.end(), row.begin());
        } else {
            std::fill(row.begin(), row.end(), 0.0);
            for (std::size_t l = 0; l < n_layers; ++l) {
                const auto src = test.layers[l].row(r);
                for (std::size_t c = 0; c < d; ++c) {
                    row[c] += result.layer_weights[l] * src[c];
                }
            }
        }
        for (std::size_t j = 0; j < k; ++j) {
            double acc = result.head_bias[j];
            for (std::size_t c = 0; c < d; ++c) {
                acc += row[c] * result.head_weight(c, j);
            }
            logits[j] = acc;
        }
        const auto best = static_cast<std::uint32_t>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        correct += best == test.targets[r] ? 1 : 0;
    }
    result.metric = static_cast<double>(correct) / static_cast<double>(test.num_rows());
    return result;
}

ProbeResult train_probe(const encoder::EncoderModel& model, const ProbeTask& task,
                        const synth::Corpus& corpus, const ProbeConfig& config) {
    const std::size_t expected = task.kind == TaskKind::frame_content
                                     ? corpus.spec.num_content_units
                                     : corpus.spec.num_speakers;
    if (task.num_classes != expected) {
        throw std::invalid_argument("train_probe: task has " + std::to_string(task.num_classes) +
                                    " classes but the corpus defines " + std::to_string(expected));
    }
    const auto train = build_features(model, corpus.train, task.kind);
    const auto test = build_features(model, corpus.test, task.kind);
    return train_probe_on_features(train, test, task, config);
}

double weight_center_of_mass(const std::vector<double>& weights) {
    if (weights.size() < 2) {
        throw std::invalid_argument("weight_center_of_mass: need at least 2 layers");
    }
    double acc = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        acc += static_cast<double>(l) * weights[l];
    }
    return acc / static_cast<double>(weights.size() - 1);
}

double weight_entropy(const std::vector<double>& weights) {
    double h = 0.0;
    for (const double w : weights) {
        if (w > 0.0) {
            h -= w * std::log(w);
        }
    }
    return h;
}

void to_json(nlohmann::json& j, const ProbeResult& r) {
    auto log = nlohmann::json::array();
    for (const auto& row : r.log) {
        log.push_back({{"step", row.step}, {"loss", row.loss}});
    }
    j = nlohmann::json{{"task", to_string(r.task)},
                       {"metric", r.metric},
                       {"weights", r.layer_weights},
                       {"head", {{"rows", r.head_weight.rows},
                                 {"cols", r.head_weight.cols},
                                 {"weight", r.head_weight.data},
                                 {"bias", r.head_bias}}},
                       {"config", r.config},
                       {"seed", r.config.seed},
                       {"log", log}};
}

ProbeResult probe_result_from_json(const nlohmann::json& j) {
    ProbeResult r;
    r.task = task_from_string(j.at("task").get<std::string>());
    r.metric = j.at("metric").get<double>();
    r.layer_weights = j.at("weights").get<std::vector<double>>();
    if (j.contains("head")) {
        const auto& h = j.at("head");
        r.head_weight = Matrix(h.at("rows").get<std::size_t>(), h.at("cols").get<std::size_t>(),
                               h.at("weight").get<std::vector<double>>());
        r.head_bias = h.at("bias").get<std::vector<double>>();
    }
    if (j.contains("config")) {
        r.config = j.at("config").get<ProbeConfig>();
    }
    if (j.contains("log")) {
        for (const auto& row : j.at("log")) {
            r.log.push_back({row.at("step").get<std::size_t>(), row.at("loss").get<double>(), {}});
        }
    }
    return r;
}

} // namespace mplbench::probe
