#include "mplbench/encoder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mplbench/numerics/ops.hpp"

namespace mplbench::encoder {

namespace {

using namespace mplbench::numerics;

constexpr double kPositionAmplitude = 0.5;

Tensor normal_param(Rng& rng, Shape shape, double stddev) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) {
        v = stddev * rng.normal();
    }
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor constant_param(Shape shape, double value) {
    std::vector<double> data(shape_numel(shape), value);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

// Learned table, initialized with the sinusoidal pattern so that attention can
// use relative position from the first step.
Tensor sinusoidal_param(std::size_t frames, std::size_t dim, double amplitude) {
    std::vector<double> data(frames * dim);
    for (std::size_t pos = 0; pos < frames; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                      static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * rate;
            data[pos * dim + i] = amplitude * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return Tensor::from_data({frames, dim}, std::move(data), true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowwise(matmul(x, w), b);
}

Tensor dropout(const Tensor& x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) {
        m = rng->uniform() < rate ? 0.0 : keep_scale;
    }
    return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

Tensor self_attention(const Block& blk, const Tensor& h, std::size_t num_heads) {
    const Tensor q = linear(h, blk.wq, blk.bq);
    const Tensor k = linear(h, blk.wk, blk.bk);
    const Tensor v = linear(h, blk.wv, blk.bv);
    const std::size_t head_dim = q.dim(1) / num_heads;
    std::vector<Tensor> heads;
    heads.reserve(num_heads);
    for (std::size_t i = 0; i < num_heads; ++i) {
        const std::size_t begin = i * head_dim;
        heads.push_back(attention(slice_cols(q, begin, head_dim), slice_cols(k, begin, head_dim),
                                  slice_cols(v, begin, head_dim)));
    }
    const Tensor merged = num_heads == 1 ? heads.front() : concat_cols(heads);
    return linear(merged, blk.wo, blk.bo);
}

} // namespace

void EncoderConfig::validate() const {
    auto fail = [](const std::string& msg) {
        throw std::invalid_argument("EncoderConfig: " + msg);
    };
    if (num_layers < 2) {
        fail("num_layers must be >= 2");
    }
    if (model_dim == 0 || num_heads == 0 || ffn_dim == 0 || input_dim == 0 || max_frames == 0) {
        fail("dimensions must be positive");
    }
    if (model_dim % num_heads != 0) {
        fail("model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
             std::to_string(num_heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        fail("dropout must lie in [0, 1)");
    }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"num_layers", c.num_layers}, {"model_dim", c.model_dim},
                       {"num_heads", c.num_heads},   {"ffn_dim", c.ffn_dim},
                       {"input_dim", c.input_dim},   {"max_frames", c.max_frames},
                       {"dropout", c.dropout},       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    const EncoderConfig d;
    c.num_layers = j.value("num_layers", d.num_layers);
    c.model_dim = j.value("model_dim", d.model_dim);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
    c.input_dim = j.value("input_dim", d.input_dim);
    c.max_frames = j.value("max_frames", d.max_frames);
    c.dropout = j.value("dropout", d.dropout);
    c.seed = j.value("seed", d.seed);
}

std::size_t parameter_count(const EncoderConfig& c) {
    const std::size_t d = c.model_dim;
    const std::size_t f = c.ffn_dim;
    const std::size_t per_block = 4 * d * d + 2 * d * f + 9 * d + f;
    return c.input_dim * d + d + c.max_frames * d + d + c.num_layers * per_block + 2 * d;
}

std::vector<Parameter> EncoderModel::parameters() const {
    std::vector<Parameter> out{{"input.weight", input_weight},
                               {"input.bias", input_bias},
                               {"positions", positions},
                               {"mask_embedding", mask_embedding}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const Block& b = blocks[i];
        const std::string p = "blocks." + std::to_string(i) + ".";
        out.push_back({p + "ln1.gain", b.ln1_gain});
        out.push_back({p + "ln1.bias", b.ln1_bias});
        out.push_back({p + "attn.wq", b.wq});
        out.push_back({p + "attn.bq", b.bq});
        out.push_back({p + "attn.wk", b.wk});
        out.push_back({p + "attn.bk", b.bk});
        out.push_back({p + "attn.wv", b.wv});
        out.push_back({p + "attn.bv", b.bv});
        out.push_back({p + "attn.wo", b.wo});
        out.push_back({p + "attn.bo", b.bo});
        out.push_back({p + "ln2.gain", b.ln2_gain});
        out.push_back({p + "ln2.bias", b.ln2_bias});
        out.push_back({p + "ffn.w1", b.w1});
        out.push_back({p + "ffn.b1", b.b1});
        out.push_back({p + "ffn.w2", b.w2});
        out.push_back({p + "ffn.b2", b.b2});
    }
    out.push_back({"final_ln.gain", final_gain});
    out.push_back({"final_ln.bias", final_bias});
    return out;
}

EncoderModel init_encoder(const EncoderConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0x656e63));
    const std::size_t d = config.model_dim;
    const std::size_t f = config.ffn_dim;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(config.input_dim));
    const double d_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double f_std = 1.0 / std::sqrt(static_cast<double>(f));
    // Residual branch outputs are shrunk with depth.
    const double out_std = d_std / std::sqrt(2.0 * static_cast<double>(config.num_layers));

    EncoderModel m;
    m.config = config;
    m.input_weight = normal_param(rng, {config.input_dim, d}, in_std);
    m.input_bias = constant_param({d}, 0.0);
    m.positions = sinusoidal_param(config.max_frames, d, kPositionAmplitude);
    m.mask_embedding = normal_param(rng, {d}, 0.1);
    m.blocks.reserve(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        Block b;
        b.ln1_gain = constant_param({d}, 1.0);
        b.ln1_bias = constant_param({d}, 0.0);
        b.wq = normal_param(rng, {d, d}, d_std);
        b.bq = constant_param({d}, 0.0);
        b.wk = normal_param(rng, {d, d}, d_std);
        b.bk = constant_param({d}, 0.0);
        b.wv = normal_param(rng, {d, d}, d_std);
        b.bv = constant_param({d}, 0.0);
        b.wo = normal_param(rng, {d, d}, out_std);
        b.bo = constant_param({d}, 0.0);
        b.ln2_gain = constant_param({d}, 1.0);
        b.ln2_bias = constant_param({d}, 0.0);
        b.w1 = normal_param(rng, {d, f}, d_std);
        b.b1 = constant_param({f}, 0.0);
        b.w2 = normal_param(rng, {f, d}, f_std / std::sqrt(2.0 * static_cast<double>(config.num_layers)));
        b.b2 = constant_param({d}, 0.0);
        m.blocks.push_back(std::move(b));
    }
    m.final_gain = constant_param({d}, 1.0);
    m.final_bias = constant_param({d}, 0.0);
    return m;
}

LayerActivations encode(const EncoderModel& model, const Matrix& frames,
                        const masking::MaskSet& mask, const EncodeOptions& options) {
    const auto& cfg = model.config;
    const std::size_t t = frames.rows;
    if (t == 0) {
        throw std::invalid_argument("encode: empty utterance");
    }
    if (t > cfg.max_frames) {
        throw std::invalid_argument("encode: " + std::to_string(t) + " frames exceed max_frames " +
                                    std::to_string(cfg.max_frames));
    }
    if (frames.cols != cfg.input_dim) {
        throw std::invalid_argument("encode: frame width " + std::to_string(frames.cols) +
                                    " does not match input_dim " + std::to_string(cfg.input_dim));
    }
    for (const auto idx : mask.indices) {
        if (idx >= t) {
            throw std::out_of_range("encode: mask index " + std::to_string(idx) + " >= " +
                                    std::to_string(t) + " frames");
        }
    }

    std::vector<std::size_t> positions(t);
    std::iota(positions.begin(), positions.end(), 0);

    Tensor x = linear(Tensor::from_matrix(frames), model.input_weight, model.input_bias);
    if (!mask.empty()) {
        x = replace_rows(x, mask.indices, model.mask_embedding);
    }
    x = add(x, embedding(model.positions, positions));

    LayerActivations out;
    out.layers.reserve(cfg.num_layers + 1);
    out.layers.push_back(x);
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        const Block& blk = model.blocks[l];
        const Tensor attn = self_attention(blk, layer_norm(x, blk.ln1_gain, blk.ln1_bias),
                                           cfg.num_heads);
        x = add(x, dropout(attn, cfg.dropout, options.dropout_rng));
        const Tensor hidden =
            gelu(linear(layer_norm(x, blk.ln2_gain, blk.ln2_bias), blk.w1, blk.b1));
        x = add(x, dropout(linear(hidden, blk.w2, blk.b2), cfg.dropout, options.dropout_rng));
        if (l + 1 == model.blocks.size()) {
            out.layers.push_back(layer_norm(x, model.final_gain, model.final_bias));
        } else {
            out.layers.push_back(x);
        }
    }
    return out;
}

} // namespace mplbench::encoder
