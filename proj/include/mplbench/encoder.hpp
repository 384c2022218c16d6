#pragma once

// Pre-norm transformer encoder over frame features.
//
// Architecture (d = model_dim, f = ffn_dim, F = input_dim, P = max_frames):
//   input projection   F x d weight, d bias
//   positions          P x d learned table
//   mask embedding     d
//   per block          ln1 gain/bias (2d), wq/wk/wv/wo (4 d^2) with biases (4d),
//                      ln2 gain/bias (2d), ffn w1 (d f), b1 (f), w2 (f d), b2 (d)
//   final layer norm   2d
//
// Parameter count: F d + d + P d + d + L (4 d^2 + 2 d f + 9 d + f) + 2 d.
//
// Layer 0 is the projected input with masked rows replaced by the mask
// embedding, plus positions. Layer l in 1..L-1 is the residual stream after
// block l; layer L is the final layer norm applied to the output of block L.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mplbench/masking.hpp"
#include "mplbench/numerics/matrix.hpp"
#include "mplbench/numerics/random.hpp"
#include "mplbench/numerics/tensor.hpp"

namespace mplbench::encoder {

using numerics::Parameter;
using numerics::Tensor;

struct EncoderConfig {
    std::size_t num_layers = 6;
    std::size_t model_dim = 32;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 64;
    std::size_t input_dim = 24;
    std::size_t max_frames = 64;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

std::size_t parameter_count(const EncoderConfig& config);

struct Block {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

struct EncoderModel {
    EncoderConfig config;
    Tensor input_weight, input_bias;
    Tensor positions;
    Tensor mask_embedding;
    std::vector<Block> blocks;
    Tensor final_gain, final_bias;

    // Named views of every trainable tensor, in a fixed order.
    std::vector<Parameter> parameters() const;
};

EncoderModel init_encoder(const EncoderConfig& config);

struct LayerActivations {
    std::vector<Tensor> layers; // L + 1 entries, each T x d

    std::size_t num_layers() const { return layers.size() - 1; }
};

struct EncodeOptions {
    // Dropout is applied only when config.dropout > 0 and a stream is given.
    numerics::Rng* dropout_rng = nullptr;
};

// Throws std::invalid_argument if the frame count exceeds max_frames or the
// feature width differs from input_dim; std::out_of_range for bad mask indices.
LayerActivations encode(const EncoderModel& model, const numerics::Matrix& frames,
                        const masking::MaskSet& mask, const EncodeOptions& options = {});

} // namespace mplbench::encoder
