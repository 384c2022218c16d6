#pragma once

// Multi-position masked prediction loss.
//
// A placement attaches a linear prediction head (d x K weight, K bias) to one
// encoder layer and trains it against size-K pseudo-labels on masked frames.
// The total loss is the unweighted sum over placements.
//
// Depth fractions map to layers by round_half_up(loc * L), clamped to [1, L].
// A triple plan puts the smallest codebook at layer L, the largest at
// loc_to_layer(loc_big, L), and the middle one halfway between (rounded up).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mplbench/encoder.hpp"
#include "mplbench/labeler.hpp"
#include "mplbench/masking.hpp"
#include "mplbench/numerics/tensor.hpp"

namespace mplbench::objective {

using numerics::Parameter;
using numerics::Tensor;

struct PredictionHead {
    Tensor weight; // d x K
    Tensor bias;   // K
};

struct Placement {
    double loc = 1.0;
    std::size_t layer = 0;
    std::size_t codebook_size = 0;
    PredictionHead head;

    // "K32@L6"
    std::string tag() const;
};

enum class PlanMode { single, triple };

struct PlacementPlan {
    PlanMode mode = PlanMode::single;
    std::vector<Placement> placements; // shallow to deep

    std::vector<Parameter> parameters() const;
    // Echo without head weights; used in manifests and configs.
    nlohmann::json describe() const;
};

std::size_t loc_to_layer(double loc, std::size_t num_layers);

// Head weights are initialized from `seed` when model_dim > 0; passing
// model_dim = 0 leaves heads undefined (layout-only plans).
PlacementPlan plan_single(std::size_t num_layers, std::size_t codebook_size,
                          std::size_t model_dim = 0, std::uint64_t seed = 0);
PlacementPlan plan_triple(double loc_big, std::size_t num_layers,
                          const std::vector<std::size_t>& sizes, std::size_t model_dim = 0,
                          std::uint64_t seed = 0);

void init_heads(PlacementPlan& plan, std::size_t model_dim, std::uint64_t seed);

// Rebuilds a plan (without head weights) from describe() output and checks
// that the recorded layers agree with the placement rules.
PlacementPlan plan_from_description(const nlohmann::json& j, std::size_t num_layers);

// Mean cross-entropy of the head's logits against labels over masked frames.
Tensor masked_ce(const Tensor& activations, const PredictionHead& head,
                 std::span<const std::uint32_t> labels, const masking::MaskSet& mask);

struct LossTerm {
    std::string tag;
    double value = 0.0;
};

struct TotalLoss {
    Tensor total;
    std::vector<LossTerm> terms;
};

// `labels_by_size` returns the per-frame labels of this utterance for a
// codebook size.
TotalLoss total_loss(const PlacementPlan& plan, const encoder::LayerActivations& activations,
                     const std::function<std::span<const std::uint32_t>(std::size_t)>& labels_by_size,
                     const masking::MaskSet& mask);

TotalLoss total_loss(const PlacementPlan& plan, const encoder::LayerActivations& activations,
                     const labeler::LabelBundle& bundle, std::size_t utterance_index,
                     const masking::MaskSet& mask);

} // namespace mplbench::objective
