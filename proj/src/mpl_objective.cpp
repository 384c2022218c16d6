#include "mplbench/mpl_objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mplbench/numerics/ops.hpp"
#include "mplbench/numerics/random.hpp"

namespace mplbench::objective {

namespace {

using namespace mplbench::numerics;

const char* mode_name(PlanMode m) { return m == PlanMode::single ? "single" : "triple"; }

void check_plan(const PlacementPlan& plan, std::size_t num_layers) {
    if (plan.placements.empty()) {
        throw std::invalid_argument("placement plan is empty");
    }
    for (std::size_t i = 1; i < plan.placements.size(); ++i) {
        const auto& prev = plan.placements[i - 1];
        const auto& cur = plan.placements[i];
        if (cur.layer <= prev.layer) {
            throw std::invalid_argument("placement plan: layers collide or are out of order (" +
                                        prev.tag() + ", " + cur.tag() + ")");
        }
        if (cur.codebook_size >= prev.codebook_size) {
            throw std::invalid_argument(
                "placement plan: codebook sizes must shrink with depth (" + prev.tag() + ", " +
                cur.tag() + ")");
        }
    }
    if (plan.placements.back().layer > num_layers) {
        throw std::invalid_argument("placement plan: layer beyond encoder depth");
    }
    if (plan.mode == PlanMode::single &&
        (plan.placements.size() != 1 || plan.placements.front().layer != num_layers)) {
        throw std::invalid_argument("single plan must hold exactly one placement at the final layer");
    }
    if (plan.mode == PlanMode::triple &&
        (plan.placements.size() != 3 || plan.placements.back().layer != num_layers)) {
        throw std::invalid_argument(
            "triple plan must hold three placements with the smallest codebook at the final layer");
    }
}

} // namespace

std::string Placement::tag() const {
    return "K" + std::to_string(codebook_size) + "@L" + std::to_string(layer);
}

std::size_t loc_to_layer(double loc, std::size_t num_layers) {
    if (!(loc > 0.0 && loc <= 1.0)) {
        throw std::invalid_argument("loc_to_layer: loc must lie in (0, 1], got " +
                                    std::to_string(loc));
    }
    if (num_layers < 2) {
        throw std::invalid_argument("loc_to_layer: need at least 2 layers");
    }
    // The slack keeps products such as 0.35 * 10 = 3.4999999999999996 on the
    // intended side of the half-way point.
    const double scaled = loc * static_cast<double>(num_layers);
    const auto rounded = static_cast<long long>(std::floor(scaled + 0.5 + 1e-9));
    return static_cast<std::size_t>(std::clamp<long long>(rounded, 1, static_cast<long long>(num_layers)));
}

std::vector<Parameter> PlacementPlan::parameters() const {
    std::vector<Parameter> out;
    for (const auto& p : placements) {
        out.push_back({"heads." + p.tag() + ".weight", p.head.weight});
        out.push_back({"heads." + p.tag() + ".bias", p.head.bias});
    }
    return out;
}

nlohmann::json PlacementPlan::describe() const {
    auto arr = nlohmann::json::array();
    for (const auto& p : placements) {
        arr.push_back({{"loc", p.loc}, {"layer", p.layer}, {"codebook_size", p.codebook_size}});
    }
    return {{"mode", mode_name(mode)}, {"placements", arr}};
}

void init_heads(PlacementPlan& plan, std::size_t model_dim, std::uint64_t seed) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(model_dim));
    for (std::size_t i = 0; i < plan.placements.size(); ++i) {
        auto& p = plan.placements[i];
        Rng rng(derive_seed(seed, 0x68656164, i));
        std::vector<double> w(model_dim * p.codebook_size);
        for (auto& v : w) {
            v = stddev * rng.normal();
        }
        p.head.weight = Tensor::from_data({model_dim, p.codebook_size}, std::move(w), true);
        p.head.bias = Tensor::zeros({p.codebook_size}, true);
    }
}

PlacementPlan plan_single(std::size_t num_layers, std::size_t codebook_size,
                          std::size_t model_dim, std::uint64_t seed) {
    if (codebook_size < 1) {
        throw std::invalid_argument("plan_single: codebook size must be positive");
    }
    PlacementPlan plan;
    plan.mode = PlanMode::single;
    plan.placements.push_back({1.0, loc_to_layer(1.0, num_layers), codebook_size, {}});
    check_plan(plan, num_layers);
    if (model_dim > 0) {
        init_heads(plan, model_dim, seed);
    }
    return plan;
}

PlacementPlan plan_triple(double loc_big, std::size_t num_layers,
                          const std::vector<std::size_t>& sizes, std::size_t model_dim,
                          std::uint64_t seed) {
    if (sizes.size() != 3 || !(sizes[0] > sizes[1] && sizes[1] > sizes[2]) || sizes[2] < 1) {
        throw std::invalid_argument("plan_triple: need three strictly descending codebook sizes");
    }
    if (!(loc_big < 1.0)) {
        throw std::invalid_argument("plan_triple: loc of the largest codebook must be below 1");
    }
    const std::size_t big_layer = loc_to_layer(loc_big, num_layers);
    const std::size_t mid_layer = (big_layer + num_layers + 1) / 2;
    if (!(big_layer < mid_layer && mid_layer < num_layers)) {
        throw std::invalid_argument(
            "plan_triple: layers collide for loc " + std::to_string(loc_big) + " with " +
            std::to_string(num_layers) + " layers (" + std::to_string(big_layer) + ", " +
            std::to_string(mid_layer) + ", " + std::to_string(num_layers) + ")");
    }
    const double mid_loc = static_cast<double>(mid_layer) / static_cast<double>(num_layers);
    PlacementPlan plan;
    plan.mode = PlanMode::triple;
    plan.placements.push_back({loc_big, big_layer, sizes[0], {}});
    plan.placements.push_back({mid_loc, mid_layer, sizes[1], {}});
    plan.placements.push_back({1.0, num_layers, sizes[2], {}});
    check_plan(plan, num_layers);
    if (model_dim > 0) {
        init_heads(plan, model_dim, seed);
    }
    return plan;
}

PlacementPlan plan_from_description(const nlohmann::json& j, std::size_t num_layers) {
    const auto mode = j.at("mode").get<std::string>();
    const auto& items = j.at("placements");
    PlacementPlan plan;
    if (mode == "single") {
        if (items.size() != 1) {
            throw std::invalid_argument("single plan description must have one placement");
        }
        plan = plan_single(num_layers, items[0].at("codebook_size").get<std::size_t>());
    } else if (mode == "triple") {
        if (items.size() != 3) {
            throw std::invalid_argument("triple plan description must have three placements");
        }
        std::vector<std::size_t> sizes;
        for (const auto& it : items) {
            sizes.push_back(it.at("codebook_size").get<std::size_t>());
        }
        plan = plan_triple(items[0].at("loc").get<double>(), num_layers, sizes);
    } else {
        throw std::invalid_argument("unknown plan mode '" + mode + "'");
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].at("layer").get<std::size_t>() != plan.placements[i].layer) {
            throw std::invalid_argument("plan description disagrees with placement rules at " +
                                        plan.placements[i].tag());
        }
    }
    return plan;
}

Tensor masked_ce(const Tensor& activations, const PredictionHead& head,
                 std::span<const std::uint32_t> labels, const masking::MaskSet& mask) {
    if (mask.empty()) {
        throw std::invalid_argument("masked_ce: empty mask set");
    }
    if (activations.rank() != 2 || labels.size() != activations.dim(0)) {
        throw std::invalid_argument("masked_ce: " + std::to_string(labels.size()) +
                                    " labels for activations " + shape_string(activations.shape()));
    }
    std::vector<std::uint32_t> targets;
    targets.reserve(mask.size());
    for (const auto idx : mask.indices) {
        if (idx >= labels.size()) {
            throw std::out_of_range("masked_ce: mask index " + std::to_string(idx) +
                                    " out of range");
        }
        targets.push_back(labels[idx]);
    }
    const Tensor selected = embedding(activations, mask.indices);
    const Tensor logits = add_rowwise(matmul(selected, head.weight), head.bias);
    return cross_entropy(logits, targets);
}

TotalLoss total_loss(const PlacementPlan& plan, const encoder::LayerActivations& activations,
                     const std::function<std::span<const std::uint32_t>(std::size_t)>& labels_by_size,
                     const masking::MaskSet& mask) {
    if (plan.placements.empty()) {
        throw std::invalid_argument("total_loss: empty plan");
    }
    TotalLoss out;
    for (const auto& p : plan.placements) {
        if (p.layer >= activations.layers.size()) {
            throw std::out_of_range("total_loss: placement " + p.tag() + " beyond " +
                                    std::to_string(activations.layers.size() - 1) + " layers");
        }
        const Tensor term =
            masked_ce(activations.layers[p.layer], p.head, labels_by_size(p.codebook_size), mask);
        out.terms.push_back({p.tag(), term.item()});
        out.total = out.total.defined() ? add(out.total, term) : term;
    }
    return out;
}

TotalLoss total_loss(const PlacementPlan& plan, const encoder::LayerActivations& activations,
                     const labeler::LabelBundle& bundle, std::size_t utterance_index,
                     const masking::MaskSet& mask) {
    return total_loss(
        plan, activations,
        [&](std::size_t k) -> std::span<const std::uint32_t> {
            return bundle.labels(utterance_index, k);
        },
        mask);
}

} // namespace mplbench::objective
