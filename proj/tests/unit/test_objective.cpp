#include <doctest.h>

#include <cmath>

#include "mplbench/mpl_objective.hpp"
#include "support/checks.hpp"

using namespace mplbench;
using numerics::Tensor;
using objective::PredictionHead;

namespace {

std::vector<std::size_t> layers_of(const objective::PlacementPlan& p) {
    std::vector<std::size_t> out;
    for (const auto& x : p.placements) {
        out.push_back(x.layer);
    }
    return out;
}

std::vector<std::size_t> sizes_of(const objective::PlacementPlan& p) {
    std::vector<std::size_t> out;
    for (const auto& x : p.placements) {
        out.push_back(x.codebook_size);
    }
    return out;
}

// Identity head: logits are the activation rows themselves.
PredictionHead identity_head(std::size_t k) {
    std::vector<double> w(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        w[i * k + i] = 1.0;
    }
    return {Tensor::from_data({k, k}, w), Tensor::zeros({k})};
}

} // namespace

TEST_CASE("loc_to_layer worked examples") {
    CHECK(objective::loc_to_layer(0.4, 10) == 4);
    CHECK(objective::loc_to_layer(0.6, 10) == 6);
    CHECK(objective::loc_to_layer(1.0, 12) == 12);
    CHECK(objective::loc_to_layer(0.4, 12) == 5);
    CHECK(objective::loc_to_layer(0.25, 6) == 2);
    CHECK(objective::loc_to_layer(0.01, 6) == 1);
}

TEST_CASE("loc_to_layer is nondecreasing in loc and stays in [1, L]") {
    for (std::size_t L = 2; L <= 24; ++L) {
        std::size_t previous = 0;
        for (int i = 1; i <= 1000; ++i) {
            const std::size_t layer = objective::loc_to_layer(i / 1000.0, L);
            CHECK(layer >= 1);
            CHECK(layer <= L);
            CHECK(layer >= previous);
            previous = layer;
        }
        CHECK(previous == L);
    }
}

TEST_CASE("loc outside (0, 1] is rejected") {
    CHECK_THROWS_AS(objective::loc_to_layer(0.0, 6), std::invalid_argument);
    CHECK_THROWS_AS(objective::loc_to_layer(1.01, 6), std::invalid_argument);
    CHECK_THROWS_AS(objective::loc_to_layer(-0.5, 6), std::invalid_argument);
}

TEST_CASE("triple plans place sizes shallow to deep") {
    const auto a = objective::plan_triple(0.4, 10, {500, 250, 100});
    CHECK(layers_of(a) == std::vector<std::size_t>{4, 7, 10});
    CHECK(sizes_of(a) == std::vector<std::size_t>{500, 250, 100});
    CHECK(a.mode == objective::PlanMode::triple);

    const auto b = objective::plan_triple(0.8, 10, {500, 250, 100});
    CHECK(layers_of(b) == std::vector<std::size_t>{8, 9, 10});

    const auto c = objective::plan_triple(0.33, 6, {64, 48, 32});
    CHECK(layers_of(c) == std::vector<std::size_t>{2, 4, 6});
    const auto d = objective::plan_triple(0.66, 6, {64, 48, 32});
    CHECK(layers_of(d) == std::vector<std::size_t>{4, 5, 6});
}

TEST_CASE("triple plans are strictly increasing in depth and decreasing in size") {
    for (std::size_t L = 3; L <= 16; ++L) {
        for (int i = 1; i < 100; ++i) {
            objective::PlacementPlan p;
            try {
                p = objective::plan_triple(i / 100.0, L, {9, 6, 3});
            } catch (const std::invalid_argument&) {
                continue;
            }
            const auto layers = layers_of(p);
            REQUIRE(layers.size() == 3);
            CHECK(layers[0] < layers[1]);
            CHECK(layers[1] < layers[2]);
            CHECK(layers[2] == L);
        }
    }
}

TEST_CASE("colliding or malformed triple plans are rejected") {
    CHECK_THROWS_AS(objective::plan_triple(0.9, 3, {9, 6, 3}), std::invalid_argument);
    CHECK_THROWS_AS(objective::plan_triple(1.0, 10, {9, 6, 3}), std::invalid_argument);
    CHECK_THROWS_AS(objective::plan_triple(0.4, 10, {3, 6, 9}), std::invalid_argument);
    CHECK_THROWS_AS(objective::plan_triple(0.4, 10, {9, 6}), std::invalid_argument);
}

TEST_CASE("single plan is one head at the last layer") {
    const auto p = objective::plan_single(6, 32);
    REQUIRE(p.placements.size() == 1);
    CHECK(p.placements[0].layer == 6);
    CHECK(p.placements[0].loc == 1.0);
    CHECK(p.placements[0].tag() == "K32@L6");
}

TEST_CASE("plan descriptions round-trip") {
    const auto p = objective::plan_triple(0.33, 6, {64, 48, 32});
    const auto back = objective::plan_from_description(p.describe(), 6);
    CHECK(layers_of(back) == layers_of(p));
    CHECK(sizes_of(back) == sizes_of(p));
    CHECK(back.describe() == p.describe());
    auto tampered = p.describe();
    tampered["placements"][0]["layer"] = 3;
    CHECK_THROWS(objective::plan_from_description(tampered, 6));
}

TEST_CASE("uniform logits give ln K") {
    const std::size_t k = 32;
    const PredictionHead head{Tensor::zeros({8, k}), Tensor::zeros({k})};
    numerics::Rng rng(1);
    const auto acts = checks::random_tensor(rng, {10, 8}, -2.0, 2.0, false);
    std::vector<std::uint32_t> labels(10);
    for (auto& l : labels) {
        l = static_cast<std::uint32_t>(rng.uniform_int(k));
    }
    const masking::MaskSet mask{{0, 3, 4, 9}};
    CHECK(objective::masked_ce(acts, head, labels, mask).item() ==
          doctest::Approx(std::log(32.0)).epsilon(1e-14));
}

TEST_CASE("near-perfect logits give near-zero loss") {
    const auto head = identity_head(4);
    std::vector<double> rows(6 * 4, 0.0);
    const std::vector<std::uint32_t> labels{0, 1, 2, 3, 0, 1};
    for (std::size_t t = 0; t < 6; ++t) {
        rows[t * 4 + labels[t]] = 50.0;
    }
    const auto acts = Tensor::from_data({6, 4}, rows);
    const masking::MaskSet mask{{0, 1, 2, 3, 4, 5}};
    CHECK(objective::masked_ce(acts, head, labels, mask).item() < 1e-6);
}

TEST_CASE("hand-computed cross entropy over three masked frames") {
    // Frames 1, 3 and 4 are masked; frames 0 and 2 carry junk that must not count.
    const std::vector<double> rows{9.0,  9.0,  -9.0, 0.0,  // 0 unmasked
                                   2.0,  -1.0, 0.5,  0.0,  // 1 target 0
                                   -5.0, 7.0,  1.0,  1.0,  // 2 unmasked
                                   0.1,  0.2,  0.3,  0.4,  // 3 target 3
                                   -3.0, 1.0,  1.0,  2.5}; // 4 target 1
    const auto acts = Tensor::from_data({5, 4}, rows);
    const std::vector<std::uint32_t> labels{2, 0, 3, 3, 1};
    const masking::MaskSet mask{{1, 3, 4}};
    const double loss = objective::masked_ce(acts, identity_head(4), labels, mask).item();
    CHECK(loss == doctest::Approx(1.1522293377475816).epsilon(1e-12));

    double oracle = 0.0;
    for (const std::size_t t : mask.indices) {
        double z = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            z += std::exp(rows[t * 4 + k]);
        }
        oracle += std::log(z) - rows[t * 4 + labels[t]];
    }
    CHECK(loss == doctest::Approx(oracle / 3.0).epsilon(1e-12));
}

TEST_CASE("masked_ce rejects bad inputs") {
    const auto head = identity_head(4);
    const auto acts = Tensor::zeros({5, 4});
    const std::vector<std::uint32_t> labels{0, 1, 2, 3, 0};
    CHECK_THROWS(objective::masked_ce(acts, head, labels, masking::MaskSet{}));
    const std::vector<std::uint32_t> short_labels{0, 1};
    CHECK_THROWS(objective::masked_ce(acts, head, short_labels, masking::MaskSet{{0}}));
    const std::vector<std::uint32_t> out_of_range{0, 1, 2, 3, 4};
    CHECK_THROWS(objective::masked_ce(acts, head, out_of_range, masking::MaskSet{{4}}));
}

TEST_CASE("total loss is the sum of its terms and ignores unmasked labels") {
    const auto res = checks::loss_structure_check(40, 17);
    CHECK(res.configurations == 40);
    CHECK(res.max_relative_error < 1e-12);
    CHECK(res.mask_local);
}

TEST_CASE("total loss of the micro batch reports one term per placement") {
    const auto mb = checks::make_micro_batch(5);
    const auto loss = checks::utterance_loss(mb, 0);
    REQUIRE(loss.terms.size() == 3);
    CHECK(loss.terms[0].tag == mb.plan.placements[0].tag());
    double sum = 0.0;
    for (const auto& t : loss.terms) {
        CHECK(t.value > 0.0);
        sum += t.value;
    }
    CHECK(loss.total.item() == doctest::Approx(sum).epsilon(1e-12));
}
