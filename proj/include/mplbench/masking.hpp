#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mplbench/numerics/random.hpp"

namespace mplbench::masking {

// Span masking: every frame independently starts a span with probability
// start_prob; a span covers span_length frames, truncated at the end of the
// utterance. Defaults follow the usual HuBERT recipe.
struct MaskPolicy {
    double start_prob = 0.08;
    std::size_t span_length = 10;
    bool require_nonempty = true;

    void validate() const;
    friend bool operator==(const MaskPolicy&, const MaskPolicy&) = default;
};

// Sorted, deduplicated frame indices.
struct MaskSet {
    std::vector<std::size_t> indices;

    bool empty() const { return indices.empty(); }
    std::size_t size() const { return indices.size(); }
    bool contains(std::size_t frame) const;

    friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

inline constexpr int kMaxMaskAttempts = 100;

// Union of spans {s, ..., min(s + span_length - 1, num_frames - 1)} for every start.
MaskSet spans_to_mask(std::size_t num_frames, std::span<const std::size_t> starts,
                      std::size_t span_length);

// Throws std::runtime_error when require_nonempty is set and every one of
// kMaxMaskAttempts draws came back empty.
MaskSet sample_mask(std::size_t num_frames, const MaskPolicy& policy, numerics::Rng& rng);

// Closed-form probability that a given frame far from the end is covered.
double expected_coverage(const MaskPolicy& policy);

} // namespace mplbench::masking
