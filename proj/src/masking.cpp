#include "mplbench/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mplbench::masking {

void MaskPolicy::validate() const {
    if (!(start_prob >= 0.0 && start_prob <= 1.0)) {
        throw std::invalid_argument("MaskPolicy: start_prob must lie in [0, 1], got " +
                                    std::to_string(start_prob));
    }
    if (span_length < 1) {
        throw std::invalid_argument("MaskPolicy: span_length must be at least 1");
    }
}

bool MaskSet::contains(std::size_t frame) const {
    return std::binary_search(indices.begin(), indices.end(), frame);
}

MaskSet spans_to_mask(std::size_t num_frames, std::span<const std::size_t> starts,
                      std::size_t span_length) {
    std::vector<char> covered(num_frames, 0);
    for (const auto s : starts) {
        if (s >= num_frames) {
            throw std::out_of_range("spans_to_mask: start " + std::to_string(s) +
                                    " out of range for " + std::to_string(num_frames) + " frames");
        }
        const std::size_t end = std::min(s + span_length, num_frames);
        std::fill(covered.begin() + static_cast<std::ptrdiff_t>(s),
                  covered.begin() + static_cast<std::ptrdiff_t>(end), 1);
    }
    MaskSet mask;
    for (std::size_t i = 0; i < num_frames; ++i) {
        if (covered[i]) {
            mask.indices.push_back(i);
        }
    }
    return mask;
}

MaskSet sample_mask(std::size_t num_frames, const MaskPolicy& policy, numerics::Rng& rng) {
    if (num_frames < 1) {
        throw std::invalid_argument("sample_mask: need at least one frame");
    }
    policy.validate();
    std::vector<std::size_t> starts;
    for (int attempt = 0; attempt < kMaxMaskAttempts; ++attempt) {
        starts.clear();
        for (std::size_t i = 0; i < num_frames; ++i) {
            if (rng.uniform() < policy.start_prob) {
                starts.push_back(i);
            }
        }
        if (!starts.empty() || !policy.require_nonempty) {
            return spans_to_mask(num_frames, starts, policy.span_length);
        }
    }
    throw std::runtime_error("sample_mask: degenerate policy, mask empty after " +
                             std::to_string(kMaxMaskAttempts) + " attempts (start_prob=" +
                             std::to_string(policy.start_prob) + ", frames=" +
                             std::to_string(num_frames) + ")");
}

double expected_coverage(const MaskPolicy& policy) {
    return 1.0 - std::pow(1.0 - policy.start_prob, static_cast<double>(policy.span_length));
}

} // namespace mplbench::masking
