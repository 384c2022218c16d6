#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mplbench/numerics/tensor.hpp"

namespace mplbench::numerics {

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled per parameter tensor; all of them if the tensor is smaller.
    std::size_t samples_per_tensor = 50;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
};

// Compares analytic gradients of `fn` against central differences
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// over sampled coordinates of each tensor in `params`. `fn` is re-evaluated
// with individual coordinates perturbed in place, so the params must be leaves.
// Existing gradients on `params` are cleared. Throws std::domain_error if any
// forward value is non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

} // namespace mplbench::numerics
