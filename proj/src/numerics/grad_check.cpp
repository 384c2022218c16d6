#include "mplbench/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mplbench/numerics/random.hpp"

namespace mplbench::numerics {

namespace {

double finite_value(const std::function<Tensor()>& fn) {
    NoGradGuard no_grad;
    const double v = fn().item();
    if (!std::isfinite(v)) {
        throw std::domain_error("grad_check: non-finite forward value " + std::to_string(v));
    }
    return v;
}

} // namespace

GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
    if (!(options.eps > 0.0)) {
        throw std::invalid_argument("grad_check: eps must be positive");
    }
    for (auto& p : params) {
        for (const double v : p.data()) {
            if (!std::isfinite(v)) {
                throw std::domain_error("grad_check: non-finite parameter value");
            }
        }
        p.zero_grad();
    }

    const Tensor loss = fn();
    if (!std::isfinite(loss.item())) {
        throw std::domain_error("grad_check: non-finite forward value");
    }
    backward(loss);

    Rng rng(options.seed);
    GradCheckReport report;
    for (auto& p : params) {
        const std::vector<double> analytic =
            p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                         : std::vector<double>(p.numel(), 0.0);

        std::vector<std::size_t> coords(p.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (coords.size() > options.samples_per_tensor) {
            rng.shuffle(coords);
            coords.resize(options.samples_per_tensor);
        }

        auto values = p.mutable_data();
        for (const auto c : coords) {
            const double original = values[c];
            values[c] = original + options.eps;
            const double plus = finite_value(fn);
            values[c] = original - options.eps;
            const double minus = finite_value(fn);
            values[c] = original;

            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-8});
            report.max_relative_error =
                std::max(report.max_relative_error, std::abs(analytic[c] - numeric) / denom);
            ++report.coordinates_checked;
        }
    }
    return report;
}

} // namespace mplbench::numerics
