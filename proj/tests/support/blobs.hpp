#pragma once

// Gaussian blob data for clustering tests.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mplbench/numerics/matrix.hpp"
#include "mplbench/numerics/random.hpp"
#include "mplbench/synthcorpus.hpp"

namespace checks {

using mplbench::numerics::Matrix;
using mplbench::numerics::Rng;
namespace synth = mplbench::synth;

// `per_blob` points around each of `centers`, spread `sigma`.
inline Matrix blobs(const std::vector<std::vector<double>>& centers, std::size_t per_blob, double sigma,
                    std::uint64_t seed, std::vector<std::uint32_t>* ids = nullptr) {
    Rng rng(seed);
    const std::size_t dim = centers.front().size();
    Matrix m(centers.size() * per_blob, dim);
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t i = 0; i < per_blob; ++i) {
            const std::size_t r = c * per_blob + i;
            for (std::size_t f = 0; f < dim; ++f) {
                m(r, f) = centers[c][f] + sigma * rng.normal();
            }
            if (ids != nullptr) {
                ids->push_back(static_cast<std::uint32_t>(c));
            }
        }
    }
    return m;
}

// Wraps rows of `points` into utterances of `chunk` frames each.
inline std::vector<synth::Utterance> as_corpus(const Matrix& points, const std::vector<std::uint32_t>& ids,
                                        std::size_t chunk) {
    std::vector<synth::Utterance> out;
    for (std::size_t start = 0; start < points.rows; start += chunk) {
        const std::size_t n = std::min(chunk, points.rows - start);
        synth::Utterance u;
        u.utterance_id = static_cast<std::uint32_t>(out.size());
        u.features = Matrix(n, points.cols);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(points.row(start + i).begin(), points.row(start + i).end(),
                      u.features.row(i).begin());
            u.content_labels.push_back(ids.empty() ? 0 : ids[start + i]);
        }
        out.push_back(std::move(u));
    }
    return out;
}

inline std::vector<double> column_mean(const Matrix& m) {
    std::vector<double> mu(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            mu[c] += m(r, c);
        }
    }
    for (auto& v : mu) {
        v /= static_cast<double>(m.rows);
    }
    return mu;
}

} // namespace checks
