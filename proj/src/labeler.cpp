#include "mplbench/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mplbench/io/container.hpp"
#include "mplbench/numerics/random.hpp"

namespace mplbench::labeler {

namespace {

using numerics::derive_seed;
using numerics::Rng;
using numerics::squared_distance;

constexpr io::Magic kLabelMagic{'M', 'P', 'L', 'B'};

// Nearest-centroid assignment of every point; returns mean squared distance.
double assign(const Matrix& points, const Matrix& centroids, std::vector<std::uint32_t>& out) {
    out.resize(points.rows);
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows; ++i) {
        const auto c = nearest_centroid(centroids, points.row(i));
        out[i] = c;
        total += squared_distance(points.row(i), centroids.row(c));
    }
    return total / static_cast<double>(points.rows);
}

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows;
    Matrix centroids(k, points.cols);
    const auto first = static_cast<std::size_t>(rng.uniform_int(n));
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = squared_distance(points.row(i), centroids.row(0));
    }
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (!(total > 0.0)) {
            throw std::invalid_argument("kmeans: fewer than " + std::to_string(k) +
                                        " distinct points");
        }
        const double target = rng.uniform() * total;
        double running = 0.0;
        std::size_t chosen = n;
        for (std::size_t i = 0; i < n; ++i) {
            running += d2[i];
            if (d2[i] > 0.0 && running > target) {
                chosen = i;
                break;
            }
        }
        if (chosen == n) {
            // Rounding left the target past the last positive weight.
            for (std::size_t i = n; i-- > 0;) {
                if (d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        std::copy(points.row(chosen).begin(), points.row(chosen).end(),
                  centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
        }
    }
    return centroids;
}

void validate_sizes(const LabelOptions& options) {
    if (options.sizes.empty()) {
        throw std::invalid_argument("labels: at least one codebook size is required");
    }
    for (std::size_t i = 0; i < options.sizes.size(); ++i) {
        if (options.sizes[i] < 1) {
            throw std::invalid_argument("labels: codebook sizes must be positive");
        }
        if (i > 0 && options.sizes[i] >= options.sizes[i - 1]) {
            throw std::invalid_argument("labels: sizes must be strictly descending");
        }
    }
    if (!(options.subset_frac > 0.0 && options.subset_frac <= 1.0)) {
        throw std::invalid_argument("labels: subset_frac must lie in (0, 1]");
    }
}

std::size_t subset_size(std::size_t total, double frac) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(total))));
}

Matrix draw_subset(const Matrix& frames, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> order(frames.rows);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(count);
    std::sort(order.begin(), order.end());
    Matrix out(count, frames.cols);
    for (std::size_t i = 0; i < count; ++i) {
        std::copy(frames.row(order[i]).begin(), frames.row(order[i]).end(), out.row(i).begin());
    }
    return out;
}

void assign_frame_labels(LabelBundle& bundle, const std::vector<synth::Utterance>& corpus) {
    bundle.frame_labels.clear();
    bundle.utterance_ids.clear();
    for (const auto& utt : corpus) {
        std::vector<std::vector<std::uint32_t>> per_size;
        for (const auto& book : bundle.codebooks) {
            per_size.push_back(label_frames(book, utt.features));
        }
        bundle.frame_labels.push_back(std::move(per_size));
        bundle.utterance_ids.push_back(utt.utterance_id);
    }
}

} // namespace

std::string to_string(Strategy s) { return s == Strategy::ca1 ? "CA1" : "CA2"; }

Strategy strategy_from_string(const std::string& s) {
    if (s == "CA1" || s == "ca1") {
        return Strategy::ca1;
    }
    if (s == "CA2" || s == "ca2") {
        return Strategy::ca2;
    }
    throw std::invalid_argument("unknown cluster assignment strategy '" + s + "'");
}

std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> point) {
    if (point.size() != centroids.cols) {
        throw std::invalid_argument("nearest_centroid: point width " +
                                    std::to_string(point.size()) + " vs centroid width " +
                                    std::to_string(centroids.cols));
    }
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double d = squared_distance(point, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

std::vector<std::uint32_t> label_frames(const Codebook& book, const Matrix& frames) {
    if (frames.cols != book.centroids.cols) {
        throw std::invalid_argument("label_frames: frame width " + std::to_string(frames.cols) +
                                    " does not match codebook width " +
                                    std::to_string(book.centroids.cols));
    }
    std::vector<std::uint32_t> labels(frames.rows);
    for (std::size_t i = 0; i < frames.rows; ++i) {
        labels[i] = nearest_centroid(book.centroids, frames.row(i));
    }
    return labels;
}

double mean_squared_distance(const Matrix& points, const Matrix& centroids) {
    std::vector<std::uint32_t> scratch;
    return assign(points, centroids, scratch);
}

Codebook kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options) {
    if (k < 1) {
        throw std::invalid_argument("kmeans: k must be positive");
    }
    if (points.rows < k) {
        throw std::invalid_argument("kmeans: " + std::to_string(points.rows) +
                                    " points for k = " + std::to_string(k));
    }
    for (const double v : points.data) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("kmeans: non-finite point coordinate");
        }
    }

    Rng rng(options.seed);
    Codebook book;
    book.k = k;
    book.centroids = kmeanspp_seed(points, k, rng);

    std::vector<std::uint32_t> labels;
    std::vector<std::uint32_t> next_labels;
    double distortion = assign(points, book.centroids, labels);
    book.distortion_history.push_back(distortion);

    const std::size_t f = points.cols;
    std::vector<double> sums(k * f);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < points.rows; ++i) {
            const auto c = labels[i];
            ++counts[c];
            const auto row = points.row(i);
            for (std::size_t j = 0; j < f; ++j) {
                sums[c * f + j] += row[j];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                continue;
            }
            const double inv = 1.0 / static_cast<double>(counts[c]);
            for (std::size_t j = 0; j < f; ++j) {
                book.centroids(c, j) = sums[c * f + j] * inv;
            }
        }

        // Empty clusters take the point currently farthest from its centroid.
        std::vector<double> dist;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            if (dist.empty()) {
                dist.resize(points.rows);
                for (std::size_t i = 0; i < points.rows; ++i) {
                    dist[i] = squared_distance(points.row(i), book.centroids.row(labels[i]));
                }
            }
            const auto far = static_cast<std::size_t>(
                std::max_element(dist.begin(), dist.end()) - dist.begin());
            std::copy(points.row(far).begin(), points.row(far).end(), book.centroids.row(c).begin());
            dist[far] = 0.0;
        }

        distortion = assign(points, book.centroids, next_labels);
        book.distortion_history.push_back(distortion);
        const bool converged = next_labels == labels;
        labels.swap(next_labels);
        if (converged) {
            break;
        }
    }
    book.distortion = distortion;
    return book;
}

std::size_t LabelBundle::size_index_of(std::size_t k) const {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == k) {
            return i;
        }
    }
    throw std::out_of_range("label bundle has no codebook of size " + std::to_string(k));
}

const std::vector<std::uint32_t>& LabelBundle::labels(std::size_t utt_index, std::size_t k) const {
    return frame_labels.at(utt_index).at(size_index_of(k));
}

LabelBundle build_ca1(const std::vector<synth::Utterance>& corpus, const LabelOptions& options) {
    validate_sizes(options);
    const Matrix frames = synth::stack_frames(corpus);
    const std::size_t n_sub = subset_size(frames.rows, options.subset_frac);
    if (n_sub < options.sizes.front()) {
        throw std::invalid_argument("build_ca1: subset of " + std::to_string(n_sub) +
                                    " frames is smaller than the largest codebook size " +
                                    std::to_string(options.sizes.front()));
    }
    LabelBundle bundle;
    bundle.strategy = Strategy::ca1;
    bundle.sizes = options.sizes;
    bundle.seed = options.seed;
    bundle.subset_frac = options.subset_frac;
    for (std::size_t i = 0; i < options.sizes.size(); ++i) {
        const auto size_seed = derive_seed(options.seed, i);
        const Matrix subset = draw_subset(frames, n_sub, derive_seed(size_seed, 0));
        Codebook book = kmeans(subset, options.sizes[i], {options.max_iters, derive_seed(size_seed, 1)});
        book.strategy = Strategy::ca1;
        book.size_index = i;
        bundle.codebooks.push_back(std::move(book));
    }
    assign_frame_labels(bundle, corpus);
    return bundle;
}

LabelBundle build_ca2(const std::vector<synth::Utterance>& corpus, const LabelOptions& options) {
    validate_sizes(options);
    const Matrix frames = synth::stack_frames(corpus);
    const std::size_t n_sub = subset_size(frames.rows, options.subset_frac);
    if (n_sub < options.sizes.front()) {
        throw std::invalid_argument("build_ca2: subset of " + std::to_string(n_sub) +
                                    " frames is smaller than the largest codebook size " +
                                    std::to_string(options.sizes.front()));
    }
    LabelBundle bundle;
    bundle.strategy = Strategy::ca2;
    bundle.sizes = options.sizes;
    bundle.seed = options.seed;
    bundle.subset_frac = options.subset_frac;

    Matrix input = draw_subset(frames, n_sub, derive_seed(options.seed, 0, 0));
    for (std::size_t i = 0; i < options.sizes.size(); ++i) {
        Codebook book =
            kmeans(input, options.sizes[i], {options.max_iters, derive_seed(options.seed, i, 1)});
        book.strategy = Strategy::ca2;
        book.size_index = i;
        input = book.centroids;
        bundle.codebooks.push_back(std::move(book));
    }
    for (std::size_t i = 0; i + 1 < bundle.codebooks.size(); ++i) {
        bundle.hierarchy_maps.push_back(
            label_frames(bundle.codebooks[i + 1], bundle.codebooks[i].centroids));
    }
    assign_frame_labels(bundle, corpus);
    return bundle;
}

LabelBundle build_labels(Strategy strategy, const std::vector<synth::Utterance>& corpus,
                         const LabelOptions& options) {
    return strategy == Strategy::ca1 ? build_ca1(corpus, options) : build_ca2(corpus, options);
}

void save_label_bundle(const LabelBundle& bundle, const std::filesystem::path& path) {
    io::ContainerWriter writer(kLabelMagic, kLabelFileVersion);
    auto books = nlohmann::json::array();
    for (const auto& b : bundle.codebooks) {
        books.push_back({{"k", b.k},
                         {"size_index", b.size_index},
                         {"distortion", b.distortion},
                         {"distortion_history", b.distortion_history},
                         {"dim", b.centroids.cols}});
    }
    std::vector<std::size_t> frames;
    for (const auto& per_size : bundle.frame_labels) {
        frames.push_back(per_size.empty() ? 0 : per_size.front().size());
    }
    std::vector<double> distortions;
    for (const auto& b : bundle.codebooks) {
        distortions.push_back(b.distortion);
    }
    writer.set_manifest({{"strategy", to_string(bundle.strategy)},
                         {"sizes", bundle.sizes},
                         {"seed", bundle.seed},
                         {"subset_frac", bundle.subset_frac},
                         {"distortions", distortions},
                         {"codebooks", books},
                         {"utterance_ids", bundle.utterance_ids},
                         {"frames", frames},
                         {"hierarchy_maps", bundle.hierarchy_maps.size()}});
    for (std::size_t i = 0; i < bundle.codebooks.size(); ++i) {
        writer.add_f64("codebook/" + std::to_string(i) + "/centroids",
                       bundle.codebooks[i].centroids.data);
        std::vector<std::uint32_t> flat;
        for (const auto& per_size : bundle.frame_labels) {
            flat.insert(flat.end(), per_size[i].begin(), per_size[i].end());
        }
        writer.add_u32("labels/" + std::to_string(i), flat);
    }
    for (std::size_t i = 0; i < bundle.hierarchy_maps.size(); ++i) {
        writer.add_u32("hierarchy/" + std::to_string(i), bundle.hierarchy_maps[i]);
    }
    writer.write_file(path);
}

LabelBundle load_label_bundle(const std::filesystem::path& path) {
    const auto reader = io::ContainerReader::read_file(path, kLabelMagic, kLabelFileVersion);
    const auto& m = reader.manifest();
    LabelBundle bundle;
    bundle.strategy = strategy_from_string(m.at("strategy").get<std::string>());
    bundle.sizes = m.at("sizes").get<std::vector<std::size_t>>();
    bundle.seed = m.at("seed").get<std::uint64_t>();
    bundle.subset_frac = m.at("subset_frac").get<double>();
    bundle.utterance_ids = m.at("utterance_ids").get<std::vector<std::uint32_t>>();
    const auto frames = m.at("frames").get<std::vector<std::size_t>>();
    if (frames.size() != bundle.utterance_ids.size()) {
        throw std::runtime_error("label file: utterance index size mismatch");
    }
    const auto& books = m.at("codebooks");
    if (books.size() != bundle.sizes.size()) {
        throw std::runtime_error("label file: codebook count does not match sizes");
    }
    for (std::size_t i = 0; i < books.size(); ++i) {
        Codebook b;
        b.k = books[i].at("k").get<std::size_t>();
        b.size_index = books[i].at("size_index").get<std::size_t>();
        b.distortion = books[i].at("distortion").get<double>();
        b.distortion_history = books[i].at("distortion_history").get<std::vector<double>>();
        b.strategy = bundle.strategy;
        const auto dim = books[i].at("dim").get<std::size_t>();
        b.centroids = Matrix(b.k, dim, reader.f64("codebook/" + std::to_string(i) + "/centroids"));
        bundle.codebooks.push_back(std::move(b));
    }
    bundle.frame_labels.assign(frames.size(), {});
    for (std::size_t i = 0; i < bundle.codebooks.size(); ++i) {
        const auto flat = reader.u32("labels/" + std::to_string(i));
        std::size_t offset = 0;
        for (std::size_t u = 0; u < frames.size(); ++u) {
            if (offset + frames[u] > flat.size()) {
                throw std::runtime_error("label file: truncated label block " + std::to_string(i));
            }
            bundle.frame_labels[u].emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                flat.begin() + static_cast<std::ptrdiff_t>(offset + frames[u]));
            offset += frames[u];
        }
        if (offset != flat.size()) {
            throw std::runtime_error("label file: label block " + std::to_string(i) +
                                     " has trailing data");
        }
    }
    const auto n_maps = m.at("hierarchy_maps").get<std::size_t>();
    for (std::size_t i = 0; i < n_maps; ++i) {
        bundle.hierarchy_maps.push_back(reader.u32("hierarchy/" + std::to_string(i)));
    }
    return bundle;
}

} // namespace mplbench::labeler
