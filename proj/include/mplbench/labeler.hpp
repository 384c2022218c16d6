#pragma once

// k-means pseudo-labels.
//
// CA1: one independent k-means run per codebook size, each on its own random
//      subset of frames.
// CA2: k-means on a frame subset gives the largest book; every smaller book is
//      k-means over the previous book's centroids (unweighted). Hierarchy maps
//      send each finer centroid to its nearest coarser centroid.
//
// In both regimes frame labels come from direct nearest-centroid lookup
// against the book of that size.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mplbench/numerics/matrix.hpp"
#include "mplbench/synthcorpus.hpp"

namespace mplbench::labeler {

using numerics::Matrix;

enum class Strategy { ca1, ca2 };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct Codebook {
    std::size_t k = 0;
    Matrix centroids; // k x F
    double distortion = 0.0;
    Strategy strategy = Strategy::ca1;
    std::size_t size_index = 0;
    // Distortion after every Lloyd iteration, starting with the k-means++ seeding.
    std::vector<double> distortion_history;

    friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct KMeansOptions {
    std::size_t max_iters = 100;
    std::uint64_t seed = 0;
};

// Lloyd iterations from k-means++ seeding. Stops after max_iters or when no
// assignment changes. Empty clusters are re-seeded with the point farthest
// from its current centroid. Throws std::invalid_argument if there are fewer
// points (or distinct points) than k.
Codebook kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options);

// Nearest centroid by squared Euclidean distance, lowest index on ties.
std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> point);
std::vector<std::uint32_t> label_frames(const Codebook& book, const Matrix& frames);

double mean_squared_distance(const Matrix& points, const Matrix& centroids);

struct LabelBundle {
    Strategy strategy = Strategy::ca1;
    std::vector<std::size_t> sizes;    // descending
    std::vector<Codebook> codebooks;   // one per size, same order
    std::uint64_t seed = 0;
    double subset_frac = 1.0;
    // frame_labels[utt][size_index][frame]
    std::vector<std::vector<std::vector<std::uint32_t>>> frame_labels;
    std::vector<std::uint32_t> utterance_ids;
    // CA2 only: hierarchy_maps[i][fine id] = coarse id, between sizes i and i+1.
    std::vector<std::vector<std::uint32_t>> hierarchy_maps;

    std::size_t size_index_of(std::size_t k) const;
    const std::vector<std::uint32_t>& labels(std::size_t utt_index, std::size_t k) const;

    friend bool operator==(const LabelBundle&, const LabelBundle&) = default;
};

struct LabelOptions {
    std::vector<std::size_t> sizes{64, 48, 32};
    double subset_frac = 0.1;
    std::size_t max_iters = 100;
    std::uint64_t seed = 0;
};

LabelBundle build_ca1(const std::vector<synth::Utterance>& corpus, const LabelOptions& options);
LabelBundle build_ca2(const std::vector<synth::Utterance>& corpus, const LabelOptions& options);
LabelBundle build_labels(Strategy strategy, const std::vector<synth::Utterance>& corpus,
                         const LabelOptions& options);

inline constexpr std::uint8_t kLabelFileVersion = 1;
void save_label_bundle(const LabelBundle& bundle, const std::filesystem::path& path);
LabelBundle load_label_bundle(const std::filesystem::path& path);

} // namespace mplbench::labeler
