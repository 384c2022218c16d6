#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <set>

#include "mplbench/labeler.hpp"
#include "mplbench/numerics/random.hpp"
#include "support/blobs.hpp"

using namespace mplbench;
using labeler::KMeansOptions;
using labeler::LabelOptions;
using numerics::Matrix;
using numerics::Rng;
using checks::as_corpus;
using checks::blobs;
using checks::column_mean;

namespace {

// Minimum within-cluster sum of squares over every 2-partition, by brute force.
double best_two_partition_sse(const Matrix& pts) {
    const std::size_t n = pts.rows;
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t bits = 1; bits < (1u << (n - 1)); ++bits) {
        double sse = 0.0;
        for (int side = 0; side < 2; ++side) {
            std::vector<double> mu(pts.cols, 0.0);
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (((bits >> i) & 1u) == static_cast<std::uint32_t>(side)) {
                    for (std::size_t c = 0; c < pts.cols; ++c) {
                        mu[c] += pts(i, c);
                    }
                    ++count;
                }
            }
            for (auto& v : mu) {
                v /= static_cast<double>(count);
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (((bits >> i) & 1u) == static_cast<std::uint32_t>(side)) {
                    sse += numerics::squared_distance(pts.row(i), mu);
                }
            }
        }
        best = std::min(best, sse);
    }
    return best;
}

std::uint32_t scan_nearest(const Matrix& centroids, std::span<const double> x) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows; ++k) {
        const double d = numerics::squared_distance(centroids.row(k), x);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(k);
        }
    }
    return best;
}

const std::vector<std::vector<double>> kFourCorners{{-6, -6}, {-6, 6}, {6, -6}, {6, 6}};

} // namespace

TEST_CASE("k = 1 gives the coordinatewise mean") {
    const auto pts = blobs({{1, 2, 3}, {-4, 0, 2}}, 15, 1.0, 1);
    const auto book = labeler::kmeans(pts, 1, {});
    const auto mu = column_mean(pts);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(book.centroids(0, c) - mu[c]) < 1e-12);
    }
}

TEST_CASE("k = N distinct points gives zero distortion and the points themselves") {
    const auto pts = blobs({{0, 0}}, 9, 3.0, 2);
    const auto book = labeler::kmeans(pts, 9, {});
    CHECK(book.distortion == 0.0);
    std::multiset<std::vector<double>> want;
    std::multiset<std::vector<double>> got;
    for (std::size_t i = 0; i < 9; ++i) {
        want.insert(std::vector<double>(pts.row(i).begin(), pts.row(i).end()));
        got.insert(std::vector<double>(book.centroids.row(i).begin(), book.centroids.row(i).end()));
    }
    CHECK(want == got);
}

TEST_CASE("two tight blobs are found, and k-means matches the exhaustive 2-partition optimum") {
    const std::vector<double> lo(5, -5.0);
    const std::vector<double> hi(5, 5.0);
    const auto pts = blobs({lo, hi}, 20, 0.3, 3);
    const auto book = labeler::kmeans(pts, 2, {100, 7});
    for (std::size_t k = 0; k < 2; ++k) {
        const double sign = book.centroids(k, 0) < 0 ? -5.0 : 5.0;
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(std::abs(book.centroids(k, c) - sign) < 0.5);
        }
    }

    Matrix sub(12, 5);
    for (std::size_t i = 0; i < 12; ++i) {
        const std::size_t src = i < 6 ? i : 20 + i;
        std::copy(pts.row(src).begin(), pts.row(src).end(), sub.row(i).begin());
    }
    const auto small = labeler::kmeans(sub, 2, {100, 1});
    const double sse = small.distortion * 12.0;
    CHECK(sse == doctest::Approx(best_two_partition_sse(sub)).epsilon(1e-9));
}

TEST_CASE("k-means rejects too few points") {
    const auto pts = blobs({{0, 0}}, 3, 1.0, 4);
    CHECK_THROWS_AS(labeler::kmeans(pts, 4, {}), std::invalid_argument);
    Matrix same(5, 2);
    CHECK_THROWS_AS(labeler::kmeans(same, 2, {}), std::invalid_argument);
}

TEST_CASE("Lloyd distortion never increases") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto pts = blobs(kFourCorners, 25, 4.0, seed);
        const auto book = labeler::kmeans(pts, 2 + seed % 7, {100, seed});
        REQUIRE(book.distortion_history.size() >= 1);
        for (std::size_t i = 1; i < book.distortion_history.size(); ++i) {
            CHECK(book.distortion_history[i] <= book.distortion_history[i - 1] + 1e-9);
        }
        CHECK(book.distortion == doctest::Approx(book.distortion_history.back()).epsilon(1e-12));
    }
}

TEST_CASE("nearest centroid: exact hit, lowest-index tie break, and linear-scan agreement") {
    Matrix centroids(5, 2, {0, 0, -1, 0, 5, 5, 9, 9, 1, 0});
    const std::vector<double> on3{9, 9};
    CHECK(labeler::nearest_centroid(centroids, on3) == 3);
    // (0, 1) is equidistant from centroid 1 (-1, 0) and centroid 4 (1, 0).
    const std::vector<double> mid{0, 1};
    Matrix two(5, 2, {3, 3, -1, 0, 7, 7, 8, 8, 1, 0});
    CHECK(labeler::nearest_centroid(two, mid) == 1);

    const auto book_pts = blobs({{0, 0, 0}}, 16, 2.0, 12);
    labeler::Codebook book;
    book.k = 16;
    book.centroids = book_pts;
    const auto frames = blobs({{0, 0, 0}}, 200, 3.0, 13);
    const auto labels = labeler::label_frames(book, frames);
    for (std::size_t i = 0; i < frames.rows; ++i) {
        CHECK(labels[i] == scan_nearest(book_pts, frames.row(i)));
    }
    CHECK(labeler::label_frames(book, frames) == labels);
    CHECK_THROWS_AS(labeler::label_frames(book, Matrix(3, 2)), std::invalid_argument);
}

TEST_CASE("CA1 and CA2 with one cluster and the full corpus return the global mean") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(kFourCorners, 30, 1.0, 14, &ids);
    const auto corpus = as_corpus(pts, ids, 10);
    const auto mu = column_mean(pts);
    for (const auto strategy : {labeler::Strategy::ca1, labeler::Strategy::ca2}) {
        LabelOptions opt;
        opt.sizes = {1};
        opt.subset_frac = 1.0;
        const auto bundle = labeler::build_labels(strategy, corpus, opt);
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(std::abs(bundle.codebooks[0].centroids(0, c) - mu[c]) < 1e-12);
        }
        for (std::size_t u = 0; u < corpus.size(); ++u) {
            for (const auto l : bundle.labels(u, 1)) {
                CHECK(l == 0);
            }
        }
    }
}

TEST_CASE("CA1 on four blobs recovers blob identity") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(kFourCorners, 50, 1.0, 15, &ids);
    const auto corpus = as_corpus(pts, ids, 8);
    LabelOptions opt;
    opt.sizes = {4, 2};
    opt.subset_frac = 0.5;
    opt.seed = 3;
    const auto bundle = labeler::build_ca1(corpus, opt);
    CHECK(bundle.hierarchy_maps.empty());
    // Purity: for each cluster, the share of its most common blob.
    std::vector<std::vector<std::size_t>> table(4, std::vector<std::size_t>(4, 0));
    for (std::size_t u = 0; u < corpus.size(); ++u) {
        const auto& lab = bundle.labels(u, 4);
        for (std::size_t t = 0; t < lab.size(); ++t) {
            ++table[lab[t]][corpus[u].content_labels[t]];
        }
    }
    std::size_t majority = 0;
    for (const auto& row : table) {
        majority += *std::max_element(row.begin(), row.end());
    }
    CHECK(static_cast<double>(majority) / static_cast<double>(pts.rows) >= 0.9);
    CHECK(labeler::build_ca1(corpus, opt) == bundle);
}

TEST_CASE("CA2 coarse centroid of two fine centroids is their plain mean") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs({{-3, 0}, {3, 0}}, 40, 0.5, 16, &ids);
    const auto corpus = as_corpus(pts, ids, 10);
    LabelOptions opt;
    opt.sizes = {2, 1};
    opt.subset_frac = 1.0;
    const auto bundle = labeler::build_ca2(corpus, opt);
    const auto& fine = bundle.codebooks[0].centroids;
    const auto& coarse = bundle.codebooks[1].centroids;
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(std::abs(coarse(0, c) - 0.5 * (fine(0, c) + fine(1, c))) < 1e-12);
    }
}

TEST_CASE("CA2 hierarchy maps are total and surjective on spread data") {
    std::vector<std::vector<double>> centers;
    for (int i = 0; i < 8; ++i) {
        centers.push_back({10.0 * (i % 4), 10.0 * (i / 4)});
    }
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(centers, 25, 0.5, 17, &ids);
    const auto corpus = as_corpus(pts, ids, 10);
    LabelOptions opt;
    opt.sizes = {8, 4};
    opt.subset_frac = 1.0;
    opt.seed = 5;
    const auto bundle = labeler::build_ca2(corpus, opt);
    REQUIRE(bundle.hierarchy_maps.size() == 1);
    const auto& map = bundle.hierarchy_maps[0];
    CHECK(map.size() == 8);
    std::set<std::uint32_t> hit;
    for (std::size_t fine = 0; fine < map.size(); ++fine) {
        CHECK(map[fine] < 4);
        CHECK(map[fine] == labeler::nearest_centroid(bundle.codebooks[1].centroids,
                                                     bundle.codebooks[0].centroids.row(fine)));
        hit.insert(map[fine]);
    }
    CHECK(hit.size() == 4);
    CHECK(labeler::build_ca2(corpus, opt) == bundle);
}

TEST_CASE("labels come from direct lookup against each book") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(kFourCorners, 20, 2.0, 18, &ids);
    const auto corpus = as_corpus(pts, ids, 7);
    LabelOptions opt;
    opt.sizes = {6, 3};
    opt.subset_frac = 0.6;
    for (const auto strategy : {labeler::Strategy::ca1, labeler::Strategy::ca2}) {
        const auto bundle = labeler::build_labels(strategy, corpus, opt);
        for (std::size_t s = 0; s < 2; ++s) {
            for (std::size_t u = 0; u < corpus.size(); ++u) {
                CHECK(bundle.labels(u, opt.sizes[s]) ==
                      labeler::label_frames(bundle.codebooks[s], corpus[u].features));
            }
        }
    }
}

TEST_CASE("label options are validated") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(kFourCorners, 10, 1.0, 19, &ids);
    const auto corpus = as_corpus(pts, ids, 5);
    LabelOptions small_subset;
    small_subset.sizes = {30, 2};
    small_subset.subset_frac = 0.5; // 20 frames < 30
    CHECK_THROWS_AS(labeler::build_ca1(corpus, small_subset), std::invalid_argument);
    LabelOptions ascending;
    ascending.sizes = {2, 4};
    ascending.subset_frac = 1.0;
    CHECK_THROWS_AS(labeler::build_ca2(corpus, ascending), std::invalid_argument);
    LabelOptions zero_frac;
    zero_frac.sizes = {2};
    zero_frac.subset_frac = 0.0;
    CHECK_THROWS_AS(labeler::build_ca1(corpus, zero_frac), std::invalid_argument);
}

TEST_CASE("label bundle file round-trips") {
    std::vector<std::uint32_t> ids;
    const auto pts = blobs(kFourCorners, 20, 1.0, 20, &ids);
    const auto corpus = as_corpus(pts, ids, 9);
    LabelOptions opt;
    opt.sizes = {5, 3, 2};
    opt.subset_frac = 1.0;
    const auto bundle = labeler::build_ca2(corpus, opt);
    const auto path = std::filesystem::temp_directory_path() / "mplbench_labels_test.mplb";
    labeler::save_label_bundle(bundle, path);
    CHECK(labeler::load_label_bundle(path) == bundle);
    std::filesystem::remove(path);
}
