#include <doctest.h>

#include <filesystem>
#include <set>

#include "mplbench/labeler.hpp"
#include "mplbench/synthcorpus.hpp"

using namespace mplbench;
using synth::CorpusSpec;

namespace {

CorpusSpec small_spec() {
    CorpusSpec s;
    s.num_train = 60;
    s.num_dev = 20;
    s.num_test = 20;
    return s;
}

} // namespace

TEST_CASE("same seed gives bit-identical corpora, different seeds differ") {
    const auto a = synth::generate_corpus(small_spec());
    const auto b = synth::generate_corpus(small_spec());
    CHECK(a == b);
    auto other = small_spec();
    other.seed = 2;
    CHECK_FALSE(a == synth::generate_corpus(other));
}

TEST_CASE("every split covers all speakers and units and ids are disjoint") {
    const auto spec = small_spec();
    const auto c = synth::generate_corpus(spec);
    std::set<std::uint32_t> ids;
    for (const auto* split : {&c.train, &c.dev, &c.test}) {
        std::set<std::uint32_t> speakers;
        std::set<std::uint32_t> units;
        for (const auto& u : *split) {
            CHECK(ids.insert(u.utterance_id).second);
            speakers.insert(u.speaker_id);
            units.insert(u.content_labels.begin(), u.content_labels.end());
        }
        CHECK(speakers.size() == spec.num_speakers);
        CHECK(units.size() == spec.num_content_units);
    }
    CHECK(ids.size() == spec.num_train + spec.num_dev + spec.num_test);
}

TEST_CASE("utterance lengths and label runs follow the unit and duration ranges") {
    const auto spec = small_spec();
    const auto c = synth::generate_corpus(spec);
    for (const auto& u : c.train) {
        REQUIRE(u.features.rows == u.content_labels.size());
        REQUIRE(u.features.cols == spec.feature_dim);
        CHECK(u.num_frames() >= spec.units_min * spec.frames_per_unit_min);
        CHECK(u.num_frames() <= spec.units_max * spec.frames_per_unit_max);
        CHECK(u.speaker_id < spec.num_speakers);
        for (const auto l : u.content_labels) {
            CHECK(l < spec.num_content_units);
        }
    }
}

TEST_CASE("with no speaker transform or noise, frames are e_c plus the speaker bias") {
    auto spec = small_spec();
    spec.noise_sigma = 0.0;
    spec.speaker_strength = 0.0;
    const auto gen = synth::generative_model(spec);
    const auto c = synth::generate_corpus(spec);
    for (const auto& u : c.test) {
        for (std::size_t t = 0; t < u.num_frames(); ++t) {
            const auto& e = gen.unit_embeddings[u.content_labels[t]];
            const auto& b = gen.speaker_biases[u.speaker_id];
            for (std::size_t f = 0; f < spec.feature_dim; ++f) {
                REQUIRE(u.features(t, f) - b[f] == doctest::Approx(e[f]).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("a single speaker with no transform reproduces the unit embedding exactly") {
    auto spec = small_spec();
    spec.num_speakers = 1;
    spec.speaker_strength = 0.0;
    const auto gen = synth::generative_model(spec);
    for (std::uint32_t c = 0; c < spec.num_content_units; ++c) {
        CHECK(gen.clean_frame(c, 0) == gen.unit_embeddings[c]);
    }
}

TEST_CASE("unit embeddings have unit norm") {
    const auto gen = synth::generative_model(small_spec());
    for (const auto& e : gen.unit_embeddings) {
        double n = 0.0;
        for (const double v : e) {
            n += v * v;
        }
        CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("noise-free frames are perfectly classified by a speaker-compensated oracle") {
    auto spec = small_spec();
    spec.noise_sigma = 0.0;
    const auto gen = synth::generative_model(spec);
    const auto c = synth::generate_corpus(spec);
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const auto& u : c.test) {
        numerics::Matrix centroids(spec.num_content_units, spec.feature_dim);
        for (std::uint32_t k = 0; k < spec.num_content_units; ++k) {
            const auto clean = gen.clean_frame(k, u.speaker_id);
            std::copy(clean.begin(), clean.end(), centroids.row(k).begin());
        }
        for (std::size_t t = 0; t < u.num_frames(); ++t) {
            correct += labeler::nearest_centroid(centroids, u.features.row(t)) == u.content_labels[t];
            ++total;
        }
    }
    CHECK(correct == total);
}

TEST_CASE("corpus_stats counts are exact") {
    synth::Utterance u;
    u.speaker_id = 1;
    u.features = numerics::Matrix(12, 2);
    u.content_labels = {0, 0, 0, 0, 2, 2, 2, 2, 1, 1, 1, 1};
    const auto s = synth::corpus_stats({u}, 3, 2);
    CHECK(s.total_frames == 12);
    CHECK(s.content_histogram == std::vector<std::size_t>{4, 4, 4});
    CHECK(s.speaker_utterances == std::vector<std::size_t>{0, 1});

    const auto c = synth::generate_corpus(small_spec());
    const auto st = synth::corpus_stats(c.train, 10, 8);
    std::size_t frames = 0;
    for (const auto& utt : c.train) {
        frames += utt.num_frames();
    }
    std::size_t hist = 0;
    for (const auto h : st.content_histogram) {
        hist += h;
    }
    std::size_t spk = 0;
    for (const auto n : st.speaker_utterances) {
        spk += n;
    }
    CHECK(st.total_frames == frames);
    CHECK(hist == frames);
    CHECK(spk == c.train.size());
}

TEST_CASE("impossible coverage and invalid specs are rejected") {
    auto spec = small_spec();
    spec.num_test = spec.num_speakers - 1;
    CHECK_THROWS_AS(synth::generate_corpus(spec), std::invalid_argument);
    auto one = small_spec();
    one.num_speakers = 1;
    CHECK_THROWS_AS(synth::generate_corpus(one), std::invalid_argument);
    auto ranges = small_spec();
    ranges.units_min = 0;
    CHECK_THROWS_AS(ranges.validate(), std::invalid_argument);
    auto inverted = small_spec();
    inverted.frames_per_unit_min = 7;
    CHECK_THROWS_AS(inverted.validate(), std::invalid_argument);
}

TEST_CASE("corpus file round-trips") {
    const auto c = synth::generate_corpus(small_spec());
    const auto path = std::filesystem::temp_directory_path() / "mplbench_corpus_test.mpld";
    synth::save_corpus(c, path);
    CHECK(synth::load_corpus(path) == c);
    std::filesystem::remove(path);
}

TEST_CASE("spec json round-trips") {
    auto spec = small_spec();
    spec.successor_prob = 0.25;
    nlohmann::json j = spec;
    CHECK(j.get<CorpusSpec>() == spec);
}
