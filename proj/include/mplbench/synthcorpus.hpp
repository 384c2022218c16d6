#pragma once

// Synthetic frame-level corpus with factorized content and speaker structure.
//
// Each content unit c has a fixed unit-norm embedding e_c; each speaker s has
// a transform A_s = I + speaker_strength * G_s (G_s standard normal scaled by
// 1/sqrt(F)) and a bias b_s. A frame of unit c spoken by s is
//   A_s e_c + b_s + noise,   noise ~ N(0, noise_sigma^2 I).
//
// Unit sequences follow a fixed successor cycle over the C units: after unit
// c the next unit is succ(c) with probability successor_prob, otherwise a
// uniform draw. This gives masked content a context it can be inferred from.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mplbench/numerics/matrix.hpp"

namespace mplbench::synth {

struct CorpusSpec {
    std::size_t num_speakers = 8;
    std::size_t num_content_units = 10;
    std::size_t feature_dim = 24;
    std::size_t units_min = 4;
    std::size_t units_max = 8;
    std::size_t frames_per_unit_min = 3;
    std::size_t frames_per_unit_max = 6;
    double speaker_strength = 0.3;
    double noise_sigma = 0.2;
    double successor_prob = 1.0;
    std::size_t num_train = 600;
    std::size_t num_dev = 100;
    std::size_t num_test = 100;
    std::uint64_t seed = 1;

    void validate() const;
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);

struct Utterance {
    std::uint32_t utterance_id = 0;
    std::uint32_t speaker_id = 0;
    numerics::Matrix features;                // T x F
    std::vector<std::uint32_t> content_labels; // T entries

    std::size_t num_frames() const { return features.rows; }
    friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Generative parameters, kept for oracle classifiers in tests.
struct GenerativeModel {
    std::vector<std::vector<double>> unit_embeddings;    // C x F
    std::vector<numerics::Matrix> speaker_transforms;    // S of F x F
    std::vector<std::vector<double>> speaker_biases;     // S x F
    std::vector<std::uint32_t> successor;                // C entries, one cycle

    std::vector<double> clean_frame(std::uint32_t unit, std::uint32_t speaker) const;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<Utterance> train;
    std::vector<Utterance> dev;
    std::vector<Utterance> test;

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class Split { train, dev, test };

GenerativeModel generative_model(const CorpusSpec& spec);

// Every speaker and every content unit appears in every split. Throws
// std::invalid_argument when a split cannot cover them.
Corpus generate_corpus(const CorpusSpec& spec);

struct CorpusStats {
    std::size_t num_utterances = 0;
    std::size_t total_frames = 0;
    std::vector<std::size_t> content_histogram;     // frames per content unit
    std::vector<std::size_t> speaker_utterances;    // utterances per speaker
    std::size_t majority_content_frames = 0;
    std::size_t majority_speaker_utterances = 0;
};

CorpusStats corpus_stats(const std::vector<Utterance>& utterances, std::size_t num_units,
                         std::size_t num_speakers);

// Stacks every frame of `utterances` into one N x F matrix, in order.
numerics::Matrix stack_frames(const std::vector<Utterance>& utterances);

inline constexpr std::uint8_t kCorpusFileVersion = 1;
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

} // namespace mplbench::synth
