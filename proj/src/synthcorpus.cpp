#include "mplbench/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mplbench/io/container.hpp"
#include "mplbench/numerics/random.hpp"

namespace mplbench::synth {

namespace {

using numerics::derive_seed;
using numerics::Matrix;
using numerics::Rng;

constexpr io::Magic kCorpusMagic{'M', 'P', 'L', 'D'};

// Stream ids for derive_seed.
constexpr std::uint64_t kGenerativeStream = 0;
constexpr std::uint64_t kUtteranceStream = 1;
constexpr std::uint64_t kSplitStream = 2;

std::size_t sample_range(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
}

const char* split_name(Split split) {
    switch (split) {
    case Split::train:
        return "train";
    case Split::dev:
        return "dev";
    case Split::test:
        return "test";
    }
    return "?";
}

struct UnitPlan {
    std::vector<std::uint32_t> units;
    std::vector<std::size_t> durations;
};

std::vector<Utterance> generate_split(const CorpusSpec& spec, const GenerativeModel& gen,
                                      Split split, std::uint32_t first_id, std::size_t count) {
    const auto split_index = static_cast<std::uint64_t>(split);
    Rng split_rng(derive_seed(spec.seed, kSplitStream, split_index));

    std::vector<std::uint32_t> speakers(count);
    for (std::size_t i = 0; i < count; ++i) {
        speakers[i] = static_cast<std::uint32_t>(i % spec.num_speakers);
    }
    split_rng.shuffle(speakers);

    std::vector<Rng> utt_rngs;
    std::vector<UnitPlan> plans(count);
    utt_rngs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        utt_rngs.emplace_back(derive_seed(spec.seed, kUtteranceStream, first_id + i));
        Rng& rng = utt_rngs.back();
        const auto n_units = sample_range(rng, spec.units_min, spec.units_max);
        for (std::size_t u = 0; u < n_units; ++u) {
            std::uint32_t unit = 0;
            if (u > 0 && rng.uniform() < spec.successor_prob) {
                unit = gen.successor[plans[i].units.back()];
            } else {
                unit = static_cast<std::uint32_t>(rng.uniform_int(spec.num_content_units));
            }
            plans[i].units.push_back(unit);
            plans[i].durations.push_back(
                sample_range(rng, spec.frames_per_unit_min, spec.frames_per_unit_max));
        }
    }

    // Content coverage: C distinct unit slots across the split are forced to
    // hold units 0..C-1.
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t u = 0; u < plans[i].units.size(); ++u) {
            slots.emplace_back(i, u);
        }
    }
    split_rng.shuffle(slots);
    for (std::size_t c = 0; c < spec.num_content_units; ++c) {
        plans[slots[c].first].units[slots[c].second] = static_cast<std::uint32_t>(c);
    }

    std::vector<Utterance> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng& rng = utt_rngs[i];
        Utterance& utt = out[i];
        utt.utterance_id = static_cast<std::uint32_t>(first_id + i);
        utt.speaker_id = speakers[i];
        std::size_t total = 0;
        for (const auto d : plans[i].durations) {
            total += d;
        }
        utt.features = Matrix(total, spec.feature_dim);
        utt.content_labels.reserve(total);
        std::size_t t = 0;
        for (std::size_t u = 0; u < plans[i].units.size(); ++u) {
            const auto clean = gen.clean_frame(plans[i].units[u], utt.speaker_id);
            for (std::size_t k = 0; k < plans[i].durations[u]; ++k, ++t) {
                auto row = utt.features.row(t);
                for (std::size_t f = 0; f < spec.feature_dim; ++f) {
                    row[f] = clean[f] + spec.noise_sigma * rng.normal();
                }
                utt.content_labels.push_back(plans[i].units[u]);
            }
        }
    }
    return out;
}

nlohmann::json utterance_index(const std::vector<Utterance>& utts) {
    auto arr = nlohmann::json::array();
    for (const auto& u : utts) {
        arr.push_back({{"id", u.utterance_id}, {"speaker", u.speaker_id}, {"frames", u.num_frames()}});
    }
    return arr;
}

std::vector<Utterance> read_split(const io::ContainerReader& reader, const nlohmann::json& index,
                                  std::size_t feature_dim) {
    std::vector<Utterance> out;
    for (const auto& entry : index) {
        Utterance u;
        u.utterance_id = entry.at("id").get<std::uint32_t>();
        u.speaker_id = entry.at("speaker").get<std::uint32_t>();
        const auto frames = entry.at("frames").get<std::size_t>();
        const std::string prefix = "utt/" + std::to_string(u.utterance_id) + "/";
        auto values = reader.f64(prefix + "features");
        if (values.size() != frames * feature_dim) {
            throw std::runtime_error("corpus file: feature block size mismatch for utterance " +
                                     std::to_string(u.utterance_id));
        }
        u.features = Matrix(frames, feature_dim, std::move(values));
        u.content_labels = reader.u32(prefix + "labels");
        if (u.content_labels.size() != frames) {
            throw std::runtime_error("corpus file: label block size mismatch for utterance " +
                                     std::to_string(u.utterance_id));
        }
        out.push_back(std::move(u));
    }
    return out;
}

} // namespace

void CorpusSpec::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("CorpusSpec: " + msg); };
    if (num_speakers < 2) {
        fail("num_speakers must be >= 2");
    }
    if (num_content_units < 2) {
        fail("num_content_units must be >= 2");
    }
    if (feature_dim < 1) {
        fail("feature_dim must be positive");
    }
    if (units_min < 1 || units_min > units_max) {
        fail("units per utterance range must be nonempty with a positive lower bound");
    }
    if (frames_per_unit_min < 1 || frames_per_unit_min > frames_per_unit_max) {
        fail("frames per unit range must be nonempty with a positive lower bound");
    }
    if (!(speaker_strength >= 0.0) || !(noise_sigma >= 0.0)) {
        fail("speaker_strength and noise_sigma must be nonnegative");
    }
    if (!(successor_prob >= 0.0 && successor_prob <= 1.0)) {
        fail("successor_prob must lie in [0, 1]");
    }
    for (const auto n : {num_train, num_dev, num_test}) {
        if (n < num_speakers) {
            fail("impossible coverage: a split has " + std::to_string(n) +
                 " utterances for " + std::to_string(num_speakers) + " speakers");
        }
        if (n * units_min < num_content_units) {
            fail("impossible coverage: a split cannot hold all " +
                 std::to_string(num_content_units) + " content units");
        }
    }
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
    j = nlohmann::json{{"num_speakers", s.num_speakers},
                       {"num_content_units", s.num_content_units},
                       {"feature_dim", s.feature_dim},
                       {"units_per_utterance", {s.units_min, s.units_max}},
                       {"frames_per_unit", {s.frames_per_unit_min, s.frames_per_unit_max}},
                       {"speaker_strength", s.speaker_strength},
                       {"noise_sigma", s.noise_sigma},
                       {"successor_prob", s.successor_prob},
                       {"num_utterances", {{"train", s.num_train}, {"dev", s.num_dev}, {"test", s.num_test}}},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
    CorpusSpec d;
    s.num_speakers = j.value("num_speakers", d.num_speakers);
    s.num_content_units = j.value("num_content_units", d.num_content_units);
    s.feature_dim = j.value("feature_dim", d.feature_dim);
    if (j.contains("units_per_utterance")) {
        s.units_min = j.at("units_per_utterance").at(0).get<std::size_t>();
        s.units_max = j.at("units_per_utterance").at(1).get<std::size_t>();
    } else {
        s.units_min = d.units_min;
        s.units_max = d.units_max;
    }
    if (j.contains("frames_per_unit")) {
        s.frames_per_unit_min = j.at("frames_per_unit").at(0).get<std::size_t>();
        s.frames_per_unit_max = j.at("frames_per_unit").at(1).get<std::size_t>();
    } else {
        s.frames_per_unit_min = d.frames_per_unit_min;
        s.frames_per_unit_max = d.frames_per_unit_max;
    }
    s.speaker_strength = j.value("speaker_strength", d.speaker_strength);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.successor_prob = j.value("successor_prob", d.successor_prob);
    if (j.contains("num_utterances")) {
        const auto& n = j.at("num_utterances");
        s.num_train = n.value("train", d.num_train);
        s.num_dev = n.value("dev", d.num_dev);
        s.num_test = n.value("test", d.num_test);
    } else {
        s.num_train = d.num_train;
        s.num_dev = d.num_dev;
        s.num_test = d.num_test;
    }
    s.seed = j.value("seed", d.seed);
}

std::vector<double> GenerativeModel::clean_frame(std::uint32_t unit, std::uint32_t speaker) const {
    const auto& e = unit_embeddings.at(unit);
    const auto& a = speaker_transforms.at(speaker);
    const auto& b = speaker_biases.at(speaker);
    std::vector<double> out(e.size());
    for (std::size_t r = 0; r < e.size(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) {
            acc += a(r, c) * e[c];
        }
        out[r] = acc + b[r];
    }
    return out;
}

GenerativeModel generative_model(const CorpusSpec& spec) {
    Rng rng(derive_seed(spec.seed, kGenerativeStream));
    const std::size_t f = spec.feature_dim;
    const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(f));
    GenerativeModel gen;

    for (std::size_t c = 0; c < spec.num_content_units; ++c) {
        std::vector<double> e(f);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& v : e) {
                v = rng.normal();
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& v : e) {
            v /= norm;
        }
        gen.unit_embeddings.push_back(std::move(e));
    }

    std::vector<double> bias_mean(f, 0.0);
    for (std::size_t s = 0; s < spec.num_speakers; ++s) {
        Matrix a(f, f);
        for (std::size_t r = 0; r < f; ++r) {
            for (std::size_t c = 0; c < f; ++c) {
                a(r, c) = (r == c ? 1.0 : 0.0) + spec.speaker_strength * rng.normal() * inv_sqrt_f;
            }
        }
        gen.speaker_transforms.push_back(std::move(a));
        std::vector<double> b(f);
        for (std::size_t k = 0; k < f; ++k) {
            b[k] = spec.speaker_strength * rng.normal() * inv_sqrt_f;
            bias_mean[k] += b[k] / static_cast<double>(spec.num_speakers);
        }
        gen.speaker_biases.push_back(std::move(b));
    }
    // Biases are centered across speakers so that they carry identity only.
    for (auto& b : gen.speaker_biases) {
        for (std::size_t k = 0; k < f; ++k) {
            b[k] -= bias_mean[k];
        }
    }

    std::vector<std::uint32_t> cycle(spec.num_content_units);
    std::iota(cycle.begin(), cycle.end(), 0);
    rng.shuffle(cycle);
    gen.successor.assign(spec.num_content_units, 0);
    for (std::size_t i = 0; i < cycle.size(); ++i) {
        gen.successor[cycle[i]] = cycle[(i + 1) % cycle.size()];
    }
    return gen;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    const auto gen = generative_model(spec);
    Corpus corpus;
    corpus.spec = spec;
    std::uint32_t next_id = 0;
    corpus.train = generate_split(spec, gen, Split::train, next_id, spec.num_train);
    next_id += static_cast<std::uint32_t>(spec.num_train);
    corpus.dev = generate_split(spec, gen, Split::dev, next_id, spec.num_dev);
    next_id += static_cast<std::uint32_t>(spec.num_dev);
    corpus.test = generate_split(spec, gen, Split::test, next_id, spec.num_test);
    return corpus;
}

CorpusStats corpus_stats(const std::vector<Utterance>& utterances, std::size_t num_units,
                         std::size_t num_speakers) {
    CorpusStats stats;
    stats.num_utterances = utterances.size();
    stats.content_histogram.assign(num_units, 0);
    stats.speaker_utterances.assign(num_speakers, 0);
    for (const auto& u : utterances) {
        stats.total_frames += u.num_frames();
        for (const auto label : u.content_labels) {
            ++stats.content_histogram.at(label);
        }
        ++stats.speaker_utterances.at(u.speaker_id);
    }
    if (!stats.content_histogram.empty()) {
        stats.majority_content_frames =
            *std::max_element(stats.content_histogram.begin(), stats.content_histogram.end());
    }
    if (!stats.speaker_utterances.empty()) {
        stats.majority_speaker_utterances =
            *std::max_element(stats.speaker_utterances.begin(), stats.speaker_utterances.end());
    }
    return stats;
}

Matrix stack_frames(const std::vector<Utterance>& utterances) {
    if (utterances.empty()) {
        return {};
    }
    const std::size_t f = utterances.front().features.cols;
    std::size_t total = 0;
    for (const auto& u : utterances) {
        total += u.num_frames();
    }
    Matrix out(total, f);
    std::size_t offset = 0;
    for (const auto& u : utterances) {
        std::copy(u.features.data.begin(), u.features.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(offset * f));
        offset += u.num_frames();
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    io::ContainerWriter writer(kCorpusMagic, kCorpusFileVersion);
    writer.set_manifest({{"spec", corpus.spec},
                         {"splits",
                          {{split_name(Split::train), utterance_index(corpus.train)},
                           {split_name(Split::dev), utterance_index(corpus.dev)},
                           {split_name(Split::test), utterance_index(corpus.test)}}}});
    for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
        for (const auto& u : *split) {
            const std::string prefix = "utt/" + std::to_string(u.utterance_id) + "/";
            writer.add_f64(prefix + "features", u.features.data);
            writer.add_u32(prefix + "labels", u.content_labels);
        }
    }
    writer.write_file(path);
}

Corpus load_corpus(const std::filesystem::path& path) {
    const auto reader = io::ContainerReader::read_file(path, kCorpusMagic, kCorpusFileVersion);
    const auto& manifest = reader.manifest();
    Corpus corpus;
    corpus.spec = manifest.at("spec").get<CorpusSpec>();
    const auto& splits = manifest.at("splits");
    const auto f = corpus.spec.feature_dim;
    corpus.train = read_split(reader, splits.at(split_name(Split::train)), f);
    corpus.dev = read_split(reader, splits.at(split_name(Split::dev)), f);
    corpus.test = read_split(reader, splits.at(split_name(Split::test)), f);
    return corpus;
}

} // namespace mplbench::synth
