#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mplbench::numerics {

// Mixes a seed with a stream id into an independent seed. Used to derive
// per-utterance, per-step and per-run streams from one experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b);

// Portable random source. The std distributions are implementation-defined,
// so uniform/normal sampling is done here on top of the raw engine output to
// keep results identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform();

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller; the second variate is cached.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    // Full engine state as text (round-trips through restore()).
    std::string serialize() const;
    void restore(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) {
        return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ && a.spare_ == b.spare_;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace mplbench::numerics
