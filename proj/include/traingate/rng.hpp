#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace traingate {

// Deterministic PRNG used by every stochastic component.
//
// Generator: xoshiro256++ seeded through SplitMix64. Both algorithms are
// fixed-width integer recurrences, so the raw bit stream is identical on
// every conforming platform. This choice is permanent: changing it would
// silently change every generated stream, checkpoint and sweep output.
//
// Independent sub-streams are derived from a master seed with
// `substream(master, domain, index)`, which hashes the domain label and
// index into the seed. Components never share a generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Derived generator for an isolated purpose, e.g.
    // substream(master, "replay-draw", t).
    static Rng substream(std::uint64_t master, std::string_view domain, std::uint64_t index = 0);

    // Seed value a substream call would use (for chaining derivations).
    static std::uint64_t derive_seed(std::uint64_t master, std::string_view domain,
                                     std::uint64_t index = 0);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via the polar Box-Muller method (the spare value is
    // discarded so draw counts stay predictable).
    double normal();

    // Uniform integer in [0, n), rejection-sampled to remove modulo bias.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p);

    // k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_[4];
};

}  // namespace traingate
