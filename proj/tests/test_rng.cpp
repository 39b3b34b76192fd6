#include "doctest.h"

#include <cmath>
#include <set>

#include "traingate/rng.hpp"

using traingate::Rng;

TEST_CASE("identical seeds give identical streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams with different domains differ") {
    Rng a = Rng::substream(7, "alpha");
    Rng b = Rng::substream(7, "beta");
    bool all_equal = true;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() != b.next_u64()) all_equal = false;
    CHECK_FALSE(all_equal);
}

TEST_CASE("substream indices derive distinct generators") {
    CHECK(Rng::derive_seed(9, "x", 0) != Rng::derive_seed(9, "x", 1));
    CHECK(Rng::derive_seed(9, "x", 0) == Rng::derive_seed(9, "x", 0));
}

TEST_CASE("uniform lies in [0,1)") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("normal moments are roughly standard") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("below stays in range and hits all residues") {
    Rng rng(17);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t v = rng.below(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("sample_without_replacement yields distinct indices") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const auto sample = rng.sample_without_replacement(50, 12);
        CHECK(sample.size() == 12);
        std::set<std::size_t> unique(sample.begin(), sample.end());
        CHECK(unique.size() == 12);
        for (std::size_t idx : sample) CHECK(idx < 50);
    }
    // k > n clamps to n
    const auto all = rng.sample_without_replacement(5, 9);
    CHECK(all.size() == 5);
}
