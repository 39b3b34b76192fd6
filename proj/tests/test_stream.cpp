#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "traingate/errors.hpp"
#include "traingate/learner.hpp"
#include "traingate/stream.hpp"

using namespace traingate;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

EnvironmentSpec small_spec() {
    EnvironmentSpec spec;
    spec.n_segments = 2;
    spec.segment_length = 50;
    spec.d_in = 4;
    return spec;
}

}  // namespace

TEST_CASE("zero noise and zero corruption make the pseudo-label exact") {
    EnvironmentSpec spec = small_spec();
    spec.noise_schedule = {{0.0, 0.0}};
    spec.corruption_rate = 0.0;
    for (const auto& s : generate_stream(spec, 9)) CHECK(s.y_pseudo == s.y_true);
}

TEST_CASE("identical spec and seed give bitwise-identical streams") {
    const EnvironmentSpec spec = small_spec();
    const auto a = generate_stream(spec, 1234);
    const auto b = generate_stream(spec, 1234);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y_true == b[i].y_true);
        CHECK(a[i].y_pseudo == b[i].y_pseudo);
        CHECK(a[i].nu == b[i].nu);
        CHECK(a[i].pose_proxy == b[i].pose_proxy);
        CHECK(a[i].landmark_proxy == b[i].landmark_proxy);
        CHECK(a[i].pose_available == b[i].pose_available);
    }
}

TEST_CASE("sample invariants hold") {
    EnvironmentSpec spec;
    spec.n_segments = 3;
    spec.segment_length = 100;
    spec.corruption_rate = 0.2;
    spec.pose_drop_rate = 0.3;
    const auto stream = generate_stream(spec, 77);
    std::int64_t prev_t = -1;
    for (const auto& s : stream) {
        CHECK(s.y_true > 0.0);
        CHECK(s.nu >= 0.0);
        CHECK(s.t == prev_t + 1);
        prev_t = s.t;
        CHECK(s.landmark_proxy >= 0);
        CHECK(std::isfinite(s.y_pseudo));
        for (double xi : s.x) {
            CHECK(std::isfinite(xi));
            CHECK(std::abs(xi) <= 1.0);
        }
        CHECK(s.env_id == s.t / spec.segment_length);
    }
}

TEST_CASE("invalid specs name the offending field") {
    EnvironmentSpec spec = small_spec();
    spec.segment_length = 2;
    CHECK_THROWS_WITH_AS(generate_stream(spec, 1),
                         doctest::Contains("segment_length"), ConfigError);
    spec = small_spec();
    spec.corruption_rate = 1.5;
    CHECK_THROWS_WITH_AS(generate_stream(spec, 1),
                         doctest::Contains("corruption_rate"), ConfigError);
    spec = small_spec();
    spec.noise_schedule = {{0.2, 0.1}};
    CHECK_THROWS_WITH_AS(generate_stream(spec, 1),
                         doctest::Contains("noise_schedule"), ConfigError);
}

TEST_CASE("pseudo-label is unbiased without corruption") {
    EnvironmentSpec spec;
    spec.n_segments = 1;
    spec.segment_length = 20000;
    spec.d_in = 4;
    spec.noise_schedule = {{0.1, 0.1}};  // nu constant
    spec.corruption_rate = 0.0;
    const auto stream = generate_stream(spec, 3);
    double sum = 0.0;
    for (const auto& s : stream) sum += s.y_pseudo - s.y_true;
    const double bound = 3.0 * 0.1 / std::sqrt(static_cast<double>(stream.size()));
    CHECK(std::abs(sum / static_cast<double>(stream.size())) < bound);
}

TEST_CASE("drift raises the loss of a learner frozen on the previous segment") {
    EnvironmentSpec spec;
    spec.n_segments = 2;
    spec.segment_length = 200;
    spec.d_in = 4;
    spec.drift_magnitude = 0.8;
    spec.noise_schedule = {{0.02, 0.05}};
    spec.corruption_rate = 0.0;
    const auto stream = generate_stream(spec, 21);

    // Fit an ensemble to segment 0 only, then freeze it.
    EnsembleLearner learner(spec.d_in, 16, 2, 1e-3, 42);
    std::vector<LabeledExample> seg0;
    for (int t = 0; t < spec.segment_length; ++t)
        seg0.push_back({stream[static_cast<std::size_t>(t)].x,
                        stream[static_cast<std::size_t>(t)].y_pseudo});
    for (int epoch = 0; epoch < 300; ++epoch) learner.train_batch(seg0);

    auto window_loss = [&](int start) {
        double sum = 0.0;
        for (int t = start; t < start + 10; ++t) {
            const auto& s = stream[static_cast<std::size_t>(t)];
            for (const auto& member : learner.members()) {
                const MlpOutput out = member.forward(s.x);
                sum += nll_loss(out.mu, out.logvar, s.y_pseudo);
            }
        }
        return sum / (10.0 * learner.ensemble_size());
    };
    const double before = window_loss(spec.segment_length - 10);
    const double after = window_loss(spec.segment_length);
    CHECK(after > before);
}

TEST_CASE("trace round-trip reproduces every field exactly") {
    EnvironmentSpec spec = small_spec();
    spec.segment_length = 50;
    spec.corruption_rate = 0.1;
    spec.pose_drop_rate = 0.1;
    const auto stream = generate_stream(spec, 5);
    const auto path = temp_file("tg_trace_roundtrip.jsonl");
    write_trace(stream, path);
    const auto loaded = read_trace(path);
    REQUIRE(loaded.size() == stream.size());
    for (std::size_t i = 0; i < stream.size(); ++i) {
        CHECK(loaded[i].t == stream[i].t);
        CHECK(loaded[i].x == stream[i].x);
        CHECK(loaded[i].y_true == stream[i].y_true);
        CHECK(loaded[i].y_pseudo == stream[i].y_pseudo);
        CHECK(loaded[i].nu == stream[i].nu);
        CHECK(loaded[i].pose_proxy == stream[i].pose_proxy);
        CHECK(loaded[i].landmark_proxy == stream[i].landmark_proxy);
        CHECK(loaded[i].env_id == stream[i].env_id);
        CHECK(loaded[i].pose_available == stream[i].pose_available);
    }
    fs::remove(path);
}

TEST_CASE("missing field is a schema error naming the field") {
    const auto path = temp_file("tg_trace_missing.jsonl");
    {
        std::ofstream out(path);
        out << R"({"t":0,"x":[0.1],"y_true":1.0,"nu":0.0,"pose_proxy":[0,0,0,0,0,0,0,0,0,0],)"
            << R"("landmark_proxy":3,"env_id":0,"pose_available":true})" << '\n';
    }
    CHECK_THROWS_WITH_AS(read_trace(path), doctest::Contains("y_pseudo"), SchemaError);
    fs::remove(path);
}

TEST_CASE("malformed line reports its line number") {
    const auto path = temp_file("tg_trace_malformed.jsonl");
    {
        std::ofstream out(path);
        out << R"({"t":0,"x":[0.1],"y_true":1.0,"y_pseudo":1.0,"nu":0.0,)"
            << R"("pose_proxy":[0,0,0,0,0,0,0,0,0,0],"landmark_proxy":3,"env_id":0,"pose_available":true})"
            << '\n';
        out << "{not json\n";
    }
    CHECK_THROWS_WITH_AS(read_trace(path), doctest::Contains("line 2"), ParseError);
    fs::remove(path);
}

TEST_CASE("empty trace file reads as an empty stream") {
    const auto path = temp_file("tg_trace_empty.jsonl");
    { std::ofstream out(path); }
    CHECK(read_trace(path).empty());
    fs::remove(path);
}
