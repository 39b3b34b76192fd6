#include "traingate/stream.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

#include "traingate/errors.hpp"
#include "traingate/rng.hpp"

namespace traingate {

namespace {

// Per-segment target parameters: y_true = exp(g(x)) with
// g(x) = w.x + b + amp * sin(freq * u.x + phase).
struct SegmentTarget {
    std::vector<double> w;
    double bias = 0.0;
    double phase = 0.0;
};

constexpr double kSinAmplitude = 0.02;
constexpr double kSinFrequency = 1.0;
// Log-targets are squashed to base +/- kLogTargetRange, bounding y_true into
// [exp(b-r), exp(b+r)] so drift jumps stay recoverable within a segment. The
// base lifts targets far enough above the noise floor that a calibrated
// variance head keeps the NLL nonnegative (sigma >= 1) at converged states.
constexpr double kLogTargetRange = 0.8;
constexpr double kLogTargetBase = 1.95;
constexpr double kWalkStep = 0.08;
constexpr double kCorruptWalkFactor = 4.0;
constexpr double kLandmarkMean = 120.0;
constexpr double kLandmarkStd = 15.0;
constexpr double kLandmarkCorruptMean = 15.0;
constexpr double kLandmarkCorruptStd = 5.0;
constexpr double kCorruptBurstContinue = 2.0 / 3.0;  // geometric bursts, mean length 3

// Direction of the input-dependent noise profile. Fixed across streams of a
// given dimensionality so the aleatoric structure is stationary and the
// pretrained variance head stays valid on unseen streams.
std::vector<double> noise_direction(int d_in) {
    Rng rng = Rng::substream(0x6e6f697365ULL, "noise-direction", static_cast<std::uint64_t>(d_in));
    std::vector<double> v(d_in);
    double norm2 = 0.0;
    for (auto& vi : v) {
        vi = rng.normal();
        norm2 += vi * vi;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& vi : v) vi *= inv;
    return v;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Boundary jumps are bias-dominant: a level shift every learner parameter
// path can correct, plus smaller directional and phase perturbations.
std::vector<SegmentTarget> draw_targets(const EnvironmentSpec& spec, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, "target-params");
    const double base_scale = 0.25 / std::sqrt(static_cast<double>(spec.d_in));
    std::vector<SegmentTarget> targets(spec.n_segments);
    targets[0].w.resize(spec.d_in);
    for (auto& wi : targets[0].w) wi = base_scale * rng.normal();
    targets[0].bias = 0.2 * rng.normal();
    targets[0].phase = rng.uniform(0.0, 2.0 * M_PI);
    const double jump_scale =
        0.3 * spec.drift_magnitude / std::sqrt(static_cast<double>(spec.d_in));
    for (int k = 1; k < spec.n_segments; ++k) {
        targets[k].w = targets[k - 1].w;
        for (auto& wi : targets[k].w) wi += jump_scale * rng.normal();
        targets[k].bias = targets[k - 1].bias + 0.6 * spec.drift_magnitude * rng.normal();
        targets[k].phase = targets[k - 1].phase + 0.6 * spec.drift_magnitude * rng.normal();
    }
    return targets;
}

}  // namespace

void EnvironmentSpec::validate() const {
    if (n_segments < 1) throw ConfigError("EnvironmentSpec.n_segments must be >= 1");
    if (segment_length < 3) throw ConfigError("EnvironmentSpec.segment_length must be >= 3");
    if (d_in < 1) throw ConfigError("EnvironmentSpec.d_in must be >= 1");
    if (!(drift_magnitude >= 0.0)) throw ConfigError("EnvironmentSpec.drift_magnitude must be >= 0");
    if (noise_schedule.empty() ||
        (noise_schedule.size() != 1 && noise_schedule.size() != static_cast<std::size_t>(n_segments)))
        throw ConfigError("EnvironmentSpec.noise_schedule must hold 1 or n_segments ranges");
    for (const auto& range : noise_schedule)
        if (!(range[0] >= 0.0) || !(range[1] >= range[0]))
            throw ConfigError("EnvironmentSpec.noise_schedule ranges must satisfy 0 <= lo <= hi");
    if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0))
        throw ConfigError("EnvironmentSpec.corruption_rate must be in [0,1]");
    if (!(pose_drop_rate >= 0.0 && pose_drop_rate <= 1.0))
        throw ConfigError("EnvironmentSpec.pose_drop_rate must be in [0,1]");
}

std::array<double, 2> EnvironmentSpec::noise_range(int segment) const {
    if (noise_schedule.size() == 1) return noise_schedule[0];
    return noise_schedule[static_cast<std::size_t>(segment)];
}

std::vector<StreamSample> generate_stream(const EnvironmentSpec& spec, std::uint64_t seed) {
    spec.validate();

    const auto targets = draw_targets(spec, seed);
    const auto noise_dir = noise_direction(spec.d_in);
    const std::vector<double> sin_dir = noise_direction(spec.d_in + 1);  // distinct fixed direction

    Rng walk_rng = Rng::substream(seed, "input-walk");
    Rng noise_rng = Rng::substream(seed, "label-noise");
    Rng corrupt_rng = Rng::substream(seed, "corruption");
    Rng landmark_rng = Rng::substream(seed, "landmarks");
    Rng pose_rng = Rng::substream(seed, "pose");

    std::vector<double> x(spec.d_in);
    for (auto& xi : x) xi = walk_rng.uniform(-1.0, 1.0);
    std::vector<double> x_prev = x;

    // Start probability chosen so the stationary corrupted fraction is
    // approximately corruption_rate for geometric bursts of mean length 3.
    const double burst_start =
        spec.corruption_rate >= 1.0
            ? 1.0
            : spec.corruption_rate / (3.0 * (1.0 - spec.corruption_rate) + spec.corruption_rate);
    bool corrupted = false;
    double speed_ema = 0.0;

    std::vector<StreamSample> stream;
    stream.reserve(static_cast<std::size_t>(spec.total_steps()));

    for (int t = 0; t < spec.total_steps(); ++t) {
        const int segment = t / spec.segment_length;
        const SegmentTarget& target = targets[static_cast<std::size_t>(segment)];

        if (corrupted)
            corrupted = corrupt_rng.bernoulli(kCorruptBurstContinue);
        else
            corrupted = corrupt_rng.bernoulli(burst_start);

        if (t > 0) {
            x_prev = x;
            const double step = corrupted ? kWalkStep * kCorruptWalkFactor : kWalkStep;
            for (auto& xi : x) {
                xi += step * walk_rng.normal();
                // reflect back into [-1, 1]
                if (xi > 1.0) xi = 2.0 - xi;
                if (xi < -1.0) xi = -2.0 - xi;
                if (xi > 1.0 || xi < -1.0) xi = std::clamp(xi, -1.0, 1.0);
            }
        }

        StreamSample s;
        s.t = t;
        s.x = x;
        s.env_id = segment;

        double sin_arg = 0.0;
        for (int i = 0; i < spec.d_in; ++i) sin_arg += sin_dir[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        const double g = dot(target.w, x) + target.bias +
                         kSinAmplitude * std::sin(kSinFrequency * sin_arg + target.phase);
        s.y_true = std::exp(kLogTargetBase + kLogTargetRange * std::tanh(g / kLogTargetRange));

        const auto range = spec.noise_range(segment);
        s.nu = range[0] + (range[1] - range[0]) * logistic(2.0 * dot(noise_dir, x));
        // Corruption bias: drift_magnitude / 2 in log-target units at the base level.
        const double bias =
            corrupted ? (std::exp(0.5 * spec.drift_magnitude) - 1.0) * std::exp(kLogTargetBase)
                      : 0.0;
        s.y_pseudo = s.y_true + s.nu * noise_rng.normal() + bias;

        const double lm_mean = corrupted ? kLandmarkCorruptMean : kLandmarkMean;
        const double lm_std = corrupted ? kLandmarkCorruptStd : kLandmarkStd;
        s.landmark_proxy = std::max<std::int64_t>(0, std::llround(lm_mean + lm_std * landmark_rng.normal()));

        double step_norm2 = 0.0;
        for (int i = 0; i < spec.d_in; ++i) {
            const double d = x[static_cast<std::size_t>(i)] - x_prev[static_cast<std::size_t>(i)];
            step_norm2 += d * d;
        }
        const double speed = std::sqrt(step_norm2);
        speed_ema = t == 0 ? speed : 0.5 * speed_ema + 0.5 * speed;

        for (int i = 0; i < 3; ++i) {
            const std::size_t idx = static_cast<std::size_t>(i % spec.d_in);
            s.pose_proxy[static_cast<std::size_t>(i)] = x[idx];
            s.pose_proxy[static_cast<std::size_t>(3 + i)] = x[idx] - x_prev[idx];
        }
        s.pose_proxy[6] = speed;
        s.pose_proxy[7] = speed_ema;
        s.pose_proxy[8] = speed > 0.0 ? (x[0] - x_prev[0]) / speed : 0.0;
        s.pose_proxy[9] = 0.05 * pose_rng.normal();

        s.pose_available = !pose_rng.bernoulli(spec.pose_drop_rate);
        stream.push_back(std::move(s));
    }
    return stream;
}

namespace {

using nlohmann::json;

json sample_to_json(const StreamSample& s) {
    json j;
    j["t"] = s.t;
    j["x"] = s.x;
    j["y_true"] = s.y_true;
    j["y_pseudo"] = s.y_pseudo;
    j["nu"] = s.nu;
    j["pose_proxy"] = s.pose_proxy;
    j["landmark_proxy"] = s.landmark_proxy;
    j["env_id"] = s.env_id;
    j["pose_available"] = s.pose_available;
    return j;
}

template <typename T>
T require_field(const json& j, const char* key, long line) {
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(key, line);
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("field \"") + key + "\": " + e.what(), line);
    }
}

}  // namespace

void write_trace(const std::vector<StreamSample>& stream, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open trace file for writing: " + path.string());
    for (const auto& s : stream) out << sample_to_json(s).dump() << '\n';
    if (!out) throw IoError("failed while writing trace file: " + path.string());
}

std::vector<StreamSample> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file: " + path.string());
    std::vector<StreamSample> stream;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed JSON record", line_no);
        StreamSample s;
        s.t = require_field<std::int64_t>(j, "t", line_no);
        s.x = require_field<std::vector<double>>(j, "x", line_no);
        s.y_true = require_field<double>(j, "y_true", line_no);
        s.y_pseudo = require_field<double>(j, "y_pseudo", line_no);
        s.nu = require_field<double>(j, "nu", line_no);
        s.pose_proxy = require_field<std::array<double, 10>>(j, "pose_proxy", line_no);
        s.landmark_proxy = require_field<std::int64_t>(j, "landmark_proxy", line_no);
        s.env_id = require_field<std::int32_t>(j, "env_id", line_no);
        s.pose_available = require_field<bool>(j, "pose_available", line_no);
        stream.push_back(std::move(s));
    }
    return stream;
}

}  // namespace traingate
