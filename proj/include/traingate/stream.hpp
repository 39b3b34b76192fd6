#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace traingate {

// One timestep of the simulated environment.
//
// `y_pseudo` is the only training signal the learner ever sees; `y_true`
// exists for evaluation. `pose_proxy` and `landmark_proxy` are the motion
// and texture context channels the decision features summarize, and
// `pose_available` gates whether the train action may run at this step.
struct StreamSample {
    std::int64_t t = 0;
    std::vector<double> x;
    double y_true = 0.0;
    double y_pseudo = 0.0;
    double nu = 0.0;                       // aleatoric noise scale behind y_pseudo
    std::array<double, 10> pose_proxy{};
    std::int64_t landmark_proxy = 0;
    std::int32_t env_id = 0;
    bool pose_available = true;
};

// Parameters of a piecewise-drifting environment. The target function jumps
// at segment boundaries by `drift_magnitude`; while a corruption burst is
// active the pseudo-label picks up a constant bias of drift_magnitude / 2,
// landmark counts drop and the input walk speeds up, so the failure is
// visible in the context channels.
struct EnvironmentSpec {
    int n_segments = 4;
    int segment_length = 250;
    int d_in = 8;
    double drift_magnitude = 0.4;
    // One [nu_lo, nu_hi] pair, or one per segment.
    std::vector<std::array<double, 2>> noise_schedule = {{0.6, 1.3}};
    double corruption_rate = 0.05;
    double pose_drop_rate = 0.02;

    void validate() const;                    // throws ConfigError naming the field
    std::array<double, 2> noise_range(int segment) const;
    int total_steps() const { return n_segments * segment_length; }
};

// Deterministic stream for (spec, seed). Pure function; every stochastic
// component draws from its own sub-stream of `seed`.
std::vector<StreamSample> generate_stream(const EnvironmentSpec& spec, std::uint64_t seed);

// JSON Lines trace files; keys per record:
//   t, x, y_true, y_pseudo, nu, pose_proxy, landmark_proxy, env_id, pose_available
// Numbers round-trip losslessly.
void write_trace(const std::vector<StreamSample>& stream, const std::filesystem::path& path);
std::vector<StreamSample> read_trace(const std::filesystem::path& path);

}  // namespace traingate
