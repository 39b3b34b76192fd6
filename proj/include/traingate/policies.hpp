#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "traingate/cost.hpp"
#include "traingate/decision.hpp"
#include "traingate/learner.hpp"
#include "traingate/stream.hpp"
#include "traingate/trainer.hpp"

namespace traingate {

// Training-selection strategy for one episode.
//   NoTrain   - never train (lower baseline)
//   AllTrain  - train at every decided timestep (upper baseline)
//   Periodic  - train on an evenly spaced fraction beta of decided timesteps
//   Oracle    - greedy threshold on the ground-truth next-step utility,
//               charged zero decision overhead
//   Learned   - greedy threshold on the decision net's predicted utility
struct PolicyKind {
    enum class Tag { NoTrain, AllTrain, Periodic, Oracle, Learned };
    Tag tag = Tag::NoTrain;
    double beta = 0.0;   // Periodic
    double alpha = 0.0;  // Oracle / Learned
    const DecisionNet* net = nullptr;                   // Learned
    const std::vector<UtilityExample>* source = nullptr;  // Learned: decision source buffer
    // Diagnostic predictor: drive the Learned policy with the true next-step
    // utility instead of the net (must reproduce Oracle's action sequence).
    bool use_true_utility = false;

    void validate() const;
    std::string label() const;      // e.g. "periodic_b0.4", "learned_a500"
    std::string kind_name() const;  // e.g. "periodic"
    // beta or alpha; NaN for the parameterless baselines
    double parameter() const;
};

struct TimestepRecord {
    std::int64_t t = 0;
    Action action = Action::NoTrain;
    double u_pred;      // Learned only; NaN otherwise
    double u_true;      // ground-truth next-step utility when computable
    double loss_before; // current-sample loss before any training
    double loss_after;  // after training; NaN when not trained
    double prediction;  // ensemble mean on x_t
    double y_true;
    bool delta1_hit = false;
    std::int64_t flops_inf = 0;
    std::int64_t flops_train = 0;
    std::int64_t flops_dec1 = 0;
    std::int64_t flops_dec2 = 0;
    bool pose_available = true;
};

struct EpisodeConfig {
    std::size_t replay_capacity = 300;
    double rho_buf = 0.5;
    double epsilon_loss = 1e-12;
    std::size_t target_capacity = 300;
    DecisionUpdateConfig update;
    // Probe the counterfactual true utility for logging on steps that did not
    // train (simulator-side only, never charged).
    bool log_true_utility = true;
};

struct EpisodeResult {
    std::vector<TimestepRecord> records;
    CostLedger ledger;
    double delta1 = 0.0;
    std::int64_t n_train = 0;
    std::int64_t decided = 0;
    double train_rate = 0.0;
};

// Evenly spaced train marks over n decided timesteps, exactly round(beta*n)
// of them (integer Bresenham spacing).
std::vector<bool> fixed_periodic_schedule(double beta, int n);

struct OracleDecision {
    Action action = Action::NoTrain;
    double u_true = 0.0;
    bool degenerate = false;
    TrainStepReport step;
    bool committed = false;
};

// Probe-train on the current sample, threshold the measured next-step
// utility, and keep the trained weights only on a Train decision (the probe
// step is reused rather than retrained).
OracleDecision oracle_decide(EnsembleLearner& learner, const StreamSample& current,
                             const LearnerReplayBuffer& buffer, const StreamSample& next,
                             double alpha, Rng& draw_rng, const CostModel& cost,
                             double epsilon_loss);

// One full pass over the stream. Decisions start at t = 2 (first full
// 3-frame feature window); earlier steps are inference-only. Training is
// masked whenever pose_available is false. Deterministic for fixed
// (policy, stream, learner, episode_seed).
EpisodeResult run_episode(const PolicyKind& policy, const std::vector<StreamSample>& stream,
                          const EnsembleLearner& initial_learner, const CostModel& cost,
                          const EpisodeConfig& cfg, std::uint64_t episode_seed);

// Per-timestep CSV, columns exactly:
// t,action,u_pred,u_true,loss_before,loss_after,pred,y_true,delta1_hit,
// flops_inf,flops_train,flops_dec1,flops_dec2,pose_available
void write_timesteps_csv(const std::vector<TimestepRecord>& records,
                         const std::filesystem::path& path);

// Train/no-train decisions for the decided timesteps (t >= 2) of a
// timesteps CSV, in order.
std::vector<bool> read_decisions_csv(const std::filesystem::path& path);

}  // namespace traingate
