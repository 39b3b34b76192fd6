#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "traingate/cost.hpp"
#include "traingate/learner.hpp"
#include "traingate/stream.hpp"

namespace traingate {

class Rng;

// FIFO replay store for the online learner. A sample enters only when its
// input is at least rho away (Euclidean) from everything already stored.
class LearnerReplayBuffer {
public:
    explicit LearnerReplayBuffer(std::size_t capacity = 300, double rho = 0.5)
        : capacity_(capacity), rho_(rho) {}

    // Insert iff min distance to stored inputs exceeds rho (an empty buffer
    // always accepts). Evicts the oldest entry at capacity.
    bool maybe_update(const StreamSample& sample);

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const StreamSample& at(std::size_t i) const { return entries_[i]; }

    // The buffer holds samples from the current environment only; drop
    // everything when the environment changes.
    void clear() { entries_.clear(); }

    // k distinct stored samples, uniform without replacement.
    std::vector<const StreamSample*> draw(Rng& rng, std::size_t k) const;

private:
    std::size_t capacity_;
    double rho_;
    std::deque<StreamSample> entries_;
};

struct TrainStepReport {
    double loss_before = 0.0;        // l_a on the current sample
    double loss_after = 0.0;         // l_b after one training step
    double realized_utility = 0.0;   // (l_a - l_b) / l_a, denominator-guarded
    bool degenerate = false;         // l_a fell below epsilon_loss
    int batch_size = 0;
    std::int64_t flops_train = 0;
    std::int64_t flops_extra_inference = 0;
};

// Mean over members of the NLL on the sample's pseudo-label. Doubles as the
// decision feature "current loss" and as l_a for the realized utility.
double current_loss(const EnsembleLearner& learner, const StreamSample& sample);

// Relative loss improvement (l_a - l_b) / l_a. Returns 0 with the degenerate
// flag when l_a < epsilon. l_b is floored at zero inside the ratio, so the
// result never exceeds 1 even though the NLL itself can go negative.
double relative_utility(double loss_before, double loss_after, double epsilon,
                        bool* degenerate = nullptr);

// The train action: one step on {current sample} plus up to two distinct
// replayed samples, measuring the realized utility on the current sample via
// one additional inference. Draw order is consumed from `draw_rng`, so two
// calls with equal state and equal generators produce identical results.
TrainStepReport train_step(EnsembleLearner& learner, const StreamSample& current,
                           const LearnerReplayBuffer& buffer, Rng& draw_rng,
                           const CostModel& cost, double epsilon_loss = 1e-12);

struct TrueUtilityResult {
    double utility = 0.0;
    bool degenerate = false;
    double loss_next_before = 0.0;
    double loss_next_after = 0.0;
    TrainStepReport step;
};

// Ground-truth utility of training now, measured on the next sample:
// snapshot, measure l_a on next, train on current, measure l_b on next,
// then restore unless commit is set. Simulator-only peek; the policies that
// use it are charged no decision overhead.
TrueUtilityResult true_next_utility(EnsembleLearner& learner, const StreamSample& current,
                                    const LearnerReplayBuffer& buffer, const StreamSample& next,
                                    Rng& draw_rng, const CostModel& cost,
                                    double epsilon_loss = 1e-12, bool commit = false);

}  // namespace traingate
