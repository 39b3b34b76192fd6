#include "traingate/trainer.hpp"

#include <cmath>

#include "traingate/rng.hpp"

namespace traingate {

bool LearnerReplayBuffer::maybe_update(const StreamSample& sample) {
    for (const auto& stored : entries_) {
        double dist2 = 0.0;
        for (std::size_t i = 0; i < sample.x.size(); ++i) {
            const double d = sample.x[i] - stored.x[i];
            dist2 += d * d;
        }
        if (std::sqrt(dist2) <= rho_) return false;
    }
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(sample);
    return true;
}

std::vector<const StreamSample*> LearnerReplayBuffer::draw(Rng& rng, std::size_t k) const {
    const auto indices = rng.sample_without_replacement(entries_.size(), k);
    std::vector<const StreamSample*> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) out.push_back(&entries_[idx]);
    return out;
}

double current_loss(const EnsembleLearner& learner, const StreamSample& sample) {
    double sum = 0.0;
    for (const auto& member : learner.members()) {
        const MlpOutput out = member.forward(sample.x);
        sum += nll_loss(out.mu, out.logvar, sample.y_pseudo);
    }
    return sum / static_cast<double>(learner.ensemble_size());
}

double relative_utility(double loss_before, double loss_after, double epsilon, bool* degenerate) {
    if (degenerate) *degenerate = false;
    if (!(loss_before >= epsilon)) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    const double floored_after = loss_after > 0.0 ? loss_after : 0.0;
    return (loss_before - floored_after) / loss_before;
}

TrainStepReport train_step(EnsembleLearner& learner, const StreamSample& current,
                           const LearnerReplayBuffer& buffer, Rng& draw_rng,
                           const CostModel& cost, double epsilon_loss) {
    TrainStepReport report;
    report.loss_before = current_loss(learner, current);

    std::vector<LabeledExample> batch;
    batch.push_back({current.x, current.y_pseudo});
    for (const StreamSample* replayed : buffer.draw(draw_rng, 2))
        batch.push_back({replayed->x, replayed->y_pseudo});
    report.batch_size = static_cast<int>(batch.size());

    learner.train_batch(batch);

    report.loss_after = current_loss(learner, current);
    report.realized_utility = relative_utility(report.loss_before, report.loss_after, epsilon_loss,
                                               &report.degenerate);
    report.flops_train = cost.train_event(report.batch_size,
                                          static_cast<std::int64_t>(learner.trainable_param_count()));
    report.flops_extra_inference = cost.label_inference_event();
    return report;
}

TrueUtilityResult true_next_utility(EnsembleLearner& learner, const StreamSample& current,
                                    const LearnerReplayBuffer& buffer, const StreamSample& next,
                                    Rng& draw_rng, const CostModel& cost, double epsilon_loss,
                                    bool commit) {
    TrueUtilityResult result;
    const Snapshot before = learner.snapshot();
    result.loss_next_before = current_loss(learner, next);
    result.step = train_step(learner, current, buffer, draw_rng, cost, epsilon_loss);
    result.loss_next_after = current_loss(learner, next);
    result.utility = relative_utility(result.loss_next_before, result.loss_next_after, epsilon_loss,
                                      &result.degenerate);
    if (!commit) learner.restore(before);
    return result;
}

}  // namespace traingate
