#include "doctest.h"

#include <cmath>

#include "traingate/rng.hpp"
#include "traingate/trainer.hpp"

using namespace traingate;

namespace {

StreamSample make_sample(std::vector<double> x, double y, std::int64_t t = 0) {
    StreamSample s;
    s.t = t;
    s.x = std::move(x);
    s.y_true = std::max(y, 1e-3);
    s.y_pseudo = y;
    return s;
}

CostModel small_cost() {
    CostModel cost;
    cost.d_in = 2;
    cost.hidden = 4;
    cost.ensemble = 2;
    cost.deployed_scale = 1;
    return cost;
}

}  // namespace

TEST_CASE("empty buffer always inserts") {
    LearnerReplayBuffer buffer(300, 0.5);
    CHECK(buffer.maybe_update(make_sample({0.0, 0.0}, 1.0)));
    CHECK(buffer.size() == 1);
}

TEST_CASE("duplicate inputs are rejected") {
    LearnerReplayBuffer buffer(300, 0.5);
    CHECK(buffer.maybe_update(make_sample({0.4, 0.4}, 1.0)));
    CHECK_FALSE(buffer.maybe_update(make_sample({0.4, 0.4}, 2.0)));
    CHECK(buffer.size() == 1);
}

TEST_CASE("capacity holds at 300 with FIFO eviction") {
    LearnerReplayBuffer buffer(300, 0.5);
    for (int i = 0; i < 301; ++i)
        CHECK(buffer.maybe_update(make_sample({static_cast<double>(i), 0.0}, 1.0, i)));
    CHECK(buffer.size() == 300);
    // The first insert (x[0] = 0) was evicted; the oldest survivor is x[0] = 1.
    CHECK(buffer.at(0).x[0] == 1.0);
    CHECK(buffer.at(299).x[0] == 300.0);
}

TEST_CASE("insertion respects the distance threshold") {
    LearnerReplayBuffer buffer(10, 1.0);
    CHECK(buffer.maybe_update(make_sample({0.0, 0.0}, 1.0)));
    CHECK_FALSE(buffer.maybe_update(make_sample({0.5, 0.0}, 1.0)));   // distance 0.5 <= 1
    CHECK_FALSE(buffer.maybe_update(make_sample({1.0, 0.0}, 1.0)));   // boundary, not >
    CHECK(buffer.maybe_update(make_sample({1.5, 0.0}, 1.0)));
}

TEST_CASE("current_loss is the mean per-member NLL and zero for perfect fits") {
    EnsembleLearner learner(1, 1, 2, 1e-4, 3);
    learner.members()[0].params() = {0, 0, 0, 0, 0, 0, 2.0, 0.0};  // mu=2, s=0
    learner.members()[1].params() = {0, 0, 0, 0, 0, 0, 2.0, 0.0};
    const StreamSample exact = make_sample({0.0}, 2.0);
    CHECK(current_loss(learner, exact) == 0.0);

    learner.members()[1].params()[6] = 4.0;  // mu=4
    const double expected = 0.5 * (nll_loss(2.0, 0.0, 2.0) + nll_loss(4.0, 0.0, 2.0));
    CHECK(current_loss(learner, exact) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("relative utility matches the definition") {
    CHECK(relative_utility(2.0, 1.5, 1e-12) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(relative_utility(1.0, 1.0, 1e-12) == 0.0);
    CHECK(relative_utility(1.0, 1.1, 1e-12) == doctest::Approx(-0.1).epsilon(1e-12));
    bool degenerate = false;
    CHECK(relative_utility(1e-13, 0.5, 1e-12, &degenerate) == 0.0);
    CHECK(degenerate);
    // Negative losses floor to zero inside the ratio, capping utility at 1.
    CHECK(relative_utility(0.5, -2.0, 1e-12) == 1.0);
}

TEST_CASE("train_step composes batches of at most three samples") {
    Rng init(4);
    EnsembleLearner learner(2, 4, 2, 1e-3, 11);
    const CostModel cost = small_cost();
    LearnerReplayBuffer buffer(300, 0.0);

    Rng rng0 = Rng::substream(1, "draw", 0);
    const auto r0 = train_step(learner, make_sample({0.1, 0.1}, 1.0), buffer, rng0, cost);
    CHECK(r0.batch_size == 1);  // empty buffer

    buffer.maybe_update(make_sample({0.5, 0.5}, 1.2));
    Rng rng1 = Rng::substream(1, "draw", 1);
    const auto r1 = train_step(learner, make_sample({0.1, 0.1}, 1.0), buffer, rng1, cost);
    CHECK(r1.batch_size == 2);

    buffer.maybe_update(make_sample({-0.5, 0.6}, 0.9));
    buffer.maybe_update(make_sample({0.9, -0.8}, 1.1));
    Rng rng2 = Rng::substream(1, "draw", 2);
    const auto r2 = train_step(learner, make_sample({0.1, 0.1}, 1.0), buffer, rng2, cost);
    CHECK(r2.batch_size == 3);
    CHECK(r2.realized_utility <= 1.0);
    CHECK(r2.flops_train == cost.train_event(3, static_cast<std::int64_t>(learner.trainable_param_count())));
    CHECK(r2.flops_extra_inference == cost.label_inference_event());
}

TEST_CASE("true utility is positive on a convex toy when next equals current") {
    EnsembleLearner learner(1, 4, 2, 1e-3, 21);
    learner.freeze_variance_head = true;
    // Bias the mean heads away from the target so one step must help.
    for (auto& member : learner.members()) member.params().back() = 0.0;
    const StreamSample sample = make_sample({0.5}, 2.0);
    LearnerReplayBuffer buffer(300, 0.5);
    const CostModel cost = small_cost();
    Rng rng = Rng::substream(9, "draw");
    const auto result = true_next_utility(learner, sample, buffer, sample, rng, cost, 1e-12, false);
    CHECK_FALSE(result.degenerate);
    CHECK(result.utility > 0.0);
    CHECK(result.utility <= 1.0);
}

TEST_CASE("a stationary learner has exactly zero true utility") {
    EnsembleLearner learner(1, 1, 2, 1e-3, 5);
    // mu = 1, s = 0.5 for both members; residual zero, variance head frozen,
    // first layer frozen: every unfrozen gradient vanishes.
    for (auto& member : learner.members()) member.params() = {0, 0, 0, 0, 0, 0, 1.0, 0.5};
    learner.freeze_variance_head = true;
    learner.freeze_first_layer = true;
    const StreamSample current = make_sample({0.3}, 1.0);
    const StreamSample next = make_sample({0.9}, 1.0);
    LearnerReplayBuffer buffer(300, 0.5);
    const CostModel cost = small_cost();
    Rng rng = Rng::substream(10, "draw");
    const auto result = true_next_utility(learner, current, buffer, next, rng, cost, 1e-12, false);
    CHECK(result.utility == 0.0);
}

TEST_CASE("uncommitted probes leave the learner bitwise unchanged") {
    Rng noise(6);
    EnsembleLearner learner(2, 4, 2, 1e-3, 31);
    for (auto& member : learner.members())
        for (auto& p : member.params()) p = noise.uniform(-1.0, 1.0);
    LearnerReplayBuffer buffer(300, 0.0);
    buffer.maybe_update(make_sample({0.2, -0.2}, 1.4));
    const std::vector<std::vector<double>> before{learner.members()[0].params(),
                                                  learner.members()[1].params()};
    const CostModel cost = small_cost();
    Rng rng = Rng::substream(11, "draw");
    true_next_utility(learner, make_sample({0.1, 0.3}, 1.1), buffer, make_sample({0.4, 0.1}, 1.2),
                      rng, cost, 1e-12, false);
    CHECK(learner.members()[0].params() == before[0]);
    CHECK(learner.members()[1].params() == before[1]);
}

TEST_CASE("realized and true utility coincide under the exact no-motion case") {
    Rng noise(7);
    EnsembleLearner learner(2, 4, 2, 1e-3, 41);
    for (auto& member : learner.members())
        for (auto& p : member.params()) p = noise.uniform(-0.8, 0.8);
    LearnerReplayBuffer buffer(300, 0.0);
    buffer.maybe_update(make_sample({0.6, 0.6}, 1.3));
    const StreamSample current = make_sample({0.1, -0.4}, 1.5);
    const CostModel cost = small_cost();

    Rng rng_a = Rng::substream(12, "draw");
    const auto probe = true_next_utility(learner, current, buffer, current, rng_a, cost, 1e-12, false);
    Rng rng_b = Rng::substream(12, "draw");
    const auto step = train_step(learner, current, buffer, rng_b, cost);
    CHECK(probe.utility == step.realized_utility);
}
