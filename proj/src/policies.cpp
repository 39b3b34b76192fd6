#include "traingate/policies.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "traingate/errors.hpp"
#include "traingate/io_util.hpp"
#include "traingate/rng.hpp"

namespace traingate {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim_param(double v) {
    std::string s = format_double(v);
    return s;
}
}  // namespace

void PolicyKind::validate() const {
    switch (tag) {
        case Tag::NoTrain:
        case Tag::AllTrain:
            return;
        case Tag::Periodic:
            if (!(beta >= 0.0 && beta <= 1.0))
                throw std::invalid_argument("Periodic policy: beta must lie in [0,1]");
            return;
        case Tag::Oracle:
            if (!(alpha > 0.0)) throw std::invalid_argument("Oracle policy: alpha must be > 0");
            return;
        case Tag::Learned:
            if (!(alpha > 0.0)) throw std::invalid_argument("Learned policy: alpha must be > 0");
            if (!use_true_utility && net == nullptr)
                throw std::invalid_argument("Learned policy: decision net required");
            return;
    }
    throw std::invalid_argument("PolicyKind: unknown tag");
}

std::string PolicyKind::label() const {
    switch (tag) {
        case Tag::NoTrain: return "no_train";
        case Tag::AllTrain: return "all_train";
        case Tag::Periodic: return "periodic_b" + trim_param(beta);
        case Tag::Oracle: return "oracle_a" + trim_param(alpha);
        case Tag::Learned: return "learned_a" + trim_param(alpha);
    }
    return "unknown";
}

std::string PolicyKind::kind_name() const {
    switch (tag) {
        case Tag::NoTrain: return "no_train";
        case Tag::AllTrain: return "all_train";
        case Tag::Periodic: return "periodic";
        case Tag::Oracle: return "oracle";
        case Tag::Learned: return "learned";
    }
    return "unknown";
}

double PolicyKind::parameter() const {
    switch (tag) {
        case Tag::Periodic: return beta;
        case Tag::Oracle:
        case Tag::Learned: return alpha;
        default: return kNaN;
    }
}

std::vector<bool> fixed_periodic_schedule(double beta, int n) {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw std::invalid_argument("fixed_periodic_schedule: beta must lie in [0,1]");
    if (n < 0) throw std::invalid_argument("fixed_periodic_schedule: n must be >= 0");
    const std::int64_t total = std::llround(beta * static_cast<double>(n));
    std::vector<bool> marks(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
        const std::int64_t before = static_cast<std::int64_t>(i) * total / n;
        const std::int64_t after = static_cast<std::int64_t>(i + 1) * total / n;
        marks[static_cast<std::size_t>(i)] = after > before;
    }
    return marks;
}

OracleDecision oracle_decide(EnsembleLearner& learner, const StreamSample& current,
                             const LearnerReplayBuffer& buffer, const StreamSample& next,
                             double alpha, Rng& draw_rng, const CostModel& cost,
                             double epsilon_loss) {
    OracleDecision decision;
    const Snapshot before = learner.snapshot();
    const double loss_next_before = current_loss(learner, next);
    decision.step = train_step(learner, current, buffer, draw_rng, cost, epsilon_loss);
    const double loss_next_after = current_loss(learner, next);
    decision.u_true = relative_utility(loss_next_before, loss_next_after, epsilon_loss,
                                       &decision.degenerate);
    decision.action =
        decision.degenerate ? Action::NoTrain : greedy_decide(decision.u_true, alpha);
    if (decision.action == Action::Train) {
        decision.committed = true;  // reuse the probe step; no retraining
    } else {
        learner.restore(before);
    }
    return decision;
}

EpisodeResult run_episode(const PolicyKind& policy, const std::vector<StreamSample>& stream,
                          const EnsembleLearner& initial_learner, const CostModel& cost,
                          const EpisodeConfig& cfg, std::uint64_t episode_seed) {
    policy.validate();
    if (stream.size() < 3)
        throw std::invalid_argument("run_episode: stream must hold at least 3 samples");

    EnsembleLearner learner = initial_learner;
    learner.freeze_first_layer = true;
    learner.freeze_variance_head = true;

    LearnerReplayBuffer replay(cfg.replay_capacity, cfg.rho_buf);
    FeatureTracker tracker;

    const int n = static_cast<int>(stream.size());
    const int decided_total = n - 2;
    std::vector<bool> schedule;
    if (policy.tag == PolicyKind::Tag::Periodic)
        schedule = fixed_periodic_schedule(policy.beta, decided_total);

    // Per-episode copies; the caller's pretrained net is never mutated.
    DecisionNet net_copy(1, 1e-3, 0);
    DecisionBuffers buffers(cfg.target_capacity,
                            policy.source != nullptr ? *policy.source
                                                     : std::vector<UtilityExample>{});
    const bool uses_net = policy.tag == PolicyKind::Tag::Learned && !policy.use_true_utility;
    if (uses_net) net_copy = *policy.net;

    EpisodeResult result;
    result.records.reserve(stream.size());
    std::int64_t delta1_hits = 0;

    std::int32_t current_env = stream.front().env_id;
    for (int t = 0; t < n; ++t) {
        const StreamSample& sample = stream[static_cast<std::size_t>(t)];
        result.ledger.tick();
        if (sample.env_id != current_env) {
            current_env = sample.env_id;
            replay.clear();
        }

        const Uncertainty unc = learner.predict_with_uncertainty(sample.x);
        const double loss_now = current_loss(learner, sample);
        tracker.push(sample, unc);

        TimestepRecord rec;
        rec.t = sample.t;
        rec.u_pred = kNaN;
        rec.u_true = kNaN;
        rec.loss_before = loss_now;
        rec.loss_after = kNaN;
        rec.prediction = unc.mean;
        rec.y_true = sample.y_true;
        rec.pose_available = sample.pose_available;
        rec.delta1_hit = std::abs(unc.mean - sample.y_true) / sample.y_true <= 0.25;
        if (rec.delta1_hit) ++delta1_hits;

        rec.flops_inf = cost.inference_event();
        result.ledger.record(CostCategory::Inference, rec.flops_inf);

        const bool has_next = t + 1 < n;
        const StreamSample* next = has_next ? &stream[static_cast<std::size_t>(t) + 1] : nullptr;
        bool u_true_known = false;

        if (t >= 2) {
            Action action = Action::NoTrain;
            FeatureVector psi{};
            bool have_psi = false;

            switch (policy.tag) {
                case PolicyKind::Tag::NoTrain:
                    break;
                case PolicyKind::Tag::AllTrain:
                    if (sample.pose_available) action = Action::Train;
                    break;
                case PolicyKind::Tag::Periodic:
                    if (sample.pose_available && schedule[static_cast<std::size_t>(t - 2)])
                        action = Action::Train;
                    break;
                case PolicyKind::Tag::Oracle: {
                    if (sample.pose_available && has_next) {
                        Rng draw_rng = Rng::substream(episode_seed, "replay-draw",
                                                      static_cast<std::uint64_t>(t));
                        const OracleDecision od = oracle_decide(learner, sample, replay, *next,
                                                                policy.alpha, draw_rng, cost,
                                                                cfg.epsilon_loss);
                        rec.u_true = od.u_true;
                        u_true_known = true;
                        action = od.action;
                        if (od.committed) {
                            rec.loss_after = od.step.loss_after;
                            rec.flops_train = od.step.flops_train;
                            result.ledger.record(CostCategory::Train, od.step.flops_train);
                        }
                    }
                    break;
                }
                case PolicyKind::Tag::Learned: {
                    psi = tracker.features(loss_now);
                    have_psi = true;
                    if (policy.use_true_utility) {
                        if (has_next) {
                            Rng probe_rng = Rng::substream(episode_seed, "replay-draw",
                                                           static_cast<std::uint64_t>(t));
                            const TrueUtilityResult probe =
                                true_next_utility(learner, sample, replay, *next, probe_rng, cost,
                                                  cfg.epsilon_loss, /*commit=*/false);
                            rec.u_pred = probe.utility;
                            rec.u_true = probe.utility;
                            u_true_known = true;
                        } else {
                            rec.u_pred = 0.0;
                        }
                    } else {
                        rec.u_pred = net_copy.predict_utility(psi);
                    }
                    rec.flops_dec1 = cost.dec1_event();
                    result.ledger.record(CostCategory::Dec1, rec.flops_dec1);
                    if (sample.pose_available &&
                        greedy_decide(rec.u_pred, policy.alpha) == Action::Train)
                        action = Action::Train;
                    break;
                }
            }

            // Execute the train action for the policies that decided but have
            // not yet trained (Oracle committed inside oracle_decide).
            if (action == Action::Train && policy.tag != PolicyKind::Tag::Oracle) {
                double loss_next_before = 0.0;
                if (has_next) loss_next_before = current_loss(learner, *next);
                Rng draw_rng =
                    Rng::substream(episode_seed, "replay-draw", static_cast<std::uint64_t>(t));
                const TrainStepReport report =
                    train_step(learner, sample, replay, draw_rng, cost, cfg.epsilon_loss);
                rec.loss_after = report.loss_after;
                rec.flops_train = report.flops_train;
                result.ledger.record(CostCategory::Train, report.flops_train);
                if (has_next) {
                    const double loss_next_after = current_loss(learner, *next);
                    rec.u_true = relative_utility(loss_next_before, loss_next_after,
                                                  cfg.epsilon_loss);
                    u_true_known = true;
                }
                if (uses_net) {
                    // The extra inference that produced the utility label.
                    std::int64_t dec2 = report.flops_extra_inference;
                    if (!report.degenerate) {
                        if (!have_psi) psi = tracker.features(loss_now);
                        Rng dec_rng = Rng::substream(episode_seed, "decision-update",
                                                     static_cast<std::uint64_t>(t));
                        const OnlineUpdateStats stats = online_update_decision(
                            net_copy, psi, report.realized_utility, buffers, dec_rng, cfg.update);
                        dec2 += cost.decision_update_event(stats.epoch_batch_sizes);
                    }
                    rec.flops_dec2 = dec2;
                    result.ledger.record(CostCategory::Dec2, dec2);
                }
            }

            if (action == Action::Train) ++result.n_train;
            rec.action = action;
            ++result.decided;
        }

        // Counterfactual utility for steps that did not train (logging only,
        // never charged to the ledger).
        if (!u_true_known && cfg.log_true_utility && t >= 2 && has_next &&
            rec.action == Action::NoTrain) {
            Rng probe_rng =
                Rng::substream(episode_seed, "replay-draw", static_cast<std::uint64_t>(t));
            const TrueUtilityResult probe = true_next_utility(
                learner, sample, replay, *next, probe_rng, cost, cfg.epsilon_loss, false);
            rec.u_true = probe.utility;
        }

        replay.maybe_update(sample);
        result.records.push_back(rec);
    }

    result.delta1 = 100.0 * static_cast<double>(delta1_hits) / static_cast<double>(n);
    result.train_rate = result.decided > 0
                            ? static_cast<double>(result.n_train) / static_cast<double>(result.decided)
                            : 0.0;
    return result;
}

void write_timesteps_csv(const std::vector<TimestepRecord>& records,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open timesteps CSV for writing: " + path.string());
    out << "t,action,u_pred,u_true,loss_before,loss_after,pred,y_true,delta1_hit,"
           "flops_inf,flops_train,flops_dec1,flops_dec2,pose_available\n";
    for (const auto& r : records) {
        out << r.t << ',' << (r.action == Action::Train ? "Train" : "NoTrain") << ','
            << format_double(r.u_pred) << ',' << format_double(r.u_true) << ','
            << format_double(r.loss_before) << ',' << format_double(r.loss_after) << ','
            << format_double(r.prediction) << ',' << format_double(r.y_true) << ','
            << (r.delta1_hit ? 1 : 0) << ',' << r.flops_inf << ',' << r.flops_train << ','
            << r.flops_dec1 << ',' << r.flops_dec2 << ',' << (r.pose_available ? 1 : 0) << '\n';
    }
    if (!out) throw IoError("failed while writing timesteps CSV: " + path.string());
}

std::vector<bool> read_decisions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open timesteps CSV: " + path.string());
    std::vector<bool> decisions;
    std::string line;
    long line_no = 0;
    int decided_seen = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        std::stringstream ss(line);
        std::string t_field, action_field;
        if (!std::getline(ss, t_field, ',') || !std::getline(ss, action_field, ','))
            throw ParseError("short CSV row", line_no);
        // Decisions start on the third data row (t = 2).
        if (++decided_seen <= 2) continue;
        if (action_field != "Train" && action_field != "NoTrain")
            throw ParseError("unknown action \"" + action_field + "\"", line_no);
        decisions.push_back(action_field == "Train");
    }
    return decisions;
}

}  // namespace traingate
