#include "traingate/decision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "traingate/errors.hpp"
#include "traingate/policies.hpp"
#include "traingate/rng.hpp"
#include "traingate/trainer.hpp"

namespace traingate {

SummaryStats summary_stats(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("summary_stats: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    SummaryStats s;
    double sum = 0.0;
    for (double v : sorted) sum += v;
    s.mean = sum / static_cast<double>(sorted.size());
    const std::size_t n = sorted.size();
    s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    s.min = sorted.front();
    s.max = sorted.back();
    return s;
}

FeatureVector assemble_features(std::span<const StreamSample> window,
                                std::span<const FrameUncertainty> uncertainties,
                                double current_loss_value) {
    if (window.size() != 3 || uncertainties.size() != 3)
        throw std::invalid_argument("assemble_features: window must hold exactly 3 frames");

    // Evaluation points: the three frames plus the current frame duplicated.
    std::array<double, 4> aleatoric{uncertainties[0].var_aleatoric, uncertainties[1].var_aleatoric,
                                    uncertainties[2].var_aleatoric, uncertainties[2].var_aleatoric};
    std::array<double, 4> epistemic{uncertainties[0].var_epistemic, uncertainties[1].var_epistemic,
                                    uncertainties[2].var_epistemic, uncertainties[2].var_epistemic};
    const SummaryStats sa = summary_stats(aleatoric);
    const SummaryStats se = summary_stats(epistemic);

    FeatureVector psi{};
    psi[kAleatoricOffset + 0] = sa.mean;
    psi[kAleatoricOffset + 1] = sa.median;
    psi[kAleatoricOffset + 2] = sa.max;
    psi[kAleatoricOffset + 3] = sa.min;
    psi[kEpistemicOffset + 0] = se.mean;
    psi[kEpistemicOffset + 1] = se.median;
    psi[kEpistemicOffset + 2] = se.max;
    psi[kEpistemicOffset + 3] = se.min;
    psi[kLossIndex] = current_loss_value;
    for (int f = 0; f < 3; ++f) {
        psi[kLandmarkOffset + f] = static_cast<double>(window[static_cast<std::size_t>(f)].landmark_proxy);
        for (int i = 0; i < 10; ++i)
            psi[kPoseOffset + 10 * f + i] = window[static_cast<std::size_t>(f)].pose_proxy[static_cast<std::size_t>(i)];
    }
    return psi;
}

FeatureVector assemble_features(std::span<const StreamSample> window,
                                const EnsembleLearner& learner) {
    if (window.size() != 3)
        throw std::invalid_argument("assemble_features: window must hold exactly 3 frames");
    std::array<FrameUncertainty, 3> unc;
    for (int f = 0; f < 3; ++f) {
        const Uncertainty u = learner.predict_with_uncertainty(window[static_cast<std::size_t>(f)].x);
        unc[static_cast<std::size_t>(f)] = {u.var_aleatoric, u.var_epistemic};
    }
    return assemble_features(window, unc, current_loss(learner, window[2]));
}

void FeatureTracker::push(const StreamSample& sample, const Uncertainty& uncertainty) {
    samples_.push_back(sample);
    uncertainties_.push_back({uncertainty.var_aleatoric, uncertainty.var_epistemic});
    if (samples_.size() > 3) {
        samples_.pop_front();
        uncertainties_.pop_front();
    }
}

FeatureVector FeatureTracker::features(double current_loss_value) const {
    if (samples_.size() != 3)
        throw std::invalid_argument("FeatureTracker: window not yet filled");
    std::array<StreamSample, 3> window{samples_[0], samples_[1], samples_[2]};
    std::array<FrameUncertainty, 3> unc{uncertainties_[0], uncertainties_[1], uncertainties_[2]};
    return assemble_features(window, unc, current_loss_value);
}

Action greedy_decide(double u_hat, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("greedy_decide: alpha must be > 0");
    return (-1.0 / alpha + u_hat > 0.0) ? Action::Train : Action::NoTrain;
}

namespace {

constexpr double kVarianceGate = 1e-12;

// Loss and dLoss/dpred for MSE + lambda * (1 - Pearson).
double decision_loss_impl(std::span<const double> preds, std::span<const double> targets,
                          double corr_weight, double* dpred) {
    if (preds.size() != targets.size())
        throw std::invalid_argument("decision_loss: length mismatch");
    if (preds.empty()) throw std::invalid_argument("decision_loss: empty sequences");
    const std::size_t n = preds.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = preds[i] - targets[i];
        loss += d * d * inv_n;
        if (dpred) dpred[i] = 2.0 * d * inv_n;
    }

    if (n < 2) return loss;
    double mean_p = 0.0, mean_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_p += preds[i] * inv_n;
        mean_t += targets[i] * inv_n;
    }
    double sp2 = 0.0, st2 = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = preds[i] - mean_p;
        const double t = targets[i] - mean_t;
        sp2 += p * p;
        st2 += t * t;
        cov += p * t;
    }
    if (sp2 * inv_n < kVarianceGate || st2 * inv_n < kVarianceGate) return loss;

    const double denom = std::sqrt(sp2 * st2);
    const double rho = cov / denom;
    loss += corr_weight * (1.0 - rho);
    if (dpred) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = preds[i] - mean_p;
            const double t = targets[i] - mean_t;
            const double drho = (t - (cov / sp2) * p) / denom;
            dpred[i] -= corr_weight * drho;
        }
    }
    return loss;
}

}  // namespace

double decision_loss(std::span<const double> preds, std::span<const double> targets,
                     double corr_weight) {
    return decision_loss_impl(preds, targets, corr_weight, nullptr);
}

// ---- DecisionNet ----

namespace {

struct DecisionLayout {
    int h;
    std::size_t w1() const { return 0; }
    std::size_t b1() const { return static_cast<std::size_t>(h) * kFeatureDim; }
    std::size_t w2() const { return b1() + h; }
    std::size_t b2() const { return w2() + static_cast<std::size_t>(h) * h; }
    std::size_t w3() const { return b2() + h; }
    std::size_t b3() const { return w3() + h; }
    std::size_t n() const { return b3() + 1; }
};

}  // namespace

DecisionNet::DecisionNet(int hidden, double learning_rate_, std::uint64_t seed)
    : learning_rate(learning_rate_), hidden_(hidden) {
    if (hidden < 1) throw std::invalid_argument("DecisionNet: hidden must be >= 1");
    const DecisionLayout lay{hidden_};
    params_.assign(lay.n(), 0.0);
    adam_m_.assign(lay.n(), 0.0);
    adam_v_.assign(lay.n(), 0.0);
    norm_mean_.fill(0.0);
    norm_std_.fill(1.0);
    Rng rng = Rng::substream(seed, "decision-init");
    auto init_layer = [&](std::size_t offset, int out, int in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (int k = 0; k < out * in; ++k)
            params_[offset + static_cast<std::size_t>(k)] = rng.uniform(-bound, bound);
    };
    init_layer(lay.w1(), hidden_, kFeatureDim);
    init_layer(lay.w2(), hidden_, hidden_);
    init_layer(lay.w3(), 1, hidden_);
}

void DecisionNet::set_normalization(std::span<const double> mean, std::span<const double> stddev) {
    if (mean.size() != kFeatureDim || stddev.size() != kFeatureDim)
        throw std::invalid_argument("set_normalization: vectors must have length 42");
    for (int i = 0; i < kFeatureDim; ++i) {
        norm_mean_[static_cast<std::size_t>(i)] = mean[static_cast<std::size_t>(i)];
        const double s = stddev[static_cast<std::size_t>(i)];
        // constant features pass through unscaled
        norm_std_[static_cast<std::size_t>(i)] = s < 1e-12 ? 1.0 : s;
    }
}

void DecisionNet::forward_normalized(const double* xn, double* a1, double* a2, double* out) const {
    const int h = hidden_;
    const DecisionLayout lay{h};
    const double* p = params_.data();
    const double* w1 = p + lay.w1();
    const double* b1 = p + lay.b1();
    const double* w2 = p + lay.w2();
    const double* b2 = p + lay.b2();
    const double* w3 = p + lay.w3();

    for (int j = 0; j < h; ++j) {
        double z = b1[j];
        const double* row = w1 + static_cast<std::size_t>(j) * kFeatureDim;
        for (int i = 0; i < kFeatureDim; ++i) z += row[i] * xn[i];
        a1[j] = std::tanh(z);
    }
    for (int j = 0; j < h; ++j) {
        double z = b2[j];
        const double* row = w2 + static_cast<std::size_t>(j) * h;
        for (int i = 0; i < h; ++i) z += row[i] * a1[i];
        a2[j] = std::tanh(z);
    }
    double y = p[lay.b3()];
    for (int i = 0; i < h; ++i) y += w3[i] * a2[i];
    *out = y;
}

double DecisionNet::predict_utility(const FeatureVector& psi) const {
    std::array<double, kFeatureDim> xn;
    for (int i = 0; i < kFeatureDim; ++i) {
        const double v = psi[static_cast<std::size_t>(i)];
        if (!std::isfinite(v))
            throw std::invalid_argument("predict_utility: non-finite feature entry");
        xn[static_cast<std::size_t>(i)] =
            (v - norm_mean_[static_cast<std::size_t>(i)]) / norm_std_[static_cast<std::size_t>(i)];
    }
    std::vector<double> a1(static_cast<std::size_t>(hidden_));
    std::vector<double> a2(static_cast<std::size_t>(hidden_));
    double out = 0.0;
    forward_normalized(xn.data(), a1.data(), a2.data(), &out);
    return out;
}

namespace {

// Shared forward+backward over a batch; writes the flat gradient and returns
// the batch decision_loss.
double decision_gradient_impl(const DecisionNet& net, const std::vector<double>& params, int h,
                              std::span<const UtilityExample> batch, double corr_weight,
                              std::vector<double>& grad) {
    const DecisionLayout lay{h};
    grad.assign(lay.n(), 0.0);
    const std::size_t n = batch.size();

    std::vector<double> xn(n * kFeatureDim);
    std::vector<double> a1(n * static_cast<std::size_t>(h));
    std::vector<double> a2(n * static_cast<std::size_t>(h));
    std::vector<double> preds(n), targets(n);

    const auto& mean = net.norm_mean();
    const auto& stddev = net.norm_std();
    for (std::size_t s = 0; s < n; ++s) {
        double* xs = xn.data() + s * kFeatureDim;
        for (int i = 0; i < kFeatureDim; ++i)
            xs[i] = (batch[s].psi[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) /
                    stddev[static_cast<std::size_t>(i)];
        targets[s] = batch[s].u;
    }

    const double* p = params.data();
    const double* w1 = p + lay.w1();
    const double* b1 = p + lay.b1();
    const double* w2 = p + lay.w2();
    const double* b2 = p + lay.b2();
    const double* w3 = p + lay.w3();

    for (std::size_t s = 0; s < n; ++s) {
        const double* xs = xn.data() + s * kFeatureDim;
        double* a1s = a1.data() + s * static_cast<std::size_t>(h);
        double* a2s = a2.data() + s * static_cast<std::size_t>(h);
        for (int j = 0; j < h; ++j) {
            double z = b1[j];
            const double* row = w1 + static_cast<std::size_t>(j) * kFeatureDim;
            for (int i = 0; i < kFeatureDim; ++i) z += row[i] * xs[i];
            a1s[j] = std::tanh(z);
        }
        for (int j = 0; j < h; ++j) {
            double z = b2[j];
            const double* row = w2 + static_cast<std::size_t>(j) * h;
            for (int i = 0; i < h; ++i) z += row[i] * a1s[i];
            a2s[j] = std::tanh(z);
        }
        double y = p[lay.b3()];
        for (int i = 0; i < h; ++i) y += w3[i] * a2s[i];
        preds[s] = y;
    }

    std::vector<double> dpred(n);
    const double loss = decision_loss_impl(preds, targets, corr_weight, dpred.data());

    std::vector<double> d2(static_cast<std::size_t>(h)), d1(static_cast<std::size_t>(h));
    double* g_w1 = grad.data() + lay.w1();
    double* g_b1 = grad.data() + lay.b1();
    double* g_w2 = grad.data() + lay.w2();
    double* g_b2 = grad.data() + lay.b2();
    double* g_w3 = grad.data() + lay.w3();
    double* g_b3 = grad.data() + lay.b3();

    for (std::size_t s = 0; s < n; ++s) {
        const double dy = dpred[s];
        if (dy == 0.0) continue;
        const double* xs = xn.data() + s * kFeatureDim;
        const double* a1s = a1.data() + s * static_cast<std::size_t>(h);
        const double* a2s = a2.data() + s * static_cast<std::size_t>(h);
        g_b3[0] += dy;
        for (int i = 0; i < h; ++i) {
            g_w3[i] += dy * a2s[i];
            d2[static_cast<std::size_t>(i)] = w3[i] * dy * (1.0 - a2s[i] * a2s[i]);
        }
        for (int j = 0; j < h; ++j) {
            const double dj = d2[static_cast<std::size_t>(j)];
            g_b2[j] += dj;
            double* g_row = g_w2 + static_cast<std::size_t>(j) * h;
            for (int i = 0; i < h; ++i) g_row[i] += dj * a1s[i];
        }
        for (int i = 0; i < h; ++i) {
            double acc = 0.0;
            for (int j = 0; j < h; ++j) acc += w2[static_cast<std::size_t>(j) * h + i] * d2[static_cast<std::size_t>(j)];
            d1[static_cast<std::size_t>(i)] = acc * (1.0 - a1s[i] * a1s[i]);
        }
        for (int j = 0; j < h; ++j) {
            const double dj = d1[static_cast<std::size_t>(j)];
            g_b1[j] += dj;
            double* g_row = g_w1 + static_cast<std::size_t>(j) * kFeatureDim;
            for (int i = 0; i < kFeatureDim; ++i) g_row[i] += dj * xs[i];
        }
    }
    return loss;
}

}  // namespace

double DecisionNet::update_batch(std::span<const UtilityExample> batch, double corr_weight) {
    if (batch.empty()) throw std::invalid_argument("update_batch: batch must be non-empty");
    std::vector<double> grad;
    const double loss = decision_gradient_impl(*this, params_, hidden_, batch, corr_weight, grad);
    adam_step_ += 1;
    const double bc1 = 1.0 - std::pow(EnsembleLearner::kBeta1, static_cast<double>(adam_step_));
    const double bc2 = 1.0 - std::pow(EnsembleLearner::kBeta2, static_cast<double>(adam_step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_m_[i] = EnsembleLearner::kBeta1 * adam_m_[i] + (1.0 - EnsembleLearner::kBeta1) * grad[i];
        adam_v_[i] =
            EnsembleLearner::kBeta2 * adam_v_[i] + (1.0 - EnsembleLearner::kBeta2) * grad[i] * grad[i];
        params_[i] -= learning_rate * (adam_m_[i] / bc1) /
                      (std::sqrt(adam_v_[i] / bc2) + EnsembleLearner::kEpsilon);
    }
    return loss;
}

std::vector<double> DecisionNet::gradient(std::span<const UtilityExample> batch,
                                          double corr_weight) const {
    if (batch.empty()) throw std::invalid_argument("gradient: batch must be non-empty");
    std::vector<double> grad;
    decision_gradient_impl(*this, params_, hidden_, batch, corr_weight, grad);
    return grad;
}

double DecisionNet::evaluate_loss(std::span<const UtilityExample> batch, double corr_weight) const {
    std::vector<double> preds(batch.size()), targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        preds[i] = predict_utility(batch[i].psi);
        targets[i] = batch[i].u;
    }
    return decision_loss(preds, targets, corr_weight);
}

void DecisionNet::save_checkpoint(const std::filesystem::path& path,
                                  std::span<const UtilityExample> source_buffer) const {
    nlohmann::json j;
    j["kind"] = "decision-net";
    j["input"] = kFeatureDim;
    j["hidden"] = hidden_;
    j["learning_rate"] = learning_rate;
    j["params"] = params_;
    j["adam_m"] = adam_m_;
    j["adam_v"] = adam_v_;
    j["adam_step"] = adam_step_;
    j["norm_mean"] = norm_mean_;
    j["norm_std"] = norm_std_;
    nlohmann::json source = nlohmann::json::array();
    for (const auto& ex : source_buffer) {
        nlohmann::json row;
        row["psi"] = ex.psi;
        row["u"] = ex.u;
        source.push_back(std::move(row));
    }
    j["source_buffer"] = std::move(source);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed while writing checkpoint: " + path.string());
}

DecisionNet::LoadedCheckpoint DecisionNet::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed checkpoint JSON: " + path.string());
    for (const char* key : {"kind", "input", "hidden", "params", "norm_mean", "norm_std"})
        if (!j.contains(key)) throw SchemaError(key);
    if (j["kind"] != "decision-net") throw StateError("checkpoint kind is not decision-net");
    if (j["input"].get<int>() != kFeatureDim)
        throw StateError("decision checkpoint input dimension must be 42");
    DecisionNet net(j["hidden"].get<int>(), j.value("learning_rate", 1e-3), 0);
    auto params = j["params"].get<std::vector<double>>();
    if (params.size() != net.params_.size())
        throw StateError("decision checkpoint parameter count does not match header");
    net.params_ = std::move(params);
    if (j.contains("adam_m")) net.adam_m_ = j["adam_m"].get<std::vector<double>>();
    if (j.contains("adam_v")) net.adam_v_ = j["adam_v"].get<std::vector<double>>();
    if (net.adam_m_.size() != net.params_.size() || net.adam_v_.size() != net.params_.size())
        throw StateError("decision checkpoint optimizer arrays do not match header");
    net.adam_step_ = j.value("adam_step", std::int64_t{0});
    net.norm_mean_ = j["norm_mean"].get<std::array<double, kFeatureDim>>();
    net.norm_std_ = j["norm_std"].get<std::array<double, kFeatureDim>>();
    LoadedCheckpoint loaded{std::move(net), {}};
    if (j.contains("source_buffer")) {
        for (const auto& row : j["source_buffer"]) {
            UtilityExample ex;
            ex.psi = row.at("psi").get<FeatureVector>();
            ex.u = row.at("u").get<double>();
            loaded.source_buffer.push_back(std::move(ex));
        }
    }
    return loaded;
}

// ---- Buffers and online updates ----

void DecisionBuffers::push_target(const UtilityExample& example) {
    if (target_.size() == target_capacity_) target_.pop_front();
    target_.push_back(example);
}

std::vector<UtilityExample> DecisionBuffers::sample_source(std::span<const UtilityExample> dataset,
                                                           std::size_t size, Rng& rng) {
    if (dataset.size() <= size) return {dataset.begin(), dataset.end()};
    std::vector<UtilityExample> out;
    out.reserve(size);
    for (std::size_t idx : rng.sample_without_replacement(dataset.size(), size))
        out.push_back(dataset[idx]);
    return out;
}

OnlineUpdateStats online_update_decision(DecisionNet& net, const FeatureVector& psi,
                                         double u_realized, DecisionBuffers& buffers, Rng& rng,
                                         const DecisionUpdateConfig& cfg) {
    buffers.push_target({psi, u_realized});
    OnlineUpdateStats stats;
    stats.epoch_batch_sizes.reserve(static_cast<std::size_t>(cfg.epochs));
    const std::size_t older_targets = buffers.target_size() - 1;  // exclude the pair just pushed
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<UtilityExample> batch;
        batch.push_back({psi, u_realized});
        const std::size_t tk = std::min<std::size_t>(static_cast<std::size_t>(cfg.target_draws), older_targets);
        for (std::size_t idx : rng.sample_without_replacement(older_targets, tk))
            batch.push_back(buffers.target_at(idx));
        const std::size_t sk =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.source_draws), buffers.source().size());
        for (std::size_t idx : rng.sample_without_replacement(buffers.source().size(), sk))
            batch.push_back(buffers.source()[idx]);
        net.update_batch(batch, cfg.corr_weight);
        stats.epoch_batch_sizes.push_back(static_cast<int>(batch.size()));
    }
    return stats;
}

// ---- Offline pretraining ----

std::vector<UtilityExample> collect_pretraining_dataset(std::span<const EnvironmentSpec> specs,
                                                        std::span<const double> frequencies,
                                                        std::uint64_t seed,
                                                        const EnsembleLearner& pretrained,
                                                        const CostModel& cost,
                                                        const CollectionConfig& cfg) {
    if (specs.empty())
        throw std::invalid_argument("collect_pretraining_dataset: specs must be non-empty");
    for (double f : frequencies)
        if (!(f >= 0.0 && f <= 1.0))
            throw std::invalid_argument("collect_pretraining_dataset: frequencies must lie in [0,1]");

    std::vector<UtilityExample> rows;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto stream = generate_stream(specs[i], Rng::derive_seed(seed, "collect-stream", i));
        const int decided = static_cast<int>(stream.size()) - 2;
        if (decided <= 0) continue;
        for (std::size_t f = 0; f < frequencies.size(); ++f) {
            const auto schedule = fixed_periodic_schedule(frequencies[f], decided);
            const std::uint64_t episode_seed =
                Rng::derive_seed(seed, "collect-episode", (static_cast<std::uint64_t>(i) << 32) | f);

            EnsembleLearner learner = pretrained;
            learner.freeze_first_layer = true;
            learner.freeze_variance_head = true;
            LearnerReplayBuffer replay(cfg.replay_capacity, cfg.rho_buf);
            FeatureTracker tracker;

            std::int32_t current_env = stream.front().env_id;
            for (std::size_t t = 0; t < stream.size(); ++t) {
                const StreamSample& sample = stream[t];
                if (sample.env_id != current_env) {
                    current_env = sample.env_id;
                    replay.clear();
                }
                const Uncertainty unc = learner.predict_with_uncertainty(sample.x);
                const double loss = current_loss(learner, sample);
                tracker.push(sample, unc);
                if (t >= 2 && schedule[t - 2] && sample.pose_available) {
                    const FeatureVector psi = tracker.features(loss);
                    Rng draw_rng = Rng::substream(episode_seed, "replay-draw", t);
                    const TrainStepReport report =
                        train_step(learner, sample, replay, draw_rng, cost, cfg.epsilon_loss);
                    // Degenerate-denominator steps stay in the offline dataset
                    // as their guarded value 0: these are the states where the
                    // train action has nothing to gain, and the predictor must
                    // see them to learn that region at all.
                    rows.push_back({psi, report.realized_utility});
                }
                replay.maybe_update(sample);
            }
        }
    }
    return rows;
}

PretrainResult pretrain_decision(std::span<const UtilityExample> dataset, std::uint64_t seed,
                                 const PretrainConfig& cfg) {
    if (dataset.size() < 2)
        throw std::invalid_argument("pretrain_decision: dataset must hold at least 2 rows");

    std::array<double, kFeatureDim> mean{}, stddev{};
    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    for (const auto& row : dataset)
        for (int i = 0; i < kFeatureDim; ++i) mean[static_cast<std::size_t>(i)] += row.psi[static_cast<std::size_t>(i)] * inv_n;
    for (const auto& row : dataset)
        for (int i = 0; i < kFeatureDim; ++i) {
            const double d = row.psi[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
            stddev[static_cast<std::size_t>(i)] += d * d * inv_n;
        }
    for (auto& s : stddev) s = std::sqrt(s);

    DecisionNet net(cfg.hidden, cfg.learning_rate, Rng::derive_seed(seed, "decision-init"));
    net.set_normalization(mean, stddev);

    Rng rng = Rng::substream(seed, "decision-pretrain");
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::size_t holdout_n = static_cast<std::size_t>(
        std::llround(cfg.holdout_fraction * static_cast<double>(dataset.size())));
    holdout_n = std::max<std::size_t>(1, std::min(holdout_n, dataset.size() - 1));
    std::vector<UtilityExample> holdout, train;
    holdout.reserve(holdout_n);
    train.reserve(dataset.size() - holdout_n);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < holdout_n ? holdout : train).push_back(dataset[order[i]]);

    double best_loss = net.evaluate_loss(holdout, cfg.corr_weight);
    std::vector<double> best_params = net.params();
    int epochs_since_best = 0;

    std::vector<std::size_t> train_order(train.size());
    for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(train_order);
        for (std::size_t start = 0; start < train_order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(train_order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<UtilityExample> batch;
            batch.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) batch.push_back(train[train_order[k]]);
            net.update_batch(batch, cfg.corr_weight);
        }
        const double holdout_loss = net.evaluate_loss(holdout, cfg.corr_weight);
        if (holdout_loss < best_loss - 1e-12) {
            best_loss = holdout_loss;
            best_params = net.params();
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            break;
        }
    }
    net.params() = best_params;

    PretrainResult result{std::move(net), best_loss, train.size(), std::move(holdout)};
    return result;
}

// ---- Dataset I/O ----

void write_utility_dataset(std::span<const UtilityExample> rows,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset for writing: " + path.string());
    for (const auto& row : rows) {
        nlohmann::json j;
        j["psi"] = row.psi;
        j["u"] = row.u;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed while writing dataset: " + path.string());
}

std::vector<UtilityExample> read_utility_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path.string());
    std::vector<UtilityExample> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed JSON record", line_no);
        if (!j.contains("psi")) throw SchemaError("psi", line_no);
        if (!j.contains("u")) throw SchemaError("u", line_no);
        UtilityExample ex;
        try {
            ex.psi = j["psi"].get<FeatureVector>();
            ex.u = j["u"].get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad dataset record: ") + e.what(), line_no);
        }
        rows.push_back(std::move(ex));
    }
    return rows;
}

}  // namespace traingate
