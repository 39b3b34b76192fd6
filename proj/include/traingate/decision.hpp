#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <vector>

#include "traingate/cost.hpp"
#include "traingate/learner.hpp"
#include "traingate/stream.hpp"

namespace traingate {

class Rng;

inline constexpr int kFeatureDim = 42;
using FeatureVector = std::array<double, kFeatureDim>;

// Fixed feature layout:
//   [0..4)   aleatoric-variance stats over the evaluation window (mean, median, max, min)
//   [4..8)   epistemic-variance stats, same order
//   [8]      current loss
//   [9..12)  landmark counts for frames t-2, t-1, t
//   [12..42) pose channels for frames t-2, t-1, t (10 per frame)
// The evaluation window holds the three frames' per-frame variances plus the
// current frame duplicated, giving four points for the statistics.
inline constexpr int kAleatoricOffset = 0;
inline constexpr int kEpistemicOffset = 4;
inline constexpr int kLossIndex = 8;
inline constexpr int kLandmarkOffset = 9;
inline constexpr int kPoseOffset = 12;

struct SummaryStats {
    double mean = 0.0, median = 0.0, max = 0.0, min = 0.0;
};
SummaryStats summary_stats(std::span<const double> values);

struct FrameUncertainty {
    double var_aleatoric = 0.0;
    double var_epistemic = 0.0;
};

// Raw (un-normalized) feature vector from a 3-frame window whose per-frame
// uncertainties were computed when each frame was processed. Normalization
// happens inside the decision net, with statistics frozen at pretraining.
FeatureVector assemble_features(std::span<const StreamSample> window,
                                std::span<const FrameUncertainty> uncertainties,
                                double current_loss_value);

// Convenience overload that evaluates all three frames' uncertainties and the
// current loss under the learner's present weights.
FeatureVector assemble_features(std::span<const StreamSample> window,
                                const EnsembleLearner& learner);

// Rolling 3-frame window an episode feeds one (sample, uncertainty) pair per
// timestep; per-frame values are cached rather than recomputed under newer
// weights, matching how per-frame uncertainty maps are produced online.
class FeatureTracker {
public:
    void push(const StreamSample& sample, const Uncertainty& uncertainty);
    bool ready() const { return samples_.size() == 3; }
    FeatureVector features(double current_loss_value) const;

private:
    std::deque<StreamSample> samples_;
    std::deque<FrameUncertainty> uncertainties_;
};

enum class Action { NoTrain, Train };

// Greedy policy: Train iff -1/alpha + u_hat > 0 (strict; ties do not train).
Action greedy_decide(double u_hat, double alpha);

// MSE plus corr_weight * (1 - Pearson correlation). The correlation term is
// omitted when either sequence has population variance below 1e-12 or fewer
// than two entries.
double decision_loss(std::span<const double> preds, std::span<const double> targets,
                     double corr_weight = 1.0);

struct UtilityExample {
    FeatureVector psi{};
    double u = 0.0;
};

// Utility predictor phi: a fully connected 42 -> H -> H -> 1 net (tanh
// hidden, H = 32) over z-normalized features, trained with Adam on
// decision_loss.
class DecisionNet {
public:
    DecisionNet(int hidden, double learning_rate, std::uint64_t seed);

    double predict_utility(const FeatureVector& psi) const;

    // One Adam step on decision_loss over the batch; returns the pre-step loss.
    double update_batch(std::span<const UtilityExample> batch, double corr_weight);

    // Analytic gradient of decision_loss w.r.t. all parameters (testing hook).
    std::vector<double> gradient(std::span<const UtilityExample> batch, double corr_weight) const;

    double evaluate_loss(std::span<const UtilityExample> batch, double corr_weight) const;

    void set_normalization(std::span<const double> mean, std::span<const double> stddev);
    const std::array<double, kFeatureDim>& norm_mean() const { return norm_mean_; }
    const std::array<double, kFeatureDim>& norm_std() const { return norm_std_; }

    int hidden() const { return hidden_; }
    std::size_t n_params() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::int64_t adam_step_count() const { return adam_step_; }
    double learning_rate = 1e-3;

    void save_checkpoint(const std::filesystem::path& path,
                         std::span<const UtilityExample> source_buffer = {}) const;
    struct LoadedCheckpoint;
    static LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

private:
    void forward_normalized(const double* xn, double* a1, double* a2, double* out) const;

    int hidden_ = 32;
    std::vector<double> params_;
    std::vector<double> adam_m_, adam_v_;
    std::int64_t adam_step_ = 0;
    std::array<double, kFeatureDim> norm_mean_{};
    std::array<double, kFeatureDim> norm_std_{};
};

struct DecisionNet::LoadedCheckpoint {
    DecisionNet net;
    std::vector<UtilityExample> source_buffer;
};

// Target buffer: FIFO of online (psi, realized utility) pairs, capacity 300.
// Source buffer: fixed sample of the pretraining dataset, set at construction.
class DecisionBuffers {
public:
    DecisionBuffers(std::size_t target_capacity, std::vector<UtilityExample> source)
        : target_capacity_(target_capacity), source_(std::move(source)) {}

    void push_target(const UtilityExample& example);
    std::size_t target_size() const { return target_.size(); }
    std::size_t target_capacity() const { return target_capacity_; }
    const UtilityExample& target_at(std::size_t i) const { return target_[i]; }
    const std::vector<UtilityExample>& source() const { return source_; }

    // 3000 uniform draws from a dataset (with replacement only if the dataset
    // is smaller than the requested size; draws are distinct otherwise).
    static std::vector<UtilityExample> sample_source(std::span<const UtilityExample> dataset,
                                                     std::size_t size, Rng& rng);

private:
    std::size_t target_capacity_;
    std::deque<UtilityExample> target_;
    std::vector<UtilityExample> source_;
};

struct DecisionUpdateConfig {
    int epochs = 10;
    int target_draws = 32;
    int source_draws = 32;
    double corr_weight = 1.0;
};

struct OnlineUpdateStats {
    std::vector<int> epoch_batch_sizes;
};

// Online decision-net update after a train action: push (psi, realized U)
// into the target buffer, then run `epochs` steps, each on a composite batch
// of the current pair, up to 32 distinct target draws (excluding the pair
// just pushed) and up to 32 distinct source draws.
OnlineUpdateStats online_update_decision(DecisionNet& net, const FeatureVector& psi,
                                         double u_realized, DecisionBuffers& buffers, Rng& rng,
                                         const DecisionUpdateConfig& cfg = {});

// ---- Offline pretraining ----

struct CollectionConfig {
    std::size_t replay_capacity = 300;
    double rho_buf = 0.5;
    double epsilon_loss = 1e-12;
};

// Labeled (psi, realized utility) pairs gathered by running fixed-periodic
// training episodes at each frequency over each spec, starting every episode
// from a copy of the pretrained learner. Degenerate-denominator steps are
// excluded.
std::vector<UtilityExample> collect_pretraining_dataset(std::span<const EnvironmentSpec> specs,
                                                        std::span<const double> frequencies,
                                                        std::uint64_t seed,
                                                        const EnsembleLearner& pretrained,
                                                        const CostModel& cost,
                                                        const CollectionConfig& cfg = {});

struct PretrainConfig {
    int hidden = 32;
    double learning_rate = 1e-3;
    int batch_size = 512;
    int max_epochs = 200;
    int patience = 20;
    double corr_weight = 1.0;
    double holdout_fraction = 0.1;
};

struct PretrainResult {
    DecisionNet net;
    double holdout_loss = 0.0;
    std::size_t train_rows = 0;
    std::vector<UtilityExample> holdout;
};

PretrainResult pretrain_decision(std::span<const UtilityExample> dataset, std::uint64_t seed,
                                 const PretrainConfig& cfg = {});

// JSONL dataset rows: {"psi": [42 reals], "u": real}.
void write_utility_dataset(std::span<const UtilityExample> rows, const std::filesystem::path& path);
std::vector<UtilityExample> read_utility_dataset(const std::filesystem::path& path);

}  // namespace traingate
