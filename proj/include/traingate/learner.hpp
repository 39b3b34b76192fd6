#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace traingate {

class Rng;

// Heteroscedastic regression loss: L = 0.5 * exp(-s) * (y - mu)^2 + 0.5 * s.
// With y = a pseudo-label this is the self-supervised loss the whole
// decision problem is built on.
double nll_loss(double mu, double logvar, double y);

struct MlpOutput {
    double mu = 0.0;
    double logvar = 0.0;
};

// Flat parameter layout of one member net d_in -> H -> H -> 2 (tanh hidden).
// Output row 0 is the mean head, row 1 the log-variance head.
struct MlpArch {
    int d_in = 0;
    int hidden = 0;

    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const { return static_cast<std::size_t>(hidden) * d_in; }
    std::size_t w2_offset() const { return b1_offset() + hidden; }
    std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(hidden) * hidden; }
    std::size_t w3_offset() const { return b2_offset() + hidden; }
    std::size_t b3_offset() const { return w3_offset() + 2 * static_cast<std::size_t>(hidden); }
    std::size_t n_params() const { return b3_offset() + 2; }

    bool operator==(const MlpArch&) const = default;
};

class MlpMember {
public:
    MlpMember(int d_in, int hidden);

    // Symmetric uniform fan-in init for weights, zero biases.
    static MlpMember random_init(int d_in, int hidden, Rng& rng);

    MlpOutput forward(std::span<const double> x) const;

    const MlpArch& arch() const { return arch_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

private:
    friend class EnsembleLearner;
    // Forward pass that also fills the hidden activations needed by backprop.
    MlpOutput forward_cached(std::span<const double> x, double* a1, double* a2) const;

    MlpArch arch_;
    std::vector<double> params_;
};

struct LabeledExample {
    std::vector<double> x;
    double y = 0.0;
};

struct Uncertainty {
    double mean = 0.0;
    double var_aleatoric = 0.0;  // average of exp(s_i)
    double var_epistemic = 0.0;  // population variance of member means
};

// Opaque full copy of parameters and optimizer state; restoring reproduces
// forward outputs bitwise.
struct Snapshot {
    MlpArch arch;
    struct MemberState {
        std::vector<double> params, adam_m, adam_v;
        std::int64_t adam_step = 0;
    };
    std::vector<MemberState> members;
};

// Ensemble of E identically-shaped members, each with its own Adam state.
// Epistemic uncertainty comes from member disagreement, aleatoric from the
// log-variance head. During online adaptation the first hidden layer and
// the variance head's output row are frozen.
class EnsembleLearner {
public:
    EnsembleLearner(int d_in, int hidden, int ensemble_size, double learning_rate,
                    std::uint64_t seed);

    // One Adam step per member on the mean NLL over the batch. Returns the
    // pre-step mean loss (mean over members and examples).
    double train_batch(std::span<const LabeledExample> batch);

    // Analytic gradients of the mean NLL, one flat vector per member.
    // Freezing flags are not applied here; they act only in train_batch.
    std::vector<std::vector<double>> gradient(std::span<const LabeledExample> batch) const;

    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

    // Zero all Adam moments and step counts (fresh optimizer for deployment).
    void reset_optimizer();

    Uncertainty predict_with_uncertainty(std::span<const double> x) const;

    void save_checkpoint(const std::filesystem::path& path) const;
    static EnsembleLearner load_checkpoint(const std::filesystem::path& path);

    int d_in() const { return arch_.d_in; }
    int hidden() const { return arch_.hidden; }
    int ensemble_size() const { return static_cast<int>(members_.size()); }
    std::int64_t adam_step_count() const { return adam_[0].step; }
    // Parameters per member that the current freezing flags leave trainable.
    std::size_t trainable_param_count() const;

    std::vector<MlpMember>& members() { return members_; }
    const std::vector<MlpMember>& members() const { return members_; }

    double learning_rate = 1e-4;
    bool freeze_first_layer = false;
    bool freeze_variance_head = false;

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

private:
    struct AdamState {
        std::vector<double> m, v;
        std::int64_t step = 0;
    };
    bool frozen(std::size_t index) const;

    MlpArch arch_;
    std::vector<MlpMember> members_;
    std::vector<AdamState> adam_;
};

}  // namespace traingate
