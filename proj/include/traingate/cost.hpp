#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace traingate {

// Analytic FLOP formulas. Conventions:
//   dense forward  = 2*in*out + out
//   dense backward = 2 * forward
//   Adam step      = 10 FLOPs per updated parameter
//   activation     = 1 FLOP per unit, exp/compare counted per element
namespace flops {

std::int64_t dense_forward(std::int64_t in, std::int64_t out);
std::int64_t dense_backward(std::int64_t in, std::int64_t out);
std::int64_t adam_step(std::int64_t n_params);
std::int64_t activation(std::int64_t n);
std::int64_t normalize(std::int64_t n);       // subtract mean, divide by std
std::int64_t summary_stats(std::int64_t n);   // mean, median (sort), max, min
std::int64_t nll_eval(std::int64_t n);
std::int64_t exp_eval(std::int64_t n);
std::int64_t compare();                       // greedy threshold test

}  // namespace flops

// String-keyed dispatcher over the formulas above; unknown kinds are an
// argument error. Shapes: dense_* {in, out}; adam_step {params};
// activation/normalize/summary_stats/nll/exp {n}; compare {}.
std::int64_t flops_of(std::string_view op_kind, std::span<const std::int64_t> shape);

enum class CostCategory { Inference = 0, Train = 1, Dec1 = 2, Dec2 = 3 };
inline constexpr int kCostCategories = 4;
std::string_view category_name(CostCategory c);

// Per-episode FLOP ledger: C_tot = N*C_inf + N_train*C_train
//                                + N*C_dec1 + N_train*C_dec2.
// Integer arithmetic throughout; total always equals the sum of the
// per-entry records and of the per-category sums.
class CostLedger {
public:
    struct Entry {
        CostCategory category;
        std::int64_t flops;
    };
    struct Breakdown {
        std::int64_t sums[kCostCategories] = {0, 0, 0, 0};
        std::int64_t counts[kCostCategories] = {0, 0, 0, 0};
        double avg_per_timestep[kCostCategories] = {0, 0, 0, 0};
        std::int64_t timesteps = 0;
        std::int64_t total = 0;
    };

    void tick() { ++timesteps_; }  // advance the per-timestep denominator
    void record(CostCategory category, std::int64_t flop_count);
    std::int64_t total() const { return total_; }
    std::int64_t sum(CostCategory category) const;
    std::int64_t timesteps() const { return timesteps_; }
    Breakdown breakdown() const;
    const std::vector<Entry>& entries() const { return entries_; }

    void write_breakdown_csv(const std::filesystem::path& path) const;

private:
    std::vector<Entry> entries_;
    std::int64_t sums_[kCostCategories] = {0, 0, 0, 0};
    std::int64_t counts_[kCostCategories] = {0, 0, 0, 0};
    std::int64_t total_ = 0;
    std::int64_t timesteps_ = 0;
};

// Per-event charge amounts for one episode.
//
// The ledger models the deployment the simulator stands in for: perception-
// side work (inference, training, uncertainty passes, the label inference)
// runs on a network `deployed_scale` times the size of the desk-scale
// learner, while the decision net runs at its real size. Without the scale
// the decision overhead would dwarf the training cost and the cost/accuracy
// trade-off the ledger exists to expose would vanish.
struct CostModel {
    std::int64_t deployed_scale = 10000;
    int d_in = 8;
    int hidden = 16;
    int ensemble = 5;
    int decision_in = 42;
    int decision_hidden = 32;

    std::int64_t member_forward() const;
    std::int64_t decision_forward_dense() const;  // dense layers only: 4865 at default shape

    // Every timestep: one deployed inference pass.
    std::int64_t inference_event() const;
    // Decision overhead at every decided timestep: the E-1 extra uncertainty
    // passes, feature statistics and normalization, the decision-net forward
    // and the greedy comparison.
    std::int64_t dec1_event() const;
    // Training the deployed model for one step on `batch_size` examples.
    std::int64_t train_event(int batch_size, std::int64_t trainable_per_member) const;
    // The single additional inference that measures the realized utility.
    std::int64_t label_inference_event() const;
    // Decision-net update: one pass per example per epoch plus Adam steps.
    std::int64_t decision_update_event(std::span<const int> epoch_batch_sizes) const;

    std::int64_t decision_param_count() const;
};

}  // namespace traingate
