#include "traingate/cost.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

#include "traingate/errors.hpp"

namespace traingate {

namespace flops {

std::int64_t dense_forward(std::int64_t in, std::int64_t out) { return 2 * in * out + out; }
std::int64_t dense_backward(std::int64_t in, std::int64_t out) { return 2 * dense_forward(in, out); }
std::int64_t adam_step(std::int64_t n_params) { return 10 * n_params; }
std::int64_t activation(std::int64_t n) { return n; }
std::int64_t normalize(std::int64_t n) { return 2 * n; }

std::int64_t summary_stats(std::int64_t n) {
    // mean: n, max: n-1, min: n-1, median: sort ~ n*ceil(log2 n) + 1
    const std::int64_t log2n = n > 1 ? std::bit_width(static_cast<std::uint64_t>(n - 1)) : 1;
    return n + 2 * (n - 1) + n * log2n + 1;
}

std::int64_t nll_eval(std::int64_t n) { return 6 * n; }
std::int64_t exp_eval(std::int64_t n) { return n; }
std::int64_t compare() { return 2; }

}  // namespace flops

std::int64_t flops_of(std::string_view op_kind, std::span<const std::int64_t> shape) {
    auto arg = [&](std::size_t i) -> std::int64_t {
        if (i >= shape.size())
            throw std::invalid_argument("flops_of: missing shape argument for " +
                                        std::string(op_kind));
        return shape[i];
    };
    if (op_kind == "dense_forward") return flops::dense_forward(arg(0), arg(1));
    if (op_kind == "dense_backward") return flops::dense_backward(arg(0), arg(1));
    if (op_kind == "adam_step") return flops::adam_step(arg(0));
    if (op_kind == "activation") return flops::activation(arg(0));
    if (op_kind == "normalize") return flops::normalize(arg(0));
    if (op_kind == "summary_stats") return flops::summary_stats(arg(0));
    if (op_kind == "nll") return flops::nll_eval(arg(0));
    if (op_kind == "exp") return flops::exp_eval(arg(0));
    if (op_kind == "compare") return flops::compare();
    throw std::invalid_argument("flops_of: unknown op kind \"" + std::string(op_kind) + "\"");
}

std::string_view category_name(CostCategory c) {
    switch (c) {
        case CostCategory::Inference: return "inference";
        case CostCategory::Train: return "train";
        case CostCategory::Dec1: return "dec1";
        case CostCategory::Dec2: return "dec2";
    }
    return "unknown";
}

void CostLedger::record(CostCategory category, std::int64_t flop_count) {
    if (flop_count < 0) throw std::invalid_argument("CostLedger::record: flops must be >= 0");
    entries_.push_back({category, flop_count});
    sums_[static_cast<int>(category)] += flop_count;
    counts_[static_cast<int>(category)] += 1;
    total_ += flop_count;
}

std::int64_t CostLedger::sum(CostCategory category) const {
    return sums_[static_cast<int>(category)];
}

CostLedger::Breakdown CostLedger::breakdown() const {
    Breakdown b;
    b.timesteps = timesteps_;
    b.total = total_;
    for (int c = 0; c < kCostCategories; ++c) {
        b.sums[c] = sums_[c];
        b.counts[c] = counts_[c];
        b.avg_per_timestep[c] =
            timesteps_ > 0 ? static_cast<double>(sums_[c]) / static_cast<double>(timesteps_) : 0.0;
    }
    return b;
}

void CostLedger::write_breakdown_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open breakdown CSV for writing: " + path.string());
    const Breakdown b = breakdown();
    out << "category,total_flops,avg_per_timestep\n";
    for (int c = 0; c < kCostCategories; ++c) {
        out << category_name(static_cast<CostCategory>(c)) << ',' << b.sums[c] << ','
            << b.avg_per_timestep[c] << '\n';
    }
    if (!out) throw IoError("failed while writing breakdown CSV: " + path.string());
}

std::int64_t CostModel::member_forward() const {
    return flops::dense_forward(d_in, hidden) + flops::activation(hidden) +
           flops::dense_forward(hidden, hidden) + flops::activation(hidden) +
           flops::dense_forward(hidden, 2);
}

std::int64_t CostModel::decision_forward_dense() const {
    return flops::dense_forward(decision_in, decision_hidden) +
           flops::dense_forward(decision_hidden, decision_hidden) +
           flops::dense_forward(decision_hidden, 1);
}

std::int64_t CostModel::decision_param_count() const {
    return static_cast<std::int64_t>(decision_in) * decision_hidden + decision_hidden +
           static_cast<std::int64_t>(decision_hidden) * decision_hidden + decision_hidden +
           decision_hidden + 1;
}

std::int64_t CostModel::inference_event() const {
    return deployed_scale * member_forward();
}

std::int64_t CostModel::dec1_event() const {
    const std::int64_t uncertainty = deployed_scale * (ensemble - 1) * member_forward();
    const std::int64_t reduce = flops::exp_eval(ensemble) + 6 * ensemble;  // member moments
    const std::int64_t stats = 2 * flops::summary_stats(4);                // aleatoric + epistemic
    const std::int64_t loss = flops::nll_eval(ensemble);
    const std::int64_t decide = flops::normalize(decision_in) + decision_forward_dense() +
                                flops::activation(2 * decision_hidden) + flops::compare();
    return uncertainty + reduce + stats + loss + decide;
}

std::int64_t CostModel::train_event(int batch_size, std::int64_t trainable_per_member) const {
    const std::int64_t per_example = member_forward() + 2 * member_forward();
    return deployed_scale * ensemble *
           (batch_size * per_example + flops::adam_step(trainable_per_member));
}

std::int64_t CostModel::label_inference_event() const {
    return deployed_scale * member_forward();
}

std::int64_t CostModel::decision_update_event(std::span<const int> epoch_batch_sizes) const {
    const std::int64_t per_example = flops::normalize(decision_in) + 3 * decision_forward_dense() +
                                     3 * flops::activation(2 * decision_hidden);
    std::int64_t total = 0;
    for (int b : epoch_batch_sizes)
        total += b * per_example + flops::adam_step(decision_param_count());
    return total;
}

}  // namespace traingate
