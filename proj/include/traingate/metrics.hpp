#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace traingate {

// Percentage of predictions within 25% relative error of the (positive)
// ground truth: 100 * |{i : |p_i - y_i| / y_i <= 0.25}| / n.
double delta1(std::span<const double> preds, std::span<const double> truths);

// Relative accuracy gain recovered versus always-training:
// 100 * (d_method - d_none) / (d_all - d_none).
double recovery(double d_method, double d_none, double d_all);

// Histogram of windowed train rates: sliding windows of length W, rate
// binned into the 11 buckets centered on 0%, 10%, ..., 100%, then
// Laplace-smoothed so every bin is positive.
struct DecisionHistogram {
    static constexpr int kBins = 11;
    std::array<double, kBins> freq{};

    static DecisionHistogram from_decisions(const std::vector<bool>& decisions, int window,
                                            double laplace_eps);
};

// KL(P || Q) in bits over two already-normalized distributions.
double kl_bits(std::span<const double> p, std::span<const double> q);

// KL between the windowed decision histograms of a method (a) and a
// reference (b), in bits. Defaults: window 50, Laplace epsilon 1e-3.
double decision_kl(const std::vector<bool>& decisions_a, const std::vector<bool>& decisions_b,
                   int window = 50, double laplace_eps = 1e-3);

struct EpisodeSummary {
    std::string policy;       // "no_train", "all_train", "periodic", "oracle", "learned"
    double parameter = 0.0;   // beta or alpha; NaN for the baselines
    std::uint64_t seed = 0;
    double delta1 = 0.0;
    std::int64_t n_train = 0;
    std::int64_t decided = 0;
    std::int64_t c_total = 0;
    std::int64_t flops_inf = 0;
    std::int64_t flops_train = 0;
    std::int64_t flops_dec1 = 0;
    std::int64_t flops_dec2 = 0;
};

struct SweepRow {
    std::string policy;
    double parameter = 0.0;
    double mean_delta1 = 0.0, std_delta1 = 0.0;
    double mean_n_train = 0.0, std_n_train = 0.0;
    double mean_c_total = 0.0;
    double mean_flops_inf = 0.0, mean_flops_train = 0.0;
    double mean_flops_dec1 = 0.0, mean_flops_dec2 = 0.0;
    int episodes = 0;
};

// Group episodes by (policy, parameter) and average across seeds. Row order
// is fixed (baselines, periodic by beta, oracle by alpha, learned by alpha)
// regardless of input order; stds are population standard deviations.
std::vector<SweepRow> aggregate_sweep(std::span<const EpisodeSummary> episodes);

void write_tradeoff_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

// One (x = mean N_train, y = mean delta1) series CSV per policy, plus a
// self-contained SVG scatter of all series.
void write_plot_series(std::span<const SweepRow> rows, const std::filesystem::path& directory);
void write_tradeoff_svg(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace traingate
