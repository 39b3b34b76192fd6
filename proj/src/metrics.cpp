#include "traingate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "traingate/errors.hpp"
#include "traingate/io_util.hpp"

namespace traingate {

double delta1(std::span<const double> preds, std::span<const double> truths) {
    if (preds.size() != truths.size()) throw std::invalid_argument("delta1: length mismatch");
    if (preds.empty()) throw std::invalid_argument("delta1: empty sequences");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!(truths[i] > 0.0)) throw std::invalid_argument("delta1: truths must be positive");
        if (std::abs(preds[i] - truths[i]) / truths[i] <= 0.25) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double recovery(double d_method, double d_none, double d_all) {
    if (d_all == d_none)
        throw std::invalid_argument("recovery undefined: d_all equals d_none");
    return 100.0 * (d_method - d_none) / (d_all - d_none);
}

DecisionHistogram DecisionHistogram::from_decisions(const std::vector<bool>& decisions, int window,
                                                    double laplace_eps) {
    if (window < 1) throw std::invalid_argument("DecisionHistogram: window must be >= 1");
    if (decisions.size() < static_cast<std::size_t>(window))
        throw std::invalid_argument("DecisionHistogram: sequence shorter than window");

    std::array<std::int64_t, kBins> counts{};
    int in_window = 0;
    for (int i = 0; i < window; ++i)
        if (decisions[static_cast<std::size_t>(i)]) ++in_window;
    auto bin_of = [&](int trained) {
        const double rate = static_cast<double>(trained) / static_cast<double>(window);
        const int bin = static_cast<int>(std::llround(rate * 10.0));
        return std::clamp(bin, 0, kBins - 1);
    };
    counts[static_cast<std::size_t>(bin_of(in_window))] += 1;
    for (std::size_t i = static_cast<std::size_t>(window); i < decisions.size(); ++i) {
        in_window += (decisions[i] ? 1 : 0) - (decisions[i - static_cast<std::size_t>(window)] ? 1 : 0);
        counts[static_cast<std::size_t>(bin_of(in_window))] += 1;
    }

    DecisionHistogram hist;
    std::int64_t total = 0;
    for (auto c : counts) total += c;
    const double denom = static_cast<double>(total) + kBins * laplace_eps;
    for (int b = 0; b < kBins; ++b)
        hist.freq[static_cast<std::size_t>(b)] =
            (static_cast<double>(counts[static_cast<std::size_t>(b)]) + laplace_eps) / denom;
    return hist;
}

double kl_bits(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_bits: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log2(p[i] / q[i]);
    }
    return kl;
}

double decision_kl(const std::vector<bool>& decisions_a, const std::vector<bool>& decisions_b, int window,
                   double laplace_eps) {
    if (decisions_a.size() != decisions_b.size())
        throw std::invalid_argument("decision_kl: length mismatch");
    const DecisionHistogram ha = DecisionHistogram::from_decisions(decisions_a, window, laplace_eps);
    const DecisionHistogram hb = DecisionHistogram::from_decisions(decisions_b, window, laplace_eps);
    return kl_bits(ha.freq, hb.freq);
}

namespace {

int policy_rank(const std::string& policy) {
    if (policy == "no_train") return 0;
    if (policy == "all_train") return 1;
    if (policy == "periodic") return 2;
    if (policy == "oracle") return 3;
    if (policy == "learned") return 4;
    return 5;
}

struct GroupKey {
    int rank;
    std::string policy;
    double parameter;
    bool operator<(const GroupKey& other) const {
        if (rank != other.rank) return rank < other.rank;
        if (policy != other.policy) return policy < other.policy;
        const bool a_nan = std::isnan(parameter);
        const bool b_nan = std::isnan(other.parameter);
        if (a_nan != b_nan) return a_nan;
        if (a_nan && b_nan) return false;
        return parameter < other.parameter;
    }
};

struct Accumulator {
    std::vector<double> delta1, n_train, c_total, f_inf, f_train, f_dec1, f_dec2;
};

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double pop_std(const std::vector<double>& xs, double mean) {
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

std::vector<SweepRow> aggregate_sweep(std::span<const EpisodeSummary> episodes) {
    std::map<GroupKey, Accumulator> groups;
    for (const auto& ep : episodes) {
        Accumulator& acc = groups[GroupKey{policy_rank(ep.policy), ep.policy, ep.parameter}];
        acc.delta1.push_back(ep.delta1);
        acc.n_train.push_back(static_cast<double>(ep.n_train));
        acc.c_total.push_back(static_cast<double>(ep.c_total));
        acc.f_inf.push_back(static_cast<double>(ep.flops_inf));
        acc.f_train.push_back(static_cast<double>(ep.flops_train));
        acc.f_dec1.push_back(static_cast<double>(ep.flops_dec1));
        acc.f_dec2.push_back(static_cast<double>(ep.flops_dec2));
    }
    std::vector<SweepRow> rows;
    rows.reserve(groups.size());
    for (const auto& [key, acc] : groups) {
        SweepRow row;
        row.policy = key.policy;
        row.parameter = key.parameter;
        row.mean_delta1 = mean_of(acc.delta1);
        row.std_delta1 = pop_std(acc.delta1, row.mean_delta1);
        row.mean_n_train = mean_of(acc.n_train);
        row.std_n_train = pop_std(acc.n_train, row.mean_n_train);
        row.mean_c_total = mean_of(acc.c_total);
        row.mean_flops_inf = mean_of(acc.f_inf);
        row.mean_flops_train = mean_of(acc.f_train);
        row.mean_flops_dec1 = mean_of(acc.f_dec1);
        row.mean_flops_dec2 = mean_of(acc.f_dec2);
        row.episodes = static_cast<int>(acc.delta1.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_tradeoff_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open trade-off CSV for writing: " + path.string());
    out << "policy,parameter,mean_delta1,std_delta1,mean_n_train,std_n_train,mean_c_total,"
           "mean_flops_inf,mean_flops_train,mean_flops_dec1,mean_flops_dec2,episodes\n";
    for (const auto& r : rows) {
        out << r.policy << ',' << format_double(r.parameter) << ',' << format_double(r.mean_delta1)
            << ',' << format_double(r.std_delta1) << ',' << format_double(r.mean_n_train) << ','
            << format_double(r.std_n_train) << ',' << format_double(r.mean_c_total) << ','
            << format_double(r.mean_flops_inf) << ',' << format_double(r.mean_flops_train) << ','
            << format_double(r.mean_flops_dec1) << ',' << format_double(r.mean_flops_dec2) << ','
            << r.episodes << '\n';
    }
    if (!out) throw IoError("failed while writing trade-off CSV: " + path.string());
}

void write_plot_series(std::span<const SweepRow> rows, const std::filesystem::path& directory) {
    std::map<std::string, std::vector<const SweepRow*>> by_policy;
    for (const auto& r : rows) by_policy[r.policy].push_back(&r);
    for (const auto& [policy, series] : by_policy) {
        const auto path = directory / ("plot_" + policy + ".csv");
        std::ofstream out(path);
        if (!out) throw IoError("cannot open plot series for writing: " + path.string());
        out << "n_train,delta1\n";
        for (const SweepRow* r : series)
            out << format_double(r->mean_n_train) << ',' << format_double(r->mean_delta1) << '\n';
        if (!out) throw IoError("failed while writing plot series: " + path.string());
    }
}

void write_tradeoff_svg(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    const int width = 640, height = 480, margin = 56;
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 100.0;
    if (!rows.empty()) {
        x_min = y_min = std::numeric_limits<double>::infinity();
        x_max = y_max = -std::numeric_limits<double>::infinity();
        for (const auto& r : rows) {
            x_min = std::min(x_min, r.mean_n_train);
            x_max = std::max(x_max, r.mean_n_train);
            y_min = std::min(y_min, r.mean_delta1);
            y_max = std::max(y_max, r.mean_delta1);
        }
        if (x_max == x_min) x_max = x_min + 1.0;
        if (y_max == y_min) y_max = y_min + 1.0;
    }
    auto sx = [&](double x) {
        return margin + (x - x_min) / (x_max - x_min) * (width - 2 * margin);
    };
    auto sy = [&](double y) {
        return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin);
    };
    const std::map<std::string, std::string> colors{{"no_train", "#888888"},
                                                    {"all_train", "#222222"},
                                                    {"periodic", "#1f77b4"},
                                                    {"oracle", "#2ca02c"},
                                                    {"learned", "#d62728"}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open SVG for writing: " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">mean N_train</text>\n";
    out << "<text x=\"16\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << height / 2
        << ")\">mean delta1 (%)</text>\n";
    out << "<text x=\"" << margin << "\" y=\"" << height - margin + 16 << "\" font-size=\"11\">"
        << format_double(x_min) << "</text>\n";
    out << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 16
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(x_max) << "</text>\n";
    out << "<text x=\"" << margin - 4 << "\" y=\"" << height - margin
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(y_min) << "</text>\n";
    out << "<text x=\"" << margin - 4 << "\" y=\"" << margin
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(y_max) << "</text>\n";
    int legend_y = margin;
    std::map<std::string, bool> seen;
    for (const auto& r : rows) {
        const auto it = colors.find(r.policy);
        const std::string color = it != colors.end() ? it->second : "#9467bd";
        out << "<circle cx=\"" << sx(r.mean_n_train) << "\" cy=\"" << sy(r.mean_delta1)
            << "\" r=\"4\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>\n";
        if (!seen[r.policy]) {
            seen[r.policy] = true;
            out << "<circle cx=\"" << width - margin - 110 << "\" cy=\"" << legend_y
                << "\" r=\"4\" fill=\"" << color << "\"/>\n";
            out << "<text x=\"" << width - margin - 100 << "\" y=\"" << legend_y + 4
                << "\" font-size=\"12\">" << r.policy << "</text>\n";
            legend_y += 18;
        }
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed while writing SVG: " + path.string());
}

}  // namespace traingate
