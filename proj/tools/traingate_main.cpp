#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "traingate/config.hpp"
#include "traingate/errors.hpp"
#include "traingate/io_util.hpp"
#include "traingate/pipeline.hpp"

namespace {

using traingate::ExperimentConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config JSON");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--checkpoint", flags.checkpoint, "decision-net checkpoint path");
    cmd->add_option("--seed", flags.seed, "master seed")->each([&](const std::string&) {
        flags.seed_set = true;
    });
}

ExperimentConfig load_config(const CommonFlags& flags) {
    ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = ExperimentConfig::load(flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.checkpoint.empty()) cfg.checkpoint = flags.checkpoint;
    if (flags.seed_set) cfg.master_seed = flags.seed;
    return cfg;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"traingate: decide when online training is worth its compute cost"};
    app.require_subcommand(1);

    CommonFlags pretrain_flags, run_flags, sweep_flags;
    std::string run_policy;
    double run_alpha = 0.0, run_beta = -1.0;
    bool alpha_set = false;
    std::vector<double> alpha_grid, beta_grid;
    std::string report_dir;

    CLI::App* pretrain = app.add_subcommand("pretrain", "collect utility labels and train the decision net");
    add_common(pretrain, pretrain_flags);

    CLI::App* run = app.add_subcommand("run", "run one policy over the configured seeds");
    add_common(run, run_flags);
    run->add_option("--policy", run_policy, "no_train|all_train|periodic|oracle|learned");
    run->add_option("--alpha", run_alpha, "cost-of-training parameter")->each([&](const std::string&) {
        alpha_set = true;
    });
    run->add_option("--beta", run_beta, "periodic train fraction");

    CLI::App* sweep = app.add_subcommand("sweep", "sweep the alpha and beta grids");
    add_common(sweep, sweep_flags);
    sweep->add_option("--alpha-grid", alpha_grid, "alpha sweep values")->delimiter(',');
    sweep->add_option("--beta-grid", beta_grid, "beta sweep values")->delimiter(',');

    CLI::App* report = app.add_subcommand("report", "recovery and decision-KL tables from run outputs");
    report->add_option("--dir", report_dir, "directory holding *.summary.json outputs")->required();

    CLI11_PARSE(app, argc, argv);

    if (pretrain->parsed()) {
        const ExperimentConfig cfg = load_config(pretrain_flags);
        const auto outputs = traingate::cmd_pretrain(cfg);
        std::cout << "dataset rows: " << outputs.dataset_rows << '\n';
        std::cout << "held-out decision loss: " << traingate::format_double(outputs.holdout_loss)
                  << '\n';
        std::cout << "dataset: " << outputs.dataset.string() << '\n';
        std::cout << "decision checkpoint: " << outputs.checkpoint.string() << '\n';
        std::cout << "learner checkpoint: " << outputs.learner_checkpoint.string() << '\n';
        return 0;
    }
    if (run->parsed()) {
        ExperimentConfig cfg = load_config(run_flags);
        if (!run_policy.empty()) cfg.policy = run_policy;
        if (alpha_set) cfg.decision.alpha = run_alpha;
        if (run_beta >= 0.0) cfg.beta = run_beta;
        const auto outputs = traingate::cmd_run(cfg);
        for (const auto& s : outputs.summaries) {
            std::cout << s.policy << " seed=" << s.seed
                      << " delta1=" << traingate::format_double(s.delta1)
                      << " n_train=" << s.n_train << " c_total=" << s.c_total << '\n';
        }
        return 0;
    }
    if (sweep->parsed()) {
        ExperimentConfig cfg = load_config(sweep_flags);
        if (!alpha_grid.empty()) cfg.alpha_grid = alpha_grid;
        if (!beta_grid.empty()) cfg.beta_grid = beta_grid;
        const auto outputs = traingate::cmd_sweep(cfg);
        std::cout << "trade-off rows: " << outputs.rows.size() << '\n';
        std::cout << "table: " << outputs.tradeoff_csv.string() << '\n';
        return 0;
    }
    if (report->parsed()) {
        const auto tables = traingate::cmd_report(report_dir);
        std::cout << "recovery (policy, parameter, mean %, seeds used, filtered):\n";
        for (const auto& r : tables.recovery)
            std::cout << "  " << r.policy << ' ' << traingate::format_double(r.parameter) << ' '
                      << traingate::format_double(r.mean_recovery) << ' ' << r.seeds_used << ' '
                      << r.seeds_filtered << '\n';
        std::cout << "decision KL vs oracle (policy, parameter, oracle alpha, bits, seeds):\n";
        for (const auto& r : tables.kl)
            std::cout << "  " << r.policy << ' ' << traingate::format_double(r.parameter) << ' '
                      << traingate::format_double(r.oracle_alpha) << ' '
                      << traingate::format_double(r.mean_kl_bits) << ' ' << r.seeds << '\n';
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const traingate::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const traingate::MissingBaselineError& e) {
        std::cerr << "report error: " << e.what() << '\n';
        return 4;
    } catch (const traingate::IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
