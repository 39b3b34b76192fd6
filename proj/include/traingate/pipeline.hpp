#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "traingate/config.hpp"
#include "traingate/cost.hpp"
#include "traingate/decision.hpp"
#include "traingate/learner.hpp"
#include "traingate/metrics.hpp"
#include "traingate/policies.hpp"

namespace traingate {

// Deterministic base learner for a config: an ensemble pretrained with the
// self-supervised NLL on streams drawn from the same environment family
// (separate derived seeds), optimizer state reset afterwards. Every episode
// starts from a copy of this state.
EnsembleLearner pretrain_learner(const ExperimentConfig& cfg);

// Where cmd_pretrain stores the base learner (next to the decision
// checkpoint). run/sweep load it when present instead of re-pretraining.
std::filesystem::path learner_checkpoint_path(const ExperimentConfig& cfg);
EnsembleLearner load_or_pretrain_learner(const ExperimentConfig& cfg);

CostModel cost_model_from(const ExperimentConfig& cfg);
EpisodeConfig episode_config_from(const ExperimentConfig& cfg);

// Seed for one episode, hashed from (master seed, policy label, stream seed)
// so sweep points are independent of execution order.
std::uint64_t episode_seed(const ExperimentConfig& cfg, const std::string& label,
                           std::uint64_t stream_seed);

struct PretrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path dataset;
    std::filesystem::path learner_checkpoint;
    double holdout_loss = 0.0;
    std::size_t dataset_rows = 0;
};

// Collect (psi, realized utility) pairs at the configured frequencies, train
// the decision net, and write the dataset plus both checkpoints.
PretrainOutputs cmd_pretrain(const ExperimentConfig& cfg);

struct RunOutputs {
    std::vector<EpisodeSummary> summaries;
    std::vector<std::filesystem::path> summary_files;
};

// One episode of the configured policy per seed; writes timesteps CSV,
// ledger breakdown CSV and summary JSON per episode.
RunOutputs cmd_run(const ExperimentConfig& cfg);

struct SweepOutputs {
    std::vector<SweepRow> rows;
    std::filesystem::path tradeoff_csv;
};

// Baselines plus the periodic beta grid, the oracle alpha grid and the
// learned-policy alpha grid, each over every seed; aggregates into the
// trade-off table and plot series.
SweepOutputs cmd_sweep(const ExperimentConfig& cfg);

struct RecoveryRow {
    std::string policy;
    double parameter = 0.0;
    double mean_recovery = 0.0;
    int seeds_used = 0;
    int seeds_filtered = 0;
};
struct KlRow {
    std::string policy;
    double parameter = 0.0;
    double oracle_alpha = 0.0;
    double mean_kl_bits = 0.0;
    int seeds = 0;
};
struct ReportTables {
    std::vector<RecoveryRow> recovery;
    std::vector<KlRow> kl;
};

// Read every *.summary.json under `dir`, compute recovery against the
// matched no_train / all_train baselines (restricted to seeds where
// always-training improves delta1 by more than 5 points) and the decision
// KL against the oracle logs; writes recovery.csv and kl.csv.
ReportTables cmd_report(const std::filesystem::path& dir);

}  // namespace traingate
