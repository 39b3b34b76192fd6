#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "traingate/stream.hpp"

namespace traingate {

// Experiment configuration. Defaults follow the deployed protocol: learner
// Adam at 1e-4, decision Adam at 1e-3 with batch 512, 10-epoch online
// decision updates on 1+32+32 composite batches, buffer capacities
// 300/300/3000, and alpha = 500.
struct ExperimentConfig {
    std::uint64_t master_seed = 42;

    EnvironmentSpec stream;

    struct Learner {
        int hidden = 16;
        int ensemble = 5;
        double learning_rate = 1e-4;
        int pretrain_epochs = 2000;
        int pretrain_streams = 5;
        int pretrain_batch = 32;
    } learner;

    struct Decision {
        double alpha = 500.0;
        double learning_rate = 1e-3;
        int batch_size = 512;
        int pretrain_epochs = 200;
        int patience = 20;
        int online_epochs = 10;
        int online_target_draws = 32;
        int online_source_draws = 32;
        double corr_weight = 1.0;
        int hidden = 32;
    } decision;

    struct Buffers {
        std::size_t replay_capacity = 300;
        double rho_buf = 0.5;
        std::size_t target_capacity = 300;
        std::size_t source_capacity = 3000;
        double epsilon_loss = 1e-12;
    } buffers;

    struct Collect {
        int streams = 5;
        std::vector<double> frequencies = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    } collect;

    std::int64_t deployed_scale = 10000;

    std::string policy = "learned";  // no_train | all_train | periodic | oracle | learned
    double beta = 0.5;
    std::vector<double> alpha_grid = {50, 100, 200, 300, 400, 500, 1000, 1e4, 1e9};
    std::vector<double> beta_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    std::string out_dir = "out";
    std::string checkpoint;  // decision-net checkpoint path; defaults under out_dir

    void validate() const;  // throws ConfigError naming the offending field
    std::filesystem::path checkpoint_path() const;

    static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace traingate
