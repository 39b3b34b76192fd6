#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "traingate/config.hpp"
#include "traingate/errors.hpp"
#include "traingate/pipeline.hpp"

using namespace traingate;
namespace fs = std::filesystem;

namespace {

ExperimentConfig mini_config(const fs::path& out) {
    ExperimentConfig cfg;
    cfg.master_seed = 7;
    cfg.stream.n_segments = 2;
    cfg.stream.segment_length = 30;
    cfg.stream.d_in = 4;
    cfg.learner.hidden = 8;
    cfg.learner.ensemble = 2;
    cfg.learner.pretrain_epochs = 4;
    cfg.learner.pretrain_streams = 1;
    cfg.decision.pretrain_epochs = 8;
    cfg.decision.batch_size = 64;
    cfg.decision.patience = 4;
    cfg.collect.streams = 2;
    cfg.collect.frequencies = {0.5, 1.0};
    cfg.seeds = {1, 2};
    cfg.out_dir = out.string();
    return cfg;
}

fs::path fresh_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config defaults pin the published hyperparameters") {
    const ExperimentConfig cfg;
    CHECK(cfg.learner.learning_rate == 1e-4);
    CHECK(cfg.learner.ensemble == 5);
    CHECK(cfg.learner.hidden == 16);
    CHECK(cfg.decision.learning_rate == 1e-3);
    CHECK(cfg.decision.batch_size == 512);
    CHECK(cfg.decision.hidden == 32);
    CHECK(cfg.decision.online_epochs == 10);
    CHECK(cfg.decision.online_target_draws == 32);
    CHECK(cfg.decision.online_source_draws == 32);
    CHECK(cfg.decision.alpha == 500.0);
    CHECK(cfg.buffers.replay_capacity == 300);
    CHECK(cfg.buffers.target_capacity == 300);
    CHECK(cfg.buffers.source_capacity == 3000);
    CHECK(cfg.stream.d_in == 8);
    CHECK(cfg.stream.segment_length == 250);
    CHECK(cfg.stream.n_segments == 4);
    CHECK(cfg.collect.frequencies ==
          std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
    CHECK(cfg.alpha_grid == std::vector<double>{50, 100, 200, 300, 400, 500, 1000, 1e4, 1e9});
    CHECK(cfg.beta_grid ==
          std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0});
}

TEST_CASE("config files load with overrides and reject unknown keys") {
    const fs::path dir = fresh_dir("tg_config_test");
    const fs::path path = dir / "config.json";
    {
        std::ofstream out(path);
        out << R"({"master_seed": 9, "stream": {"d_in": 5, "noise_lo": 0.01, "noise_hi": 0.02},)"
            << R"("decision": {"alpha": 250.0}, "seeds": [3], "out_dir": "somewhere"})";
    }
    const ExperimentConfig cfg = ExperimentConfig::load(path);
    CHECK(cfg.master_seed == 9);
    CHECK(cfg.stream.d_in == 5);
    CHECK(cfg.stream.noise_schedule[0][0] == 0.01);
    CHECK(cfg.decision.alpha == 250.0);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3});

    {
        std::ofstream out(path);
        out << R"({"streem": {}})";
    }
    CHECK_THROWS_WITH_AS(ExperimentConfig::load(path), doctest::Contains("streem"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("pretrain produces files deterministically and counts labeled pairs") {
    const fs::path dir_a = fresh_dir("tg_pretrain_a");
    const fs::path dir_b = fresh_dir("tg_pretrain_b");
    ExperimentConfig cfg_a = mini_config(dir_a);
    ExperimentConfig cfg_b = mini_config(dir_b);
    const auto out_a = cmd_pretrain(cfg_a);
    const auto out_b = cmd_pretrain(cfg_b);

    CHECK(fs::exists(out_a.checkpoint));
    CHECK(fs::exists(out_a.dataset));
    CHECK(fs::exists(out_a.learner_checkpoint));
    CHECK(out_a.dataset_rows > 0);
    CHECK(slurp(out_a.checkpoint) == slurp(out_b.checkpoint));
    CHECK(slurp(out_a.dataset) == slurp(out_b.dataset));
    CHECK(slurp(out_a.learner_checkpoint) == slurp(out_b.learner_checkpoint));

    // Labeled pairs = trained, non-degenerate timesteps: with all poses
    // available and frequencies {0.5, 1}, at most (0.5 + 1) * decided * streams.
    const long decided = (cfg_a.stream.total_steps() - 2);
    CHECK(out_a.dataset_rows <=
          static_cast<std::size_t>(decided * cfg_a.collect.streams * 2));

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("pretrain with only frequency zero reports no labeled pairs") {
    const fs::path dir = fresh_dir("tg_pretrain_zero");
    ExperimentConfig cfg = mini_config(dir);
    cfg.collect.frequencies = {0.0};
    CHECK_THROWS_WITH_AS(cmd_pretrain(cfg), doctest::Contains("no labeled pairs collected"),
                         ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("run summaries agree with their CSV column sums") {
    const fs::path dir = fresh_dir("tg_run_test");
    ExperimentConfig cfg = mini_config(dir);
    cfg.policy = "no_train";
    cfg.seeds = {1};
    const auto outputs = cmd_run(cfg);
    REQUIRE(outputs.summaries.size() == 1);
    CHECK(outputs.summaries[0].n_train == 0);

    // Cross-file consistency: c_total equals the sum of the CSV flops columns.
    const fs::path csv = dir / "no_train_s1.timesteps.csv";
    REQUIRE(fs::exists(csv));
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    long long total = 0;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string field;
        for (int c = 0; c < 13; ++c) {
            std::getline(ss, field, ',');
            if (c >= 9 && c <= 12) total += std::stoll(field);
        }
    }
    CHECK(total == outputs.summaries[0].c_total);
    CHECK(fs::exists(dir / "no_train_s1.breakdown.csv"));
    CHECK(fs::exists(dir / "no_train_s1.summary.json"));
    fs::remove_all(dir);
}

TEST_CASE("learned runs require a checkpoint") {
    const fs::path dir = fresh_dir("tg_run_missing_ckpt");
    ExperimentConfig cfg = mini_config(dir);
    cfg.policy = "learned";
    CHECK_THROWS_WITH_AS(cmd_run(cfg), doctest::Contains("checkpoint"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("report computes recovery, filtering, and KL from crafted outputs") {
    const fs::path dir = fresh_dir("tg_report_test");

    auto write_summary = [&](const std::string& label, const std::string& policy, double parameter,
                             std::uint64_t seed, double d1, const std::string& csv) {
        nlohmann::json j;
        j["policy"] = policy;
        j["label"] = label;
        j["parameter"] = parameter;
        j["seed"] = seed;
        j["delta1"] = d1;
        j["n_train"] = 10;
        j["decided"] = 60;
        j["train_rate"] = 0.2;
        j["c_total"] = 100;
        j["breakdown"] = {{"inference", 100}, {"train", 0}, {"dec1", 0}, {"dec2", 0}};
        j["timesteps"] = 62;
        j["timesteps_csv"] = csv;
        std::ofstream out(dir / (label + "_s" + std::to_string(seed) + ".summary.json"));
        out << j.dump(2) << '\n';
    };
    auto write_csv = [&](const std::string& name, const std::vector<bool>& decisions) {
        std::ofstream out(dir / name);
        out << "t,action,u_pred,u_true,loss_before,loss_after,pred,y_true,delta1_hit,"
               "flops_inf,flops_train,flops_dec1,flops_dec2,pose_available\n";
        for (std::size_t t = 0; t < decisions.size() + 2; ++t) {
            const bool train = t >= 2 && decisions[t - 2];
            out << t << ',' << (train ? "Train" : "NoTrain")
                << ",nan,nan,0,nan,1,1,1,1,0,0,0,1\n";
        }
    };

    std::vector<bool> oracle_decisions(60);
    for (std::size_t i = 0; i < 60; ++i) oracle_decisions[i] = i % 3 == 0;
    std::vector<bool> periodic_decisions(60);
    for (std::size_t i = 0; i < 60; ++i) periodic_decisions[i] = i % 2 == 0;

    // Seed 1: gap 20 points (kept). Seed 2: gap 3 points (filtered).
    write_csv("none1.csv", std::vector<bool>(60, false));
    write_csv("none2.csv", std::vector<bool>(60, false));
    write_csv("all1.csv", std::vector<bool>(60, true));
    write_csv("all2.csv", std::vector<bool>(60, true));
    write_csv("oracle1.csv", oracle_decisions);
    write_csv("oracle2.csv", oracle_decisions);
    write_csv("learned1.csv", oracle_decisions);  // identical to the oracle
    write_csv("learned2.csv", periodic_decisions);

    write_summary("no_train", "no_train", std::nan(""), 1, 60.0, "none1.csv");
    write_summary("no_train", "no_train", std::nan(""), 2, 70.0, "none2.csv");
    write_summary("all_train", "all_train", std::nan(""), 1, 80.0, "all1.csv");
    write_summary("all_train", "all_train", std::nan(""), 2, 73.0, "all2.csv");
    write_summary("oracle_a500", "oracle", 500.0, 1, 79.0, "oracle1.csv");
    write_summary("oracle_a500", "oracle", 500.0, 2, 72.0, "oracle2.csv");
    write_summary("learned_a500", "learned", 500.0, 1, 75.0, "learned1.csv");
    write_summary("learned_a500", "learned", 500.0, 2, 71.0, "learned2.csv");

    const ReportTables tables = cmd_report(dir);

    REQUIRE(tables.recovery.size() == 4);
    CHECK(tables.recovery[0].policy == "no_train");
    CHECK(tables.recovery[0].mean_recovery == 0.0);
    CHECK(tables.recovery[1].policy == "all_train");
    CHECK(tables.recovery[1].mean_recovery == 100.0);
    // Only seed 1 surives the >5-point filter: learned = (75-60)/(80-60) = 75%.
    CHECK(tables.recovery[3].policy == "learned");
    CHECK(tables.recovery[3].seeds_used == 1);
    CHECK(tables.recovery[3].seeds_filtered == 1);
    CHECK(tables.recovery[3].mean_recovery == doctest::Approx(75.0));

    // Learned seed 1 matches the oracle exactly; seed 2 differs.
    bool found_learned_kl = false;
    for (const auto& row : tables.kl) {
        if (row.policy == "learned") {
            found_learned_kl = true;
            CHECK(row.mean_kl_bits > 0.0);  // seed-2 divergence averaged in
            CHECK(row.seeds == 2);
        }
        if (row.policy == "oracle") CHECK(row.mean_kl_bits == 0.0);
    }
    CHECK(found_learned_kl);
    CHECK(fs::exists(dir / "recovery.csv"));
    CHECK(fs::exists(dir / "kl.csv"));
    fs::remove_all(dir);
}

TEST_CASE("report requires both baselines") {
    const fs::path dir = fresh_dir("tg_report_missing");
    CHECK_THROWS_AS(cmd_report(dir), MissingBaselineError);
    fs::remove_all(dir);
}

#ifdef TG_CLI_PATH
TEST_CASE("CLI exit codes distinguish config, io, and baseline errors") {
    const fs::path dir = fresh_dir("tg_cli_test");
    const std::string cli = TG_CLI_PATH;
    auto run = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };

    // Invalid config -> 2.
    const fs::path bad_config = dir / "bad.json";
    {
        std::ofstream out(bad_config);
        out << R"({"policy": "sometimes"})";
    }
    CHECK(run("run --config " + bad_config.string()) == 2);

    // Missing baselines -> 4.
    const fs::path empty = dir / "empty";
    fs::create_directories(empty);
    CHECK(run("report --nonexistent-flag x") != 0);
    CHECK(run("report --dir " + empty.string()) == 4);

    // Unwritable output directory -> 3. The parent is a regular file.
    const fs::path blocker = dir / "blocker";
    {
        std::ofstream out(blocker);
        out << "x";
    }
    const fs::path good_config = dir / "good.json";
    {
        std::ofstream out(good_config);
        out << R"({"stream": {"n_segments": 1, "segment_length": 10, "d_in": 3},)"
            << R"("learner": {"hidden": 4, "ensemble": 2, "pretrain_epochs": 1, "pretrain_streams": 1},)"
            << R"("policy": "no_train", "seeds": [1],)"
            << R"("out_dir": ")" << (blocker / "sub").string() << R"("})";
    }
    CHECK(run("run --config " + good_config.string()) == 3);
    fs::remove_all(dir);
}
#endif
