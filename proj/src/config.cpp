#include "traingate/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

#include "traingate/errors.hpp"

namespace traingate {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& scope, const std::set<std::string>& allowed) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("unknown config key \"" + (scope.empty() ? key : scope + "." + key) +
                              "\"");
    }
}

template <typename T>
void read_into(const json& j, const char* key, T& out, const std::string& scope) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config field \"" + scope + key + "\": " + e.what());
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    stream.validate();
    if (learner.hidden < 1) throw ConfigError("learner.hidden must be >= 1");
    if (learner.ensemble < 2) throw ConfigError("learner.ensemble must be >= 2");
    if (!(learner.learning_rate > 0.0)) throw ConfigError("learner.learning_rate must be > 0");
    if (learner.pretrain_epochs < 0) throw ConfigError("learner.pretrain_epochs must be >= 0");
    if (learner.pretrain_streams < 1) throw ConfigError("learner.pretrain_streams must be >= 1");
    if (learner.pretrain_batch < 1) throw ConfigError("learner.pretrain_batch must be >= 1");
    if (!(decision.alpha > 0.0)) throw ConfigError("decision.alpha must be > 0");
    if (!(decision.learning_rate > 0.0)) throw ConfigError("decision.learning_rate must be > 0");
    if (decision.batch_size < 1) throw ConfigError("decision.batch_size must be >= 1");
    if (decision.pretrain_epochs < 1) throw ConfigError("decision.pretrain_epochs must be >= 1");
    if (decision.online_epochs < 1) throw ConfigError("decision.online_epochs must be >= 1");
    if (decision.hidden < 1) throw ConfigError("decision.hidden must be >= 1");
    if (!(buffers.rho_buf >= 0.0)) throw ConfigError("buffers.rho_buf must be >= 0");
    if (!(buffers.epsilon_loss > 0.0)) throw ConfigError("buffers.epsilon_loss must be > 0");
    if (buffers.replay_capacity < 1) throw ConfigError("buffers.replay_capacity must be >= 1");
    if (buffers.target_capacity < 1) throw ConfigError("buffers.target_capacity must be >= 1");
    if (buffers.source_capacity < 1) throw ConfigError("buffers.source_capacity must be >= 1");
    if (collect.streams < 1) throw ConfigError("collect.streams must be >= 1");
    for (double f : collect.frequencies)
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("collect.frequencies must lie in [0,1]");
    if (deployed_scale < 1) throw ConfigError("cost.deployed_scale must be >= 1");
    if (policy != "no_train" && policy != "all_train" && policy != "periodic" &&
        policy != "oracle" && policy != "learned")
        throw ConfigError("policy must be one of no_train|all_train|periodic|oracle|learned");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0,1]");
    for (double a : alpha_grid)
        if (!(a > 0.0)) throw ConfigError("alpha_grid entries must be > 0");
    for (double b : beta_grid)
        if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("beta_grid entries must lie in [0,1]");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (out_dir.empty()) throw ConfigError("out_dir must be non-empty");
}

std::filesystem::path ExperimentConfig::checkpoint_path() const {
    if (!checkpoint.empty()) return checkpoint;
    return std::filesystem::path(out_dir) / "decision.ckpt.json";
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());

    ExperimentConfig cfg;
    check_keys(j, "",
               {"master_seed", "stream", "learner", "decision", "buffers", "collect", "cost",
                "policy", "beta", "alpha_grid", "beta_grid", "seeds", "out_dir", "checkpoint"});
    read_into(j, "master_seed", cfg.master_seed, "");

    if (j.contains("stream")) {
        const json& s = j["stream"];
        check_keys(s, "stream",
                   {"n_segments", "segment_length", "d_in", "drift_magnitude", "noise_lo",
                    "noise_hi", "noise_schedule", "corruption_rate", "pose_drop_rate"});
        read_into(s, "n_segments", cfg.stream.n_segments, "stream.");
        read_into(s, "segment_length", cfg.stream.segment_length, "stream.");
        read_into(s, "d_in", cfg.stream.d_in, "stream.");
        read_into(s, "drift_magnitude", cfg.stream.drift_magnitude, "stream.");
        read_into(s, "corruption_rate", cfg.stream.corruption_rate, "stream.");
        read_into(s, "pose_drop_rate", cfg.stream.pose_drop_rate, "stream.");
        if (s.contains("noise_schedule")) {
            cfg.stream.noise_schedule.clear();
            read_into(s, "noise_schedule", cfg.stream.noise_schedule, "stream.");
        } else if (s.contains("noise_lo") || s.contains("noise_hi")) {
            double lo = cfg.stream.noise_schedule[0][0];
            double hi = cfg.stream.noise_schedule[0][1];
            read_into(s, "noise_lo", lo, "stream.");
            read_into(s, "noise_hi", hi, "stream.");
            cfg.stream.noise_schedule = {{lo, hi}};
        }
    }
    if (j.contains("learner")) {
        const json& l = j["learner"];
        check_keys(l, "learner",
                   {"hidden", "ensemble", "learning_rate", "pretrain_epochs", "pretrain_streams",
                    "pretrain_batch"});
        read_into(l, "hidden", cfg.learner.hidden, "learner.");
        read_into(l, "ensemble", cfg.learner.ensemble, "learner.");
        read_into(l, "learning_rate", cfg.learner.learning_rate, "learner.");
        read_into(l, "pretrain_epochs", cfg.learner.pretrain_epochs, "learner.");
        read_into(l, "pretrain_streams", cfg.learner.pretrain_streams, "learner.");
        read_into(l, "pretrain_batch", cfg.learner.pretrain_batch, "learner.");
    }
    if (j.contains("decision")) {
        const json& d = j["decision"];
        check_keys(d, "decision",
                   {"alpha", "learning_rate", "batch_size", "pretrain_epochs", "patience",
                    "online_epochs", "online_target_draws", "online_source_draws", "corr_weight",
                    "hidden"});
        read_into(d, "alpha", cfg.decision.alpha, "decision.");
        read_into(d, "learning_rate", cfg.decision.learning_rate, "decision.");
        read_into(d, "batch_size", cfg.decision.batch_size, "decision.");
        read_into(d, "pretrain_epochs", cfg.decision.pretrain_epochs, "decision.");
        read_into(d, "patience", cfg.decision.patience, "decision.");
        read_into(d, "online_epochs", cfg.decision.online_epochs, "decision.");
        read_into(d, "online_target_draws", cfg.decision.online_target_draws, "decision.");
        read_into(d, "online_source_draws", cfg.decision.online_source_draws, "decision.");
        read_into(d, "corr_weight", cfg.decision.corr_weight, "decision.");
        read_into(d, "hidden", cfg.decision.hidden, "decision.");
    }
    if (j.contains("buffers")) {
        const json& b = j["buffers"];
        check_keys(b, "buffers",
                   {"replay_capacity", "rho_buf", "target_capacity", "source_capacity",
                    "epsilon_loss"});
        read_into(b, "replay_capacity", cfg.buffers.replay_capacity, "buffers.");
        read_into(b, "rho_buf", cfg.buffers.rho_buf, "buffers.");
        read_into(b, "target_capacity", cfg.buffers.target_capacity, "buffers.");
        read_into(b, "source_capacity", cfg.buffers.source_capacity, "buffers.");
        read_into(b, "epsilon_loss", cfg.buffers.epsilon_loss, "buffers.");
    }
    if (j.contains("collect")) {
        const json& c = j["collect"];
        check_keys(c, "collect", {"streams", "frequencies"});
        read_into(c, "streams", cfg.collect.streams, "collect.");
        if (c.contains("frequencies")) {
            cfg.collect.frequencies.clear();
            read_into(c, "frequencies", cfg.collect.frequencies, "collect.");
        }
    }
    if (j.contains("cost")) {
        const json& c = j["cost"];
        check_keys(c, "cost", {"deployed_scale"});
        read_into(c, "deployed_scale", cfg.deployed_scale, "cost.");
    }
    read_into(j, "policy", cfg.policy, "");
    read_into(j, "beta", cfg.beta, "");
    if (j.contains("alpha_grid")) {
        cfg.alpha_grid.clear();
        read_into(j, "alpha_grid", cfg.alpha_grid, "");
    }
    if (j.contains("beta_grid")) {
        cfg.beta_grid.clear();
        read_into(j, "beta_grid", cfg.beta_grid, "");
    }
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        read_into(j, "seeds", cfg.seeds, "");
    }
    read_into(j, "out_dir", cfg.out_dir, "");
    read_into(j, "checkpoint", cfg.checkpoint, "");

    cfg.validate();
    return cfg;
}

}  // namespace traingate
