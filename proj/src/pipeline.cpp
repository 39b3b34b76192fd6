#include "traingate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>

#include "json.hpp"

#include "traingate/errors.hpp"
#include "traingate/io_util.hpp"
#include "traingate/rng.hpp"
#include "traingate/trainer.hpp"

namespace traingate {

namespace {
namespace fs = std::filesystem;
using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void make_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}
}  // namespace

CostModel cost_model_from(const ExperimentConfig& cfg) {
    CostModel cost;
    cost.deployed_scale = cfg.deployed_scale;
    cost.d_in = cfg.stream.d_in;
    cost.hidden = cfg.learner.hidden;
    cost.ensemble = cfg.learner.ensemble;
    cost.decision_hidden = cfg.decision.hidden;
    return cost;
}

EpisodeConfig episode_config_from(const ExperimentConfig& cfg) {
    EpisodeConfig ecfg;
    ecfg.replay_capacity = cfg.buffers.replay_capacity;
    ecfg.rho_buf = cfg.buffers.rho_buf;
    ecfg.epsilon_loss = cfg.buffers.epsilon_loss;
    ecfg.target_capacity = cfg.buffers.target_capacity;
    ecfg.update.epochs = cfg.decision.online_epochs;
    ecfg.update.target_draws = cfg.decision.online_target_draws;
    ecfg.update.source_draws = cfg.decision.online_source_draws;
    ecfg.update.corr_weight = cfg.decision.corr_weight;
    return ecfg;
}

std::uint64_t episode_seed(const ExperimentConfig& cfg, const std::string& label,
                           std::uint64_t stream_seed) {
    return Rng::derive_seed(cfg.master_seed, "episode:" + label, stream_seed);
}

EnsembleLearner pretrain_learner(const ExperimentConfig& cfg) {
    cfg.stream.validate();
    std::vector<LabeledExample> pool;
    for (int i = 0; i < cfg.learner.pretrain_streams; ++i) {
        const auto stream = generate_stream(
            cfg.stream, Rng::derive_seed(cfg.master_seed, "learner-pretrain-stream",
                                         static_cast<std::uint64_t>(i)));
        for (const auto& s : stream) pool.push_back({s.x, s.y_pseudo});
    }

    EnsembleLearner learner(cfg.stream.d_in, cfg.learner.hidden, cfg.learner.ensemble,
                            cfg.learner.learning_rate,
                            Rng::derive_seed(cfg.master_seed, "learner-init"));
    Rng rng = Rng::substream(cfg.master_seed, "learner-pretrain");
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t batch_size = static_cast<std::size_t>(cfg.learner.pretrain_batch);
    std::vector<LabeledExample> batch;
    for (int epoch = 0; epoch < cfg.learner.pretrain_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(pool[order[k]]);
            learner.train_batch(batch);
        }
    }
    learner.reset_optimizer();
    return learner;
}

std::filesystem::path learner_checkpoint_path(const ExperimentConfig& cfg) {
    auto parent = cfg.checkpoint_path().parent_path();
    if (parent.empty()) parent = ".";
    return parent / "learner.ckpt.json";
}

EnsembleLearner load_or_pretrain_learner(const ExperimentConfig& cfg) {
    const fs::path path = learner_checkpoint_path(cfg);
    if (fs::exists(path)) return EnsembleLearner::load_checkpoint(path);
    return pretrain_learner(cfg);
}

namespace {

json summary_to_json(const EpisodeSummary& summary, const std::string& label,
                     const EpisodeResult& result, const std::string& csv_name) {
    json j;
    j["policy"] = summary.policy;
    j["label"] = label;
    j["parameter"] = summary.parameter;  // NaN serializes as null
    j["seed"] = summary.seed;
    j["delta1"] = summary.delta1;
    j["n_train"] = summary.n_train;
    j["decided"] = summary.decided;
    j["train_rate"] = result.train_rate;
    j["c_total"] = summary.c_total;
    j["breakdown"] = {{"inference", summary.flops_inf},
                      {"train", summary.flops_train},
                      {"dec1", summary.flops_dec1},
                      {"dec2", summary.flops_dec2}};
    j["timesteps"] = result.records.size();
    j["timesteps_csv"] = csv_name;
    return j;
}

EpisodeSummary run_and_write(const ExperimentConfig& cfg, const PolicyKind& policy,
                             const std::vector<StreamSample>& stream, std::uint64_t stream_seed,
                             const EnsembleLearner& theta0, const CostModel& cost,
                             const EpisodeConfig& ecfg, const fs::path& out_dir,
                             bool write_breakdown, std::vector<fs::path>* summary_files) {
    const std::string label = policy.label();
    const EpisodeResult result =
        run_episode(policy, stream, theta0, cost, ecfg, episode_seed(cfg, label, stream_seed));

    const std::string base = label + "_s" + std::to_string(stream_seed);
    const fs::path csv_path = out_dir / (base + ".timesteps.csv");
    write_timesteps_csv(result.records, csv_path);
    if (write_breakdown) result.ledger.write_breakdown_csv(out_dir / (base + ".breakdown.csv"));

    EpisodeSummary summary;
    summary.policy = policy.kind_name();
    summary.parameter = policy.parameter();
    summary.seed = stream_seed;
    summary.delta1 = result.delta1;
    summary.n_train = result.n_train;
    summary.decided = result.decided;
    summary.c_total = result.ledger.total();
    summary.flops_inf = result.ledger.sum(CostCategory::Inference);
    summary.flops_train = result.ledger.sum(CostCategory::Train);
    summary.flops_dec1 = result.ledger.sum(CostCategory::Dec1);
    summary.flops_dec2 = result.ledger.sum(CostCategory::Dec2);

    const fs::path summary_path = out_dir / (base + ".summary.json");
    std::ofstream out(summary_path);
    if (!out) throw IoError("cannot open summary for writing: " + summary_path.string());
    out << summary_to_json(summary, label, result, base + ".timesteps.csv").dump(2) << '\n';
    if (!out) throw IoError("failed while writing summary: " + summary_path.string());
    if (summary_files) summary_files->push_back(summary_path);
    return summary;
}

}  // namespace

PretrainOutputs cmd_pretrain(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path out_dir = cfg.out_dir;
    make_out_dir(out_dir);

    const EnsembleLearner theta0 = pretrain_learner(cfg);
    const CostModel cost = cost_model_from(cfg);

    const std::vector<EnvironmentSpec> specs(static_cast<std::size_t>(cfg.collect.streams),
                                             cfg.stream);
    CollectionConfig ccfg;
    ccfg.replay_capacity = cfg.buffers.replay_capacity;
    ccfg.rho_buf = cfg.buffers.rho_buf;
    ccfg.epsilon_loss = cfg.buffers.epsilon_loss;
    const auto rows =
        collect_pretraining_dataset(specs, cfg.collect.frequencies,
                                    Rng::derive_seed(cfg.master_seed, "collect"), theta0, cost, ccfg);
    if (rows.empty()) throw ConfigError("no labeled pairs collected");

    PretrainOutputs outputs;
    outputs.dataset = out_dir / "decision_dataset.jsonl";
    write_utility_dataset(rows, outputs.dataset);
    outputs.dataset_rows = rows.size();

    PretrainConfig pcfg;
    pcfg.hidden = cfg.decision.hidden;
    pcfg.learning_rate = cfg.decision.learning_rate;
    pcfg.batch_size = cfg.decision.batch_size;
    pcfg.max_epochs = cfg.decision.pretrain_epochs;
    pcfg.patience = cfg.decision.patience;
    pcfg.corr_weight = cfg.decision.corr_weight;
    PretrainResult result =
        pretrain_decision(rows, Rng::derive_seed(cfg.master_seed, "decision-train"), pcfg);
    outputs.holdout_loss = result.holdout_loss;

    Rng source_rng = Rng::substream(cfg.master_seed, "source-buffer");
    const auto source =
        DecisionBuffers::sample_source(rows, cfg.buffers.source_capacity, source_rng);

    outputs.checkpoint = cfg.checkpoint_path();
    ensure_parent_dir(outputs.checkpoint);
    result.net.save_checkpoint(outputs.checkpoint, source);

    outputs.learner_checkpoint = learner_checkpoint_path(cfg);
    ensure_parent_dir(outputs.learner_checkpoint);
    theta0.save_checkpoint(outputs.learner_checkpoint);
    return outputs;
}

namespace {

PolicyKind policy_from_config(const ExperimentConfig& cfg, const DecisionNet* net,
                              const std::vector<UtilityExample>* source) {
    PolicyKind policy;
    if (cfg.policy == "no_train") {
        policy.tag = PolicyKind::Tag::NoTrain;
    } else if (cfg.policy == "all_train") {
        policy.tag = PolicyKind::Tag::AllTrain;
    } else if (cfg.policy == "periodic") {
        policy.tag = PolicyKind::Tag::Periodic;
        policy.beta = cfg.beta;
    } else if (cfg.policy == "oracle") {
        policy.tag = PolicyKind::Tag::Oracle;
        policy.alpha = cfg.decision.alpha;
    } else if (cfg.policy == "learned") {
        policy.tag = PolicyKind::Tag::Learned;
        policy.alpha = cfg.decision.alpha;
        policy.net = net;
        policy.source = source;
    } else {
        throw ConfigError("policy must be one of no_train|all_train|periodic|oracle|learned");
    }
    return policy;
}

DecisionNet::LoadedCheckpoint load_required_checkpoint(const ExperimentConfig& cfg) {
    const fs::path path = cfg.checkpoint_path();
    if (!fs::exists(path))
        throw ConfigError("decision checkpoint required for the learned policy: " + path.string());
    return DecisionNet::load_checkpoint(path);
}

}  // namespace

RunOutputs cmd_run(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path out_dir = cfg.out_dir;
    make_out_dir(out_dir);

    std::optional<DecisionNet::LoadedCheckpoint> loaded;
    if (cfg.policy == "learned") loaded.emplace(load_required_checkpoint(cfg));

    const EnsembleLearner theta0 = load_or_pretrain_learner(cfg);
    const CostModel cost = cost_model_from(cfg);
    const EpisodeConfig ecfg = episode_config_from(cfg);
    const PolicyKind policy = policy_from_config(cfg, loaded ? &loaded->net : nullptr,
                                                 loaded ? &loaded->source_buffer : nullptr);

    RunOutputs outputs;
    for (std::uint64_t seed : cfg.seeds) {
        const auto stream = generate_stream(cfg.stream, seed);
        outputs.summaries.push_back(run_and_write(cfg, policy, stream, seed, theta0, cost, ecfg,
                                                  out_dir, /*write_breakdown=*/true,
                                                  &outputs.summary_files));
    }
    return outputs;
}

SweepOutputs cmd_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.alpha_grid.empty() || cfg.beta_grid.empty())
        throw ConfigError("sweep grids must be non-empty");
    const fs::path out_dir = cfg.out_dir;
    make_out_dir(out_dir);

    const DecisionNet::LoadedCheckpoint loaded = load_required_checkpoint(cfg);
    const EnsembleLearner theta0 = load_or_pretrain_learner(cfg);
    const CostModel cost = cost_model_from(cfg);
    const EpisodeConfig ecfg = episode_config_from(cfg);

    std::vector<PolicyKind> policies;
    policies.push_back({.tag = PolicyKind::Tag::NoTrain});
    policies.push_back({.tag = PolicyKind::Tag::AllTrain});
    for (double beta : cfg.beta_grid)
        policies.push_back({.tag = PolicyKind::Tag::Periodic, .beta = beta});
    for (double alpha : cfg.alpha_grid)
        policies.push_back({.tag = PolicyKind::Tag::Oracle, .alpha = alpha});
    for (double alpha : cfg.alpha_grid) {
        PolicyKind p;
        p.tag = PolicyKind::Tag::Learned;
        p.alpha = alpha;
        p.net = &loaded.net;
        p.source = &loaded.source_buffer;
        policies.push_back(p);
    }

    std::vector<EpisodeSummary> episodes;
    for (std::uint64_t seed : cfg.seeds) {
        const auto stream = generate_stream(cfg.stream, seed);
        for (const auto& policy : policies)
            episodes.push_back(run_and_write(cfg, policy, stream, seed, theta0, cost, ecfg,
                                             out_dir, /*write_breakdown=*/false, nullptr));
    }

    SweepOutputs outputs;
    outputs.rows = aggregate_sweep(episodes);
    outputs.tradeoff_csv = out_dir / "tradeoff.csv";
    write_tradeoff_csv(outputs.rows, outputs.tradeoff_csv);
    write_plot_series(outputs.rows, out_dir);
    write_tradeoff_svg(outputs.rows, out_dir / "tradeoff.svg");
    return outputs;
}

namespace {

struct SummaryEntry {
    std::string policy;
    double parameter = kNaN;
    std::uint64_t seed = 0;
    double delta1 = 0.0;
    fs::path csv;
};

std::vector<SummaryEntry> load_summaries(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("report: not a directory: " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 13 && name.substr(name.size() - 13) == ".summary.json")
            paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    std::vector<SummaryEntry> entries;
    for (const auto& path : paths) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open summary: " + path.string());
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ParseError("malformed summary JSON: " + path.string());
        SummaryEntry e;
        e.policy = j.at("policy").get<std::string>();
        e.parameter = j.at("parameter").is_null() ? kNaN : j.at("parameter").get<double>();
        e.seed = j.at("seed").get<std::uint64_t>();
        e.delta1 = j.at("delta1").get<double>();
        e.csv = dir / j.at("timesteps_csv").get<std::string>();
        entries.push_back(std::move(e));
    }
    return entries;
}

struct MethodKey {
    std::string policy;
    double parameter;
    bool operator<(const MethodKey& o) const {
        if (policy != o.policy) return policy < o.policy;
        const bool an = std::isnan(parameter), bn = std::isnan(o.parameter);
        if (an != bn) return an;
        if (an && bn) return false;
        return parameter < o.parameter;
    }
};

int method_rank(const std::string& p) {
    if (p == "no_train") return 0;
    if (p == "all_train") return 1;
    if (p == "periodic") return 2;
    if (p == "oracle") return 3;
    if (p == "learned") return 4;
    return 5;
}

}  // namespace

ReportTables cmd_report(const fs::path& dir) {
    const auto entries = load_summaries(dir);

    std::map<std::uint64_t, double> d_none, d_all;
    std::map<MethodKey, std::vector<const SummaryEntry*>> methods;
    for (const auto& e : entries) {
        if (e.policy == "no_train") d_none[e.seed] = e.delta1;
        if (e.policy == "all_train") d_all[e.seed] = e.delta1;
        methods[MethodKey{e.policy, e.parameter}].push_back(&e);
    }
    if (d_none.empty()) throw MissingBaselineError("no_train");
    if (d_all.empty()) throw MissingBaselineError("all_train");

    // Seeds kept for recovery: always-training must improve delta1 by > 5 points.
    std::set<std::uint64_t> kept;
    int filtered = 0;
    for (const auto& [seed, dn] : d_none) {
        auto it = d_all.find(seed);
        if (it == d_all.end()) continue;
        if (it->second - dn > 5.0)
            kept.insert(seed);
        else
            ++filtered;
    }

    ReportTables tables;
    std::vector<MethodKey> ordered_keys;
    for (const auto& [key, group] : methods) {
        (void)group;
        ordered_keys.push_back(key);
    }
    std::sort(ordered_keys.begin(), ordered_keys.end(), [](const MethodKey& a, const MethodKey& b) {
        const int ra = method_rank(a.policy), rb = method_rank(b.policy);
        if (ra != rb) return ra < rb;
        return a < b;
    });

    for (const auto& key : ordered_keys) {
        RecoveryRow row;
        row.policy = key.policy;
        row.parameter = key.parameter;
        double sum = 0.0;
        int used = 0, skipped = 0;
        for (const SummaryEntry* e : methods[key]) {
            if (!kept.count(e->seed)) {
                ++skipped;
                continue;
            }
            sum += recovery(e->delta1, d_none.at(e->seed), d_all.at(e->seed));
            ++used;
        }
        if (used == 0) continue;
        row.mean_recovery = sum / used;
        row.seeds_used = used;
        row.seeds_filtered = skipped;
        tables.recovery.push_back(std::move(row));
    }

    // Reference oracle runs for the KL comparison: a method with parameter X
    // uses oracle_X when present; otherwise the alpha=500 oracle, else the
    // lowest-alpha oracle.
    std::vector<double> oracle_params;
    for (const auto& key : ordered_keys)
        if (key.policy == "oracle") oracle_params.push_back(key.parameter);
    std::sort(oracle_params.begin(), oracle_params.end());
    if (!oracle_params.empty()) {
        double fallback = oracle_params.front();
        for (double p : oracle_params)
            if (p == 500.0) fallback = p;
        for (const auto& key : ordered_keys) {
            if (key.policy == "no_train" || key.policy == "all_train") continue;
            double ref = fallback;
            if (std::binary_search(oracle_params.begin(), oracle_params.end(), key.parameter))
                ref = key.parameter;
            const auto& oracle_group = methods[MethodKey{"oracle", ref}];
            std::map<std::uint64_t, const SummaryEntry*> oracle_by_seed;
            for (const SummaryEntry* e : oracle_group) oracle_by_seed[e->seed] = e;
            double sum = 0.0;
            int used = 0;
            for (const SummaryEntry* e : methods[key]) {
                auto it = oracle_by_seed.find(e->seed);
                if (it == oracle_by_seed.end()) continue;
                const auto method_dec = read_decisions_csv(e->csv);
                const auto oracle_dec = read_decisions_csv(it->second->csv);
                sum += decision_kl(method_dec, oracle_dec);
                ++used;
            }
            if (used == 0) continue;
            KlRow row;
            row.policy = key.policy;
            row.parameter = key.parameter;
            row.oracle_alpha = ref;
            row.mean_kl_bits = sum / used;
            row.seeds = used;
            tables.kl.push_back(std::move(row));
        }
    }

    {
        std::ofstream out(dir / "recovery.csv");
        if (!out) throw IoError("cannot open recovery.csv for writing");
        out << "policy,parameter,mean_recovery,seeds_used,seeds_filtered\n";
        for (const auto& r : tables.recovery)
            out << r.policy << ',' << format_double(r.parameter) << ','
                << format_double(r.mean_recovery) << ',' << r.seeds_used << ','
                << r.seeds_filtered << '\n';
    }
    {
        std::ofstream out(dir / "kl.csv");
        if (!out) throw IoError("cannot open kl.csv for writing");
        out << "policy,parameter,oracle_alpha,mean_kl_bits,seeds\n";
        for (const auto& r : tables.kl)
            out << r.policy << ',' << format_double(r.parameter) << ','
                << format_double(r.oracle_alpha) << ',' << format_double(r.mean_kl_bits) << ','
                << r.seeds << '\n';
    }
    return tables;
}

}  // namespace traingate
