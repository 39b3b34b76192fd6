#include "traingate/learner.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "traingate/errors.hpp"
#include "traingate/rng.hpp"

namespace traingate {

double nll_loss(double mu, double logvar, double y) {
    const double r = y - mu;
    return 0.5 * std::exp(-logvar) * r * r + 0.5 * logvar;
}

MlpMember::MlpMember(int d_in, int hidden) {
    if (d_in < 1) throw std::invalid_argument("MlpMember: d_in must be >= 1");
    if (hidden < 1) throw std::invalid_argument("MlpMember: hidden must be >= 1");
    arch_ = MlpArch{d_in, hidden};
    params_.assign(arch_.n_params(), 0.0);
}

MlpMember MlpMember::random_init(int d_in, int hidden, Rng& rng) {
    MlpMember m(d_in, hidden);
    const MlpArch& a = m.arch_;
    auto init_layer = [&](std::size_t offset, int out, int in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (int k = 0; k < out * in; ++k)
            m.params_[offset + static_cast<std::size_t>(k)] = rng.uniform(-bound, bound);
    };
    init_layer(a.w1_offset(), hidden, d_in);
    init_layer(a.w2_offset(), hidden, hidden);
    init_layer(a.w3_offset(), 2, hidden);
    return m;
}

MlpOutput MlpMember::forward_cached(std::span<const double> x, double* a1, double* a2) const {
    if (static_cast<int>(x.size()) != arch_.d_in)
        throw std::invalid_argument("MlpMember::forward: input dimension mismatch");
    const int d = arch_.d_in;
    const int h = arch_.hidden;
    const double* p = params_.data();
    const double* w1 = p + arch_.w1_offset();
    const double* b1 = p + arch_.b1_offset();
    const double* w2 = p + arch_.w2_offset();
    const double* b2 = p + arch_.b2_offset();
    const double* w3 = p + arch_.w3_offset();
    const double* b3 = p + arch_.b3_offset();

    for (int j = 0; j < h; ++j) {
        double z = b1[j];
        const double* row = w1 + static_cast<std::size_t>(j) * d;
        for (int i = 0; i < d; ++i) z += row[i] * x[static_cast<std::size_t>(i)];
        a1[j] = std::tanh(z);
    }
    for (int j = 0; j < h; ++j) {
        double z = b2[j];
        const double* row = w2 + static_cast<std::size_t>(j) * h;
        for (int i = 0; i < h; ++i) z += row[i] * a1[i];
        a2[j] = std::tanh(z);
    }
    MlpOutput out;
    double mu = b3[0];
    double lv = b3[1];
    for (int i = 0; i < h; ++i) {
        mu += w3[i] * a2[i];
        lv += w3[h + i] * a2[i];
    }
    out.mu = mu;
    out.logvar = lv;
    return out;
}

MlpOutput MlpMember::forward(std::span<const double> x) const {
    std::vector<double> a1(static_cast<std::size_t>(arch_.hidden));
    std::vector<double> a2(static_cast<std::size_t>(arch_.hidden));
    return forward_cached(x, a1.data(), a2.data());
}

namespace {

// Backprop of one example's NLL into `grad`, scaled by inv_n (mean reduction).
// Returns that example's loss.
double accumulate_example(const MlpArch& arch, const double* p, const LabeledExample& ex,
                          double inv_n, double* grad, double* a1, double* a2, double* d1,
                          double* d2) {
    const int d = arch.d_in;
    const int h = arch.hidden;
    const double* w1 = p + arch.w1_offset();
    const double* b1 = p + arch.b1_offset();
    const double* w2 = p + arch.w2_offset();
    const double* b2 = p + arch.b2_offset();
    const double* w3 = p + arch.w3_offset();
    const double* b3 = p + arch.b3_offset();

    for (int j = 0; j < h; ++j) {
        double z = b1[j];
        const double* row = w1 + static_cast<std::size_t>(j) * d;
        for (int i = 0; i < d; ++i) z += row[i] * ex.x[static_cast<std::size_t>(i)];
        a1[j] = std::tanh(z);
    }
    for (int j = 0; j < h; ++j) {
        double z = b2[j];
        const double* row = w2 + static_cast<std::size_t>(j) * h;
        for (int i = 0; i < h; ++i) z += row[i] * a1[i];
        a2[j] = std::tanh(z);
    }
    double mu = b3[0];
    double lv = b3[1];
    for (int i = 0; i < h; ++i) {
        mu += w3[i] * a2[i];
        lv += w3[h + i] * a2[i];
    }

    const double r = ex.y - mu;
    const double inv_var = std::exp(-lv);
    const double loss = 0.5 * inv_var * r * r + 0.5 * lv;

    const double dmu = -inv_var * r * inv_n;
    const double dlv = (0.5 - 0.5 * inv_var * r * r) * inv_n;

    double* g_w1 = grad + arch.w1_offset();
    double* g_b1 = grad + arch.b1_offset();
    double* g_w2 = grad + arch.w2_offset();
    double* g_b2 = grad + arch.b2_offset();
    double* g_w3 = grad + arch.w3_offset();
    double* g_b3 = grad + arch.b3_offset();

    g_b3[0] += dmu;
    g_b3[1] += dlv;
    for (int i = 0; i < h; ++i) {
        g_w3[i] += dmu * a2[i];
        g_w3[h + i] += dlv * a2[i];
        d2[i] = (w3[i] * dmu + w3[h + i] * dlv) * (1.0 - a2[i] * a2[i]);
    }
    for (int j = 0; j < h; ++j) {
        const double dj = d2[j];
        g_b2[j] += dj;
        double* g_row = g_w2 + static_cast<std::size_t>(j) * h;
        for (int i = 0; i < h; ++i) g_row[i] += dj * a1[i];
    }
    for (int i = 0; i < h; ++i) {
        double acc = 0.0;
        for (int j = 0; j < h; ++j) acc += w2[static_cast<std::size_t>(j) * h + i] * d2[j];
        d1[i] = acc * (1.0 - a1[i] * a1[i]);
    }
    for (int j = 0; j < h; ++j) {
        const double dj = d1[j];
        g_b1[j] += dj;
        double* g_row = g_w1 + static_cast<std::size_t>(j) * d;
        for (int i = 0; i < d; ++i) g_row[i] += dj * ex.x[static_cast<std::size_t>(i)];
    }
    return loss;
}

double member_gradient(const MlpMember& member, std::span<const LabeledExample> batch,
                       std::vector<double>& grad) {
    const MlpArch& arch = member.arch();
    grad.assign(arch.n_params(), 0.0);
    const std::size_t h = static_cast<std::size_t>(arch.hidden);
    std::vector<double> a1(h), a2(h), d1(h), d2(h);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    for (const auto& ex : batch) {
        if (static_cast<int>(ex.x.size()) != arch.d_in)
            throw std::invalid_argument("train batch: example dimension mismatch");
        loss_sum += accumulate_example(arch, member.params().data(), ex, inv_n, grad.data(),
                                       a1.data(), a2.data(), d1.data(), d2.data());
    }
    return loss_sum * inv_n;
}

}  // namespace

EnsembleLearner::EnsembleLearner(int d_in, int hidden, int ensemble_size, double learning_rate_,
                                 std::uint64_t seed)
    : learning_rate(learning_rate_) {
    if (ensemble_size < 2)
        throw std::invalid_argument("EnsembleLearner: ensemble size must be >= 2");
    arch_ = MlpArch{d_in, hidden};
    members_.reserve(static_cast<std::size_t>(ensemble_size));
    adam_.resize(static_cast<std::size_t>(ensemble_size));
    for (int e = 0; e < ensemble_size; ++e) {
        Rng rng = Rng::substream(seed, "member-init", static_cast<std::uint64_t>(e));
        members_.push_back(MlpMember::random_init(d_in, hidden, rng));
        adam_[static_cast<std::size_t>(e)].m.assign(arch_.n_params(), 0.0);
        adam_[static_cast<std::size_t>(e)].v.assign(arch_.n_params(), 0.0);
    }
}

std::size_t EnsembleLearner::trainable_param_count() const {
    std::size_t count = 0;
    for (std::size_t i = 0; i < arch_.n_params(); ++i)
        if (!frozen(i)) ++count;
    return count;
}

bool EnsembleLearner::frozen(std::size_t index) const {
    if (freeze_first_layer && index < arch_.w2_offset()) return true;
    if (freeze_variance_head) {
        const std::size_t var_row = arch_.w3_offset() + static_cast<std::size_t>(arch_.hidden);
        if (index >= var_row && index < arch_.b3_offset()) return true;
        if (index == arch_.b3_offset() + 1) return true;
    }
    return false;
}

double EnsembleLearner::train_batch(std::span<const LabeledExample> batch) {
    if (batch.empty()) throw std::invalid_argument("train_batch: batch must be non-empty");
    double loss_sum = 0.0;
    std::vector<double> grad;
    for (std::size_t e = 0; e < members_.size(); ++e) {
        loss_sum += member_gradient(members_[e], batch, grad);
        AdamState& st = adam_[e];
        st.step += 1;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
        double* p = members_[e].params().data();
        for (std::size_t i = 0; i < grad.size(); ++i) {
            if (frozen(i)) continue;
            st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * grad[i];
            st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
            const double m_hat = st.m[i] / bc1;
            const double v_hat = st.v[i] / bc2;
            p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + kEpsilon);
        }
    }
    return loss_sum / static_cast<double>(members_.size());
}

std::vector<std::vector<double>> EnsembleLearner::gradient(
    std::span<const LabeledExample> batch) const {
    if (batch.empty()) throw std::invalid_argument("gradient: batch must be non-empty");
    std::vector<std::vector<double>> grads(members_.size());
    for (std::size_t e = 0; e < members_.size(); ++e)
        member_gradient(members_[e], batch, grads[e]);
    return grads;
}

Snapshot EnsembleLearner::snapshot() const {
    Snapshot snap;
    snap.arch = arch_;
    snap.members.resize(members_.size());
    for (std::size_t e = 0; e < members_.size(); ++e) {
        snap.members[e].params = members_[e].params();
        snap.members[e].adam_m = adam_[e].m;
        snap.members[e].adam_v = adam_[e].v;
        snap.members[e].adam_step = adam_[e].step;
    }
    return snap;
}

void EnsembleLearner::restore(const Snapshot& snap) {
    if (!(snap.arch == arch_) || snap.members.size() != members_.size())
        throw StateError("restore: snapshot architecture does not match learner");
    for (std::size_t e = 0; e < members_.size(); ++e) {
        members_[e].params_ = snap.members[e].params;
        adam_[e].m = snap.members[e].adam_m;
        adam_[e].v = snap.members[e].adam_v;
        adam_[e].step = snap.members[e].adam_step;
    }
}

void EnsembleLearner::reset_optimizer() {
    for (auto& st : adam_) {
        std::fill(st.m.begin(), st.m.end(), 0.0);
        std::fill(st.v.begin(), st.v.end(), 0.0);
        st.step = 0;
    }
}

Uncertainty EnsembleLearner::predict_with_uncertainty(std::span<const double> x) const {
    Uncertainty u;
    const double inv_e = 1.0 / static_cast<double>(members_.size());
    std::vector<double> means(members_.size());
    for (std::size_t e = 0; e < members_.size(); ++e) {
        const MlpOutput out = members_[e].forward(x);
        means[e] = out.mu;
        u.mean += out.mu * inv_e;
        u.var_aleatoric += std::exp(out.logvar) * inv_e;
    }
    for (double m : means) {
        const double d = m - u.mean;
        u.var_epistemic += d * d * inv_e;
    }
    return u;
}

namespace {
using nlohmann::json;
}

void EnsembleLearner::save_checkpoint(const std::filesystem::path& path) const {
    json j;
    j["kind"] = "ensemble-learner";
    j["d_in"] = arch_.d_in;
    j["hidden"] = arch_.hidden;
    j["ensemble"] = static_cast<int>(members_.size());
    j["learning_rate"] = learning_rate;
    j["freeze_first_layer"] = freeze_first_layer;
    j["freeze_variance_head"] = freeze_variance_head;
    json members = json::array();
    for (std::size_t e = 0; e < members_.size(); ++e) {
        json m;
        m["params"] = members_[e].params();
        m["adam_m"] = adam_[e].m;
        m["adam_v"] = adam_[e].v;
        m["adam_step"] = adam_[e].step;
        members.push_back(std::move(m));
    }
    j["members"] = std::move(members);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed while writing checkpoint: " + path.string());
}

EnsembleLearner EnsembleLearner::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed checkpoint JSON: " + path.string());
    for (const char* key : {"kind", "d_in", "hidden", "ensemble", "members"})
        if (!j.contains(key)) throw SchemaError(key);
    if (j["kind"] != "ensemble-learner")
        throw StateError("checkpoint kind is not ensemble-learner");
    EnsembleLearner learner(j["d_in"].get<int>(), j["hidden"].get<int>(),
                            j["ensemble"].get<int>(),
                            j.value("learning_rate", 1e-4), 0);
    learner.freeze_first_layer = j.value("freeze_first_layer", false);
    learner.freeze_variance_head = j.value("freeze_variance_head", false);
    const auto& members = j["members"];
    if (members.size() != learner.members_.size())
        throw StateError("checkpoint member count does not match header");
    const std::size_t n = learner.arch_.n_params();
    for (std::size_t e = 0; e < learner.members_.size(); ++e) {
        const auto& m = members[e];
        for (const char* key : {"params", "adam_m", "adam_v", "adam_step"})
            if (!m.contains(key)) throw SchemaError(key);
        auto params = m["params"].get<std::vector<double>>();
        auto adam_m = m["adam_m"].get<std::vector<double>>();
        auto adam_v = m["adam_v"].get<std::vector<double>>();
        if (params.size() != n || adam_m.size() != n || adam_v.size() != n)
            throw StateError("checkpoint parameter arrays do not match header sizes");
        learner.members_[e].params_ = std::move(params);
        learner.adam_[e].m = std::move(adam_m);
        learner.adam_[e].v = std::move(adam_v);
        learner.adam_[e].step = m["adam_step"].get<std::int64_t>();
    }
    return learner;
}

}  // namespace traingate
