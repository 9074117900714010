#include "gsreg/surgery.hpp"

#include <cmath>
#include <cstdio>

#include "gsreg/kernels.hpp"

namespace gsreg {

namespace {
const kernels::KernelTable& K() { return kernels::active(); }

std::string format_lambda(double lambda) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", lambda);
    return buf;
}
}  // namespace

std::string Strategy::name() const {
    switch (kind) {
        case StrategyKind::LayerwiseProject: return "layerwise_project";
        case StrategyKind::GlobalProject: return "global_project";
        case StrategyKind::AgrRandom: return "agr_random";
        case StrategyKind::WeightedSum: return "weighted_sum_" + format_lambda(lambda);
        case StrategyKind::SimilarityOnly: return "similarity_only";
    }
    return "unknown";
}

Strategy Strategy::parse(const std::string& name, double lambda, double sigma) {
    if (name == "layerwise_project") return layerwise_project();
    if (name == "global_project") return global_project();
    if (name == "agr_random") return agr_random(sigma);
    if (name == "weighted_sum") return weighted_sum(lambda);
    if (name == "similarity_only") return similarity_only();
    throw ConfigError("unknown strategy '" + name + "'");
}

std::vector<double> project_if_conflict(const std::vector<double>& g_sim,
                                        const std::vector<double>& g_reg) {
    if (g_sim.size() != g_reg.size())
        throw ShapeError("project_if_conflict: length mismatch " +
                         std::to_string(g_sim.size()) + " vs " +
                         std::to_string(g_reg.size()));
    const std::size_t n = g_sim.size();
    const double reg_sq = K().dot(g_reg.data(), g_reg.data(), n);
    if (std::sqrt(reg_sq) < 1e-12) return g_sim;  // nothing to conflict with
    const double d = K().dot(g_sim.data(), g_reg.data(), n);
    if (d > 0.0) return g_sim;  // non-conflicting: exact pass-through
    std::vector<double> out = g_sim;
    K().axpy(-d / reg_sq, g_reg.data(), out.data(), n);
    return out;
}

namespace {

void require_same_keys(const GradientSet& a, const GradientSet& b) {
    std::string missing;
    for (const auto& [k, v] : a)
        if (!b.count(k)) missing += " " + k;
    for (const auto& [k, v] : b)
        if (!a.count(k)) missing += " " + k;
    if (!missing.empty())
        throw ShapeError("apply_strategy: gradient sets disagree on groups:" + missing);
}

double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mean = K().vsum(v.data(), v.size()) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

GradientSet apply_strategy(const Strategy& strategy, const GradientSet& g_sim,
                           const GradientSet& g_reg, Rng& rng) {
    require_same_keys(g_sim, g_reg);
    GradientSet out;

    switch (strategy.kind) {
        case StrategyKind::LayerwiseProject: {
            for (const auto& [id, gs] : g_sim)
                out.emplace(id, project_if_conflict(gs, g_reg.at(id)));
            break;
        }

        case StrategyKind::GlobalProject: {
            std::vector<double> flat_sim, flat_reg;
            for (const auto& [id, gs] : g_sim) {  // map iteration: sorted layer ids
                flat_sim.insert(flat_sim.end(), gs.begin(), gs.end());
                const auto& gr = g_reg.at(id);
                flat_reg.insert(flat_reg.end(), gr.begin(), gr.end());
            }
            const std::vector<double> proj = project_if_conflict(flat_sim, flat_reg);
            std::size_t off = 0;
            for (const auto& [id, gs] : g_sim) {
                out.emplace(id, std::vector<double>(proj.begin() + off,
                                                    proj.begin() + off + gs.size()));
                off += gs.size();
            }
            break;
        }

        case StrategyKind::AgrRandom: {
            for (const auto& [id, gs] : g_sim) {
                const auto& gr = g_reg.at(id);
                if (gs.size() != gr.size())
                    throw ShapeError("apply_strategy: group '" + id + "' length mismatch");
                const double sigma =
                    strategy.sigma > 0.0 ? strategy.sigma : population_std(gs);
                std::vector<double> g = gs;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double agree = gs[i] * gr[i];
                    if (agree < 0.0) g[i] = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
                }
                out.emplace(id, std::move(g));
            }
            break;
        }

        case StrategyKind::WeightedSum: {
            for (const auto& [id, gs] : g_sim) {
                const auto& gr = g_reg.at(id);
                if (gs.size() != gr.size())
                    throw ShapeError("apply_strategy: group '" + id + "' length mismatch");
                std::vector<double> g = gs;
                K().axpy(strategy.lambda, gr.data(), g.data(), g.size());
                out.emplace(id, std::move(g));
            }
            break;
        }

        case StrategyKind::SimilarityOnly: {
            out = g_sim;
            break;
        }
    }
    return out;
}

int count_conflicts(const GradientSet& g_sim, const GradientSet& g_reg) {
    int n = 0;
    for (const auto& [id, gs] : g_sim) {
        const auto it = g_reg.find(id);
        if (it == g_reg.end() || it->second.size() != gs.size()) continue;
        if (K().dot(gs.data(), it->second.data(), gs.size()) < 0.0) ++n;
    }
    return n;
}

double l2_norm(const GradientSet& g) {
    double acc = 0.0;
    for (const auto& [id, v] : g) acc += K().dot(v.data(), v.data(), v.size());
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------

void AdamOptimizer::step(std::vector<ParamGroup>& groups, const GradientSet& grads) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (auto& group : groups) {
        if (!group.trainable) continue;
        const auto it = grads.find(group.layer_id);
        if (it == grads.end())
            throw ShapeError("adam_step: no gradient for group '" + group.layer_id + "'");
        const std::vector<double>& g = it->second;
        if (g.size() != group.param_count())
            throw ShapeError("adam_step: gradient size " + std::to_string(g.size()) +
                             " != parameter count " + std::to_string(group.param_count()) +
                             " for group '" + group.layer_id + "'");

        auto& m = m_[group.layer_id];
        auto& v = v_[group.layer_id];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);

        // gather params, update, scatter back
        std::vector<double> flat;
        flat.reserve(g.size());
        for (const auto& t : group.tensors) flat.insert(flat.end(), t.v.begin(), t.v.end());

        K().adam_update(flat.data(), m.data(), v.data(), g.data(), flat.size(), cfg_.lr,
                        cfg_.beta1, cfg_.beta2, cfg_.eps, bc1, bc2);

        std::size_t off = 0;
        for (auto& t : group.tensors) {
            std::copy_n(flat.begin() + off, t.numel(), t.v.begin());
            off += t.numel();
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

Tensor moving_planes(const Tensor& batch) {
    Tensor m(batch.n, 1, batch.h, batch.w);
    const std::size_t plane = static_cast<std::size_t>(batch.h) * batch.w;
    for (int n = 0; n < batch.n; ++n)
        std::copy_n(batch.plane(n, 1), plane, m.plane(n, 0));
    return m;
}

Tensor fixed_planes(const Tensor& batch) {
    Tensor f(batch.n, 1, batch.h, batch.w);
    const std::size_t plane = static_cast<std::size_t>(batch.h) * batch.w;
    for (int n = 0; n < batch.n; ++n)
        std::copy_n(batch.plane(n, 0), plane, f.plane(n, 0));
    return f;
}

}  // namespace

StepReport train_step(RegistrationModel& model, const Tensor& batch,
                      const LossConfig& loss_cfg, const Strategy& strategy,
                      AdamOptimizer& opt, Rng& rng) {
    if (!model.train_mode())
        throw ShapeError("train_step: model must be in train mode");

    Tape tape;
    ParamBinding binding;
    const NodeId field = model.forward(tape, batch, &binding);
    const NodeId warped = tape.warp(field, moving_planes(batch));
    const NodeId l_sim =
        similarity_loss(tape, loss_cfg.similarity, warped, fixed_planes(batch),
                        loss_cfg.lncc_window);
    const NodeId l_reg = smoothness_loss(tape, field);

    StepReport report;
    report.l_sim = tape.scalar_value(l_sim);
    report.l_reg = tape.scalar_value(l_reg);
    if (!std::isfinite(report.l_sim) || !std::isfinite(report.l_reg))
        throw NumericError("train_step: non-finite loss (L_sim=" +
                           std::to_string(report.l_sim) + ", L_reg=" +
                           std::to_string(report.l_reg) + ")");

    tape.backward(l_sim);
    GradientSet g_sim = extract_gradients(tape, binding);
    tape.backward(l_reg);
    GradientSet g_reg = extract_gradients(tape, binding);

    report.total_layers = static_cast<int>(g_sim.size());
    report.conflicted_layers = count_conflicts(g_sim, g_reg);
    report.g_sim_norm = l2_norm(g_sim);
    report.g_reg_norm = l2_norm(g_reg);

    const GradientSet applied = apply_strategy(strategy, g_sim, g_reg, rng);
    opt.step(model.groups(), applied);
    return report;
}

}  // namespace gsreg
