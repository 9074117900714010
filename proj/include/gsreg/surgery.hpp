#pragma once
// Gradient strategies: how the similarity and regularization gradients
// combine into the applied update. The projection strategies replace the
// weighted-sum hyperparameter by orthogonalizing the similarity gradient
// against the regularization gradient wherever the two conflict
// (negative inner product), either per layer group or globally.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "gsreg/autodiff.hpp"
#include "gsreg/network.hpp"
#include "gsreg/objective.hpp"
#include "gsreg/rng.hpp"

namespace gsreg {

enum class StrategyKind {
    LayerwiseProject,
    GlobalProject,
    AgrRandom,
    WeightedSum,
    SimilarityOnly,
};

struct Strategy {
    StrategyKind kind = StrategyKind::LayerwiseProject;
    double lambda = 0.01;  // WeightedSum
    double sigma = 0.0;    // AgrRandom; <= 0 means per-group std of g_sim

    static Strategy layerwise_project() { return {StrategyKind::LayerwiseProject, 0, 0}; }
    static Strategy global_project() { return {StrategyKind::GlobalProject, 0, 0}; }
    static Strategy agr_random(double sigma = 0.0) {
        return {StrategyKind::AgrRandom, 0, sigma};
    }
    static Strategy weighted_sum(double lambda) {
        return {StrategyKind::WeightedSum, lambda, 0};
    }
    static Strategy similarity_only() { return {StrategyKind::SimilarityOnly, 0, 0}; }

    // e.g. "layerwise_project", "weighted_sum_0.01"
    std::string name() const;
    static Strategy parse(const std::string& name, double lambda, double sigma);
};

// Algorithm core: returns g_sim untouched when the gradients do not
// conflict (positive inner product) or when g_reg is numerically zero;
// otherwise removes the g_reg component from g_sim.
std::vector<double> project_if_conflict(const std::vector<double>& g_sim,
                                        const std::vector<double>& g_reg);

// Applies the strategy per gradient group; key sets must match exactly.
GradientSet apply_strategy(const Strategy& strategy, const GradientSet& g_sim,
                           const GradientSet& g_reg, Rng& rng);

// Conflicted groups (inner product < 0) between two gradient sets.
int count_conflicts(const GradientSet& g_sim, const GradientSet& g_reg);

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    // One update over all trainable groups; surgery has already been
    // applied to `grads`, so the moments accumulate the modified gradient.
    void step(std::vector<ParamGroup>& groups, const GradientSet& grads);

    std::size_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    // serialized state access (checkpointing)
    std::map<std::string, std::vector<double>>& first_moments() { return m_; }
    std::map<std::string, std::vector<double>>& second_moments() { return v_; }
    const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
    const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }
    void set_step_count(std::size_t s) { step_ = s; }

private:
    AdamConfig cfg_;
    std::size_t step_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

// ---------------------------------------------------------------------------

struct LossConfig {
    Similarity similarity = Similarity::Mse;
    int lncc_window = 9;
};

struct StepReport {
    double l_sim = 0.0;
    double l_reg = 0.0;
    int conflicted_layers = 0;
    int total_layers = 0;
    double g_sim_norm = 0.0;
    double g_reg_norm = 0.0;
};

// One training step: forward, warp, both losses, two backward passes over
// the shared tape, strategy application, Adam update.
// `batch` carries the stacked pairs (N,2,H,W); channel 0 fixed, 1 moving.
StepReport train_step(RegistrationModel& model, const Tensor& batch,
                      const LossConfig& loss_cfg, const Strategy& strategy,
                      AdamOptimizer& opt, Rng& rng);

double l2_norm(const GradientSet& g);

}  // namespace gsreg
