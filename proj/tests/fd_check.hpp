#pragma once
// Test-side finite-difference oracle. Independent of the library's
// analytic backward pass: it only ever calls the forward evaluation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gsreg/autodiff.hpp"

namespace gsreg::testing {

// Builds a scalar graph over the given parameter tensors; used both for
// the analytic gradients (one tape + backward) and for the central
// finite-difference probes (forward-only re-evaluations).
struct FdProblem {
    std::vector<Tensor> params;
    std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
};

inline double fd_eval(const FdProblem& prob, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.param(p));
    return tape.scalar_value(prob.build(tape, ids));
}

// max over coordinates of |analytic - numeric| / max(1e-7, |analytic|, |numeric|)
inline double fd_max_rel_err(const FdProblem& prob, double h = 1e-5) {
    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& p : prob.params) ids.push_back(tape.param(p));
    const NodeId loss = prob.build(tape, ids);
    tape.backward(loss);

    double worst = 0.0;
    std::vector<Tensor> probe = prob.params;
    for (std::size_t t = 0; t < probe.size(); ++t) {
        const Tensor& analytic = tape.grad(ids[t]);
        for (std::size_t i = 0; i < probe[t].numel(); ++i) {
            const double keep = probe[t].v[i];
            probe[t].v[i] = keep + h;
            const double fp = fd_eval(prob, probe);
            probe[t].v[i] = keep - h;
            const double fm = fd_eval(prob, probe);
            probe[t].v[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom =
                std::max({1e-7, std::fabs(numeric), std::fabs(analytic.v[i])});
            worst = std::max(worst, std::fabs(numeric - analytic.v[i]) / denom);
        }
    }
    return worst;
}

}  // namespace gsreg::testing
