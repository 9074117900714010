#include <cmath>
#include <functional>
#include <memory>
#include <ostream>
#include <vector>

#include "gsreg/harness.hpp"
#include "gsreg/objective.hpp"
#include "gsreg/rng.hpp"
#include "gsreg/surgery.hpp"

namespace gsreg {

namespace {

// A differentiable graph under test: `build` records the graph over the
// bound parameter nodes and must return a scalar node.
struct GraphSpec {
    std::vector<Tensor> params;
    std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
};

double eval_loss(const GraphSpec& spec, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.param(p));
    return tape.scalar_value(spec.build(tape, ids));
}

// max combined-tolerance error between analytic and central FD gradients
double max_grad_err(const GraphSpec& spec, double h = 1e-5) {
    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& p : spec.params) ids.push_back(tape.param(p));
    const NodeId loss = spec.build(tape, ids);
    tape.backward(loss);

    double worst = 0.0;
    std::vector<Tensor> probe = spec.params;
    for (std::size_t t = 0; t < probe.size(); ++t) {
        const Tensor& analytic = tape.grad(ids[t]);
        for (std::size_t i = 0; i < probe[t].numel(); ++i) {
            const double keep = probe[t].v[i];
            probe[t].v[i] = keep + h;
            const double fp = eval_loss(spec, probe);
            probe[t].v[i] = keep - h;
            const double fm = eval_loss(spec, probe);
            probe[t].v[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom =
                std::max({1e-7, std::fabs(numeric), std::fabs(analytic.v[i])});
            worst = std::max(worst, std::fabs(numeric - analytic.v[i]) / denom);
        }
    }
    return worst;
}

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

// values kept away from the leaky-ReLU kink so FD probes stay one-sided
Tensor random_tensor_no_kink(int n, int c, int h, int w, Rng& rng) {
    Tensor t(n, c, h, w);
    for (auto& v : t.v) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.uniform01() < 0.5 ? -mag : mag;
    }
    return t;
}

struct Check {
    std::string name;
    bool pass;
    std::string detail;
};

Check grad_check(const std::string& name, const GraphSpec& spec, double tol = 1e-4) {
    const double err = max_grad_err(spec);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g (tol %.1g)", err, tol);
    return Check{name, err < tol, buf};
}

// Fixed random weights turn a tensor output into a generic scalar. The
// weights are sampled once per check so every finite-difference probe
// evaluates the same function.
NodeId weighted_scalar(Tape& tape, NodeId out, const Tensor& weights) {
    require_same_shape(tape.value(out), weights, "weighted_scalar");
    return tape.mean_all(tape.mul(out, tape.leaf(weights)));
}

// End-to-end gradient check through the whole tiny U-Net: the analytic
// gradients come from one training-style tape; the numeric ones from
// central differences over the model parameters themselves.
Check tiny_unet_end_to_end_check(Rng& rng) {
    UNetConfig tiny;
    tiny.encoder_widths = {2, 4};
    RegistrationModel model = RegistrationModel::build_unet(tiny, 7);
    Rng hr = rng.fork(12);
    for (auto& g : model.groups())  // nonzero head so every branch carries gradient
        if (g.layer_id == "head.conv")
            for (auto& t : g.tensors)
                for (auto& v : t.v) v = hr.uniform(-0.05, 0.05);

    Tensor batch = random_tensor(2, 2, 8, 8, rng, 0.0, 1.0);
    Tensor moving(2, 1, 8, 8);
    Tensor fixed_t(2, 1, 8, 8);
    for (int n = 0; n < 2; ++n) {
        std::copy_n(batch.plane(n, 1), 64, moving.plane(n, 0));
        std::copy_n(batch.plane(n, 0), 64, fixed_t.plane(n, 0));
    }

    auto loss_of = [&](RegistrationModel& m, ParamBinding* binding, Tape& tape) {
        const NodeId field = m.forward(tape, batch, binding);
        const NodeId warped = tape.warp(field, moving);
        return tape.add(mse_loss(tape, warped, fixed_t), smoothness_loss(tape, field));
    };

    Tape tape;
    ParamBinding binding;
    const NodeId loss = loss_of(model, &binding, tape);
    tape.backward(loss);
    const GradientSet analytic = extract_gradients(tape, binding);

    const double h = 1e-5;
    double worst = 0.0;
    for (auto& group : model.groups()) {
        const auto& ga = analytic.at(group.layer_id);
        std::size_t flat = 0;
        for (auto& tensor : group.tensors)
            for (auto& v : tensor.v) {
                const double keep = v;
                v = keep + h;
                Tape tp;
                const double fp = tp.scalar_value(loss_of(model, nullptr, tp));
                v = keep - h;
                Tape tm;
                const double fm = tm.scalar_value(loss_of(model, nullptr, tm));
                v = keep;
                const double numeric = (fp - fm) / (2.0 * h);
                const double denom =
                    std::max({1e-7, std::fabs(numeric), std::fabs(ga[flat])});
                worst = std::max(worst, std::fabs(numeric - ga[flat]) / denom);
                ++flat;
            }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g (tol 1e-4)", worst);
    return Check{"tiny U-Net end-to-end", worst < 1e-4, buf};
}

std::vector<Check> gradient_checks() {
    std::vector<Check> checks;
    Rng rng(20240811);

    {  // conv2d, stride 1: input, weight, bias gradients
        GraphSpec s;
        s.params = {random_tensor(2, 4, 6, 6, rng), random_tensor(3, 4, 3, 3, rng),
                    random_tensor(3, 1, 1, 1, rng)};
        Rng wr = rng.fork(1);
        const Tensor weights = random_tensor(2, 3, 6, 6, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.conv2d(p[0], p[1], p[2], 1), weights);
        };
        checks.push_back(grad_check("conv2d stride 1", s));
    }
    {  // conv2d, stride 2
        GraphSpec s;
        s.params = {random_tensor(1, 3, 6, 6, rng), random_tensor(2, 3, 3, 3, rng),
                    random_tensor(2, 1, 1, 1, rng)};
        Rng wr = rng.fork(2);
        const Tensor weights = random_tensor(1, 2, 3, 3, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.conv2d(p[0], p[1], p[2], 2), weights);
        };
        checks.push_back(grad_check("conv2d stride 2", s));
    }
    {  // batch_norm, train mode
        GraphSpec s;
        s.params = {random_tensor(2, 4, 6, 6, rng), random_tensor(4, 1, 1, 1, rng, 0.5, 1.5),
                    random_tensor(4, 1, 1, 1, rng)};
        Rng wr = rng.fork(3);
        const Tensor weights = random_tensor(2, 4, 6, 6, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.batch_norm(p[0], p[1], p[2], BnMode::Train),
                                   weights);
        };
        checks.push_back(grad_check("batch_norm train", s));
    }
    {  // batch_norm, eval mode with fixed running stats
        GraphSpec s;
        s.params = {random_tensor(2, 4, 6, 6, rng), random_tensor(4, 1, 1, 1, rng, 0.5, 1.5),
                    random_tensor(4, 1, 1, 1, rng)};
        auto stats = std::make_shared<BnRunningStats>(4);
        for (int c = 0; c < 4; ++c) {
            stats->mean[c] = 0.1 * c;
            stats->var[c] = 0.5 + 0.2 * c;
        }
        Rng wr = rng.fork(4);
        const Tensor weights = random_tensor(2, 4, 6, 6, wr, 0.1, 1.0);
        s.build = [weights, stats](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(
                t, t.batch_norm(p[0], p[1], p[2], BnMode::Eval, stats.get()), weights);
        };
        checks.push_back(grad_check("batch_norm eval", s));
    }
    {  // leaky_relu
        GraphSpec s;
        s.params = {random_tensor_no_kink(2, 4, 6, 6, rng)};
        Rng wr = rng.fork(5);
        const Tensor weights = random_tensor(2, 4, 6, 6, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.leaky_relu(p[0], 0.2), weights);
        };
        checks.push_back(grad_check("leaky_relu", s));
    }
    {  // maxpool2 (distinct values keep the argmax stable under probes)
        Tensor x(2, 3, 6, 6);
        std::vector<std::size_t> perm(x.numel());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1],
                      perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        for (std::size_t i = 0; i < x.numel(); ++i)
            x.v[i] = 0.01 * static_cast<double>(perm[i]);
        GraphSpec s;
        s.params = {std::move(x)};
        Rng wr = rng.fork(6);
        const Tensor weights = random_tensor(2, 3, 3, 3, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.maxpool2(p[0]), weights);
        };
        checks.push_back(grad_check("maxpool2", s));
    }
    {  // upsample_nearest2
        GraphSpec s;
        s.params = {random_tensor(2, 3, 4, 4, rng)};
        Rng wr = rng.fork(7);
        const Tensor weights = random_tensor(2, 3, 8, 8, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.upsample_nearest2(p[0]), weights);
        };
        checks.push_back(grad_check("upsample_nearest2", s));
    }
    {  // concat_channels
        GraphSpec s;
        s.params = {random_tensor(2, 3, 5, 5, rng), random_tensor(2, 2, 5, 5, rng)};
        Rng wr = rng.fork(8);
        const Tensor weights = random_tensor(2, 5, 5, 5, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.concat_channels(p[0], p[1]), weights);
        };
        checks.push_back(grad_check("concat_channels", s));
    }
    {  // box_sum
        GraphSpec s;
        s.params = {random_tensor(1, 2, 7, 9, rng)};
        Rng wr = rng.fork(9);
        const Tensor weights = random_tensor(1, 2, 7, 9, wr, 0.1, 1.0);
        s.build = [weights](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.box_sum(p[0], 5), weights);
        };
        checks.push_back(grad_check("box_sum", s));
    }
    {  // forward differences
        GraphSpec s;
        s.params = {random_tensor(1, 2, 6, 7, rng)};
        Rng wr = rng.fork(10);
        const Tensor wx = random_tensor(1, 2, 6, 7, wr, 0.1, 1.0);
        const Tensor wy = random_tensor(1, 2, 6, 7, wr, 0.1, 1.0);
        s.build = [wx, wy](Tape& t, const std::vector<NodeId>& p) {
            return t.add(weighted_scalar(t, t.fwd_diff_x(p[0]), wx),
                         weighted_scalar(t, t.fwd_diff_y(p[0]), wy));
        };
        checks.push_back(grad_check("fwd_diff", s));
    }
    {  // elementwise mul/div/square chain
        GraphSpec s;
        s.params = {random_tensor(1, 2, 4, 4, rng, 0.5, 1.5),
                    random_tensor(1, 2, 4, 4, rng, 0.5, 1.5)};
        s.build = [](Tape& t, const std::vector<NodeId>& p) {
            return t.mean_all(t.div(t.square(t.mul(p[0], p[1])),
                                    t.add_const(t.square(p[1]), 0.3)));
        };
        checks.push_back(grad_check("mul/div/square", s));
    }
    {  // warp w.r.t. field; samples interior, fractional parts off-lattice
        Tensor img = random_tensor(2, 1, 8, 8, rng, 0.0, 1.0);
        Tensor field(2, 2, 8, 8);
        for (int n = 0; n < 2; ++n)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const double sx = std::min(5.0, std::max(1.0, x * 0.5)) +
                                      rng.uniform(0.25, 0.65);
                    const double sy = std::min(5.0, std::max(1.0, y * 0.5)) +
                                      rng.uniform(0.25, 0.65);
                    field.at(n, 0, y, x) = sx - x;
                    field.at(n, 1, y, x) = sy - y;
                }
        GraphSpec s;
        s.params = {std::move(field)};
        Rng wr = rng.fork(11);
        const Tensor weights = random_tensor(2, 1, 8, 8, wr, 0.1, 1.0);
        s.build = [weights, img](Tape& t, const std::vector<NodeId>& p) {
            return weighted_scalar(t, t.warp(p[0], img), weights);
        };
        checks.push_back(grad_check("warp (field gradient)", s));
    }

    // the three losses through a direct-field model
    {
        const int hsz = 8, wsz = 8;
        Tensor moving = random_tensor(1, 1, hsz, wsz, rng, 0.0, 1.0);
        Tensor fixed_t = random_tensor(1, 1, hsz, wsz, rng, 0.0, 1.0);
        Tensor field(1, 2, hsz, wsz);
        for (int y = 0; y < hsz; ++y)
            for (int x = 0; x < wsz; ++x) {
                field.at(0, 0, y, x) =
                    std::min(5.0, std::max(1.0, x * 0.6)) + rng.uniform(0.25, 0.7) - x;
                field.at(0, 1, y, x) =
                    std::min(5.0, std::max(1.0, y * 0.6)) + rng.uniform(0.25, 0.7) - y;
            }

        {
            GraphSpec s;
            s.params = {field};
            s.build = [moving, fixed_t](Tape& t, const std::vector<NodeId>& p) {
                return mse_loss(t, t.warp(p[0], moving), fixed_t);
            };
            checks.push_back(grad_check("mse_loss (field)", s));
        }
        {
            GraphSpec s;
            s.params = {field};
            s.build = [moving, fixed_t](Tape& t, const std::vector<NodeId>& p) {
                return lncc_loss(t, t.warp(p[0], moving), fixed_t, 5);
            };
            checks.push_back(grad_check("lncc_loss (field)", s));
        }
        {
            GraphSpec s;
            s.params = {field};
            s.build = [](Tape& t, const std::vector<NodeId>& p) {
                return smoothness_loss(t, p[0]);
            };
            checks.push_back(grad_check("smoothness_loss (field)", s));
        }
    }

    checks.push_back(tiny_unet_end_to_end_check(rng));

    return checks;
}

}  // namespace

int run_selftest(std::ostream& out) {
    int failures = 0;
    auto record = [&](const Check& c) {
        out << (c.pass ? "[ok]   " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
        if (!c.pass) ++failures;
    };

    for (const auto& c : gradient_checks()) record(c);

    // projection property suite
    {
        Rng rng(99);
        bool pass_orth = true, pass_norm = true, pass_desc = true, pass_passthrough = true,
             pass_scale = true;
        for (int trial = 0; trial < 1000; ++trial) {
            const int dim = static_cast<int>(rng.uniform_int(1, 512));
            std::vector<double> gs(dim), gr(dim);
            const double scale_s = std::pow(10.0, rng.uniform(-3.0, 3.0));
            const double scale_r = std::pow(10.0, rng.uniform(-3.0, 3.0));
            for (auto& v : gs) v = rng.normal() * scale_s;
            for (auto& v : gr) v = rng.normal() * scale_r;

            const auto g = project_if_conflict(gs, gr);
            double d_sr = 0, d_gr = 0, d_gs = 0, n_g = 0, n_s = 0, n_r = 0;
            for (int i = 0; i < dim; ++i) {
                d_sr += gs[i] * gr[i];
                d_gr += g[i] * gr[i];
                d_gs += g[i] * gs[i];
                n_g += g[i] * g[i];
                n_s += gs[i] * gs[i];
                n_r += gr[i] * gr[i];
            }
            const double tol = 1e-10 * std::sqrt(n_g) * std::sqrt(n_r);
            if (d_gr < -tol) pass_orth = false;
            if (std::sqrt(n_g) > std::sqrt(n_s) * (1.0 + 1e-12)) pass_norm = false;
            if (d_gs < 0.0) pass_desc = false;
            if (d_sr > 0.0 && g != gs) pass_passthrough = false;

            // scale equivariance in the conflicting branch
            std::vector<double> gr_scaled = gr;
            for (auto& v : gr_scaled) v *= 1e6;
            const auto g2 = project_if_conflict(gs, gr_scaled);
            for (int i = 0; i < dim; ++i)
                if (std::fabs(g2[i] - g[i]) >
                    1e-12 * std::max(1.0, std::fabs(g[i])))
                    pass_scale = false;
        }
        record({"projection: non-conflicting pass-through", pass_passthrough, "1000 trials"});
        record({"projection: post-surgery inner product >= 0", pass_orth, "1000 trials"});
        record({"projection: norm never grows", pass_norm, "1000 trials"});
        record({"projection: descent direction kept", pass_desc, "1000 trials"});
        record({"projection: scale equivariance", pass_scale, "1000 trials"});
    }

    out << (failures == 0 ? "selftest passed\n"
                          : "selftest failed (" + std::to_string(failures) + " checks)\n");
    return failures;
}

}  // namespace gsreg
