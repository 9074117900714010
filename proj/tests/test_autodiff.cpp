#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "gsreg/autodiff.hpp"
#include "gsreg/rng.hpp"

using namespace gsreg;
using gsreg::testing::FdProblem;
using gsreg::testing::fd_max_rel_err;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

NodeId sum_all(Tape& tape, NodeId a) {
    return tape.scale(tape.mean_all(a), static_cast<double>(tape.value(a).numel()));
}

}  // namespace

TEST_CASE("conv2d with an identity kernel reproduces the input") {
    Rng rng(1);
    const Tensor x = random_tensor(2, 3, 5, 5, rng);
    Tensor w(3, 3, 3, 3);  // out channel i passes through in channel i
    for (int c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;
    Tensor b(3, 1, 1, 1);

    Tape tape;
    const NodeId out =
        tape.conv2d(tape.leaf(x), tape.leaf(std::move(w)), tape.leaf(std::move(b)), 1);
    CHECK(tape.value(out).v == x.v);
}

TEST_CASE("leaky_relu values") {
    Tensor x(1, 1, 1, 2);
    x.v = {-1.0, 2.0};
    Tape tape;
    const NodeId y = tape.leaky_relu(tape.leaf(x), 0.01);
    CHECK(tape.value(y).v[0] == doctest::Approx(-0.01));
    CHECK(tape.value(y).v[1] == doctest::Approx(2.0));
}

TEST_CASE("backward of a parameter sum is all ones; other groups get zeros") {
    Rng rng(2);
    const Tensor a = random_tensor(1, 2, 3, 3, rng);
    const Tensor b = random_tensor(1, 2, 3, 3, rng);

    Tape tape;
    const NodeId pa = tape.param(a);
    const NodeId pb = tape.param(b);
    const NodeId loss = sum_all(tape, pa);
    tape.backward(loss);

    for (double g : tape.grad(pa).v) CHECK(g == doctest::Approx(1.0).epsilon(1e-15));
    for (double g : tape.grad(pb).v) CHECK(g == 0.0);
}

TEST_CASE("loss scaled by zero produces an all-zero gradient set") {
    Rng rng(3);
    Tape tape;
    const NodeId p = tape.param(random_tensor(1, 1, 4, 4, rng));
    const NodeId loss = tape.scale(tape.mean_all(tape.square(p)), 0.0);
    tape.backward(loss);
    for (double g : tape.grad(p).v) CHECK(g == 0.0);
}

TEST_CASE("two backward passes over one tape equal two separate tapes") {
    Rng rng(4);
    const Tensor x = random_tensor(2, 2, 6, 6, rng);
    const Tensor w = random_tensor(2, 2, 3, 3, rng);
    const Tensor b = random_tensor(2, 1, 1, 1, rng);

    auto build = [&](Tape& tape, NodeId& l1, NodeId& l2) {
        const NodeId px = tape.param(x);
        const NodeId pw = tape.param(w);
        const NodeId pb = tape.param(b);
        const NodeId conv = tape.conv2d(px, pw, pb, 1);
        l1 = tape.mean_all(tape.square(conv));
        l2 = tape.mean_all(tape.square(tape.fwd_diff_x(conv)));
        return std::array<NodeId, 3>{px, pw, pb};
    };

    Tape shared;
    NodeId s1, s2;
    const auto nodes_shared = build(shared, s1, s2);
    shared.backward(s1);
    std::vector<std::vector<double>> g1;
    for (NodeId id : nodes_shared) g1.push_back(shared.grad(id).v);
    shared.backward(s2);
    std::vector<std::vector<double>> g2;
    for (NodeId id : nodes_shared) g2.push_back(shared.grad(id).v);

    Tape ta, tb;
    NodeId a1, a2, b1, b2;
    const auto nodes_a = build(ta, a1, a2);
    const auto nodes_b = build(tb, b1, b2);
    ta.backward(a1);
    tb.backward(b2);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(g1[i] == ta.grad(nodes_a[i]).v);
        CHECK(g2[i] == tb.grad(nodes_b[i]).v);
    }
}

TEST_CASE("gradient of a sum of losses equals the sum of gradients") {
    Rng rng(5);
    const Tensor x = random_tensor(1, 2, 5, 5, rng);
    const double alpha = 0.37, beta = 2.25;

    auto grads_of = [&](auto&& loss_builder) {
        Tape tape;
        const NodeId p = tape.param(x);
        tape.backward(loss_builder(tape, p));
        return tape.grad(p).v;
    };

    const auto ga = grads_of(
        [&](Tape& t, NodeId p) { return t.mean_all(t.square(p)); });
    const auto gb = grads_of(
        [&](Tape& t, NodeId p) { return t.mean_all(t.square(t.fwd_diff_y(p))); });
    const auto gsum = grads_of([&](Tape& t, NodeId p) {
        return t.add(t.scale(t.mean_all(t.square(p)), alpha),
                     t.scale(t.mean_all(t.square(t.fwd_diff_y(p))), beta));
    });

    for (std::size_t i = 0; i < ga.size(); ++i)
        CHECK(gsum[i] == doctest::Approx(alpha * ga[i] + beta * gb[i]).epsilon(1e-12));
}

TEST_CASE("determinism: identical inputs give bit-identical values and gradients") {
    auto run = [] {
        Rng rng(77);
        Tape tape;
        const NodeId x = tape.param(random_tensor(1, 2, 6, 6, rng));
        const NodeId w = tape.param(random_tensor(2, 2, 3, 3, rng));
        const NodeId b = tape.param(random_tensor(2, 1, 1, 1, rng));
        const NodeId loss =
            tape.mean_all(tape.square(tape.leaky_relu(tape.conv2d(x, w, b, 1), 0.2)));
        tape.backward(loss);
        std::vector<double> out = tape.value(loss).v;
        out.insert(out.end(), tape.grad(x).v.begin(), tape.grad(x).v.end());
        out.insert(out.end(), tape.grad(w).v.begin(), tape.grad(w).v.end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("primitive gradients match the finite-difference oracle") {
    Rng rng(6);

    SUBCASE("maxpool + upsample + concat chain") {
        FdProblem prob;
        prob.params = {random_tensor(1, 2, 4, 4, rng), random_tensor(1, 2, 4, 4, rng)};
        prob.build = [](Tape& t, const std::vector<NodeId>& p) {
            const NodeId pooled = t.maxpool2(p[0]);
            const NodeId up = t.upsample_nearest2(pooled);
            return t.mean_all(t.square(t.concat_channels(up, p[1])));
        };
        CHECK(fd_max_rel_err(prob) < 1e-4);
    }

    SUBCASE("batch_norm train composed with conv") {
        FdProblem prob;
        prob.params = {random_tensor(2, 2, 4, 4, rng), random_tensor(2, 2, 3, 3, rng),
                       random_tensor(2, 1, 1, 1, rng),
                       random_tensor(2, 1, 1, 1, rng, 0.5, 1.5),
                       random_tensor(2, 1, 1, 1, rng)};
        prob.build = [](Tape& t, const std::vector<NodeId>& p) {
            const NodeId conv = t.conv2d(p[0], p[1], p[2], 1);
            return t.mean_all(t.square(t.batch_norm(conv, p[3], p[4], BnMode::Train)));
        };
        CHECK(fd_max_rel_err(prob) < 1e-4);
    }

    SUBCASE("box_sum and div") {
        FdProblem prob;
        prob.params = {random_tensor(1, 1, 5, 6, rng, 0.5, 1.5),
                       random_tensor(1, 1, 5, 6, rng, 0.5, 1.5)};
        prob.build = [](Tape& t, const std::vector<NodeId>& p) {
            return t.mean_all(t.div(t.box_sum(p[0], 3), t.add_const(t.square(p[1]), 0.7)));
        };
        CHECK(fd_max_rel_err(prob) < 1e-4);
    }
}

TEST_CASE("error paths") {
    Tape tape;
    Rng rng(8);
    const NodeId a = tape.leaf(random_tensor(1, 2, 4, 4, rng));
    const NodeId b = tape.leaf(random_tensor(1, 3, 4, 4, rng));
    CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("add"), ShapeError);

    const NodeId w = tape.leaf(random_tensor(2, 4, 3, 3, rng));  // expects 4 channels
    const NodeId bias = tape.leaf(random_tensor(2, 1, 1, 1, rng));
    CHECK_THROWS_WITH_AS(tape.conv2d(a, w, bias, 1), doctest::Contains("conv2d"),
                         ShapeError);

    CHECK_THROWS_AS(tape.backward(a), ShapeError);  // non-scalar loss
}

TEST_CASE("extract_gradients flattens groups in declaration order") {
    Rng rng(9);
    const Tensor t0 = random_tensor(1, 1, 2, 2, rng);
    const Tensor t1 = random_tensor(2, 1, 1, 1, rng);

    Tape tape;
    ParamBinding binding;
    const NodeId p0 = tape.param(t0);
    const NodeId p1 = tape.param(t1);
    binding["layer"].push_back(p0);
    binding["layer"].push_back(p1);

    const NodeId loss = tape.add(sum_all(tape, p0), tape.scale(sum_all(tape, p1), 3.0));
    tape.backward(loss);
    const GradientSet gs = extract_gradients(tape, binding);

    REQUIRE(gs.count("layer") == 1);
    const auto& flat = gs.at("layer");
    REQUIRE(flat.size() == t0.numel() + t1.numel());
    for (std::size_t i = 0; i < t0.numel(); ++i) CHECK(flat[i] == doctest::Approx(1.0));
    for (std::size_t i = t0.numel(); i < flat.size(); ++i)
        CHECK(flat[i] == doctest::Approx(3.0));
}
