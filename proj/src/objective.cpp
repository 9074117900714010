#include "gsreg/objective.hpp"

#include "gsreg/errors.hpp"

namespace gsreg {

Similarity similarity_from_string(const std::string& s) {
    if (s == "mse") return Similarity::Mse;
    if (s == "lncc") return Similarity::Lncc;
    throw ConfigError("unknown similarity '" + s + "' (expected mse or lncc)");
}

std::string to_string(Similarity s) { return s == Similarity::Mse ? "mse" : "lncc"; }

NodeId mse_loss(Tape& tape, NodeId warped, const Tensor& fixed) {
    require_same_shape(tape.value(warped), fixed, "mse_loss");
    const NodeId f = tape.leaf(fixed);
    return tape.mean_all(tape.square(tape.sub(warped, f)));
}

NodeId lncc_loss(Tape& tape, NodeId warped, const Tensor& fixed, int window) {
    require_same_shape(tape.value(warped), fixed, "lncc_loss");
    if (window < 3 || window % 2 == 0)
        throw ShapeError("lncc_loss: window must be odd and >= 3, got " +
                         std::to_string(window));
    constexpr double kVarFloor = 1e-5;

    const Tensor& shape = tape.value(warped);

    // Per-pixel window population; truncated windows at the borders keep
    // the statistics unbiased there.
    Tensor ones(shape.n, shape.c, shape.h, shape.w, 1.0);
    const NodeId count = tape.box_sum(tape.leaf(std::move(ones)), window);

    const NodeId i = warped;
    const NodeId j = tape.leaf(fixed);

    const NodeId si = tape.box_sum(i, window);
    const NodeId sj = tape.box_sum(j, window);
    const NodeId sii = tape.box_sum(tape.square(i), window);
    const NodeId sjj = tape.box_sum(tape.square(j), window);
    const NodeId sij = tape.box_sum(tape.mul(i, j), window);

    const NodeId mu_i = tape.div(si, count);
    const NodeId mu_j = tape.div(sj, count);

    // cross = sum(I*J) - n*mu_i*mu_j ; var = sum(I^2) - n*mu^2
    const NodeId cross = tape.sub(sij, tape.mul(si, mu_j));
    const NodeId var_i = tape.sub(sii, tape.mul(si, mu_i));
    const NodeId var_j = tape.sub(sjj, tape.mul(sj, mu_j));

    const NodeId r2 = tape.div(tape.square(cross),
                               tape.add_const(tape.mul(var_i, var_j), kVarFloor));
    return tape.scale(tape.mean_all(r2), -1.0);
}

NodeId smoothness_loss(Tape& tape, NodeId field) {
    const NodeId dx = tape.fwd_diff_x(field);
    const NodeId dy = tape.fwd_diff_y(field);
    const NodeId mx = tape.mean_all(tape.square(dx));
    const NodeId my = tape.mean_all(tape.square(dy));
    return tape.scale(tape.add(mx, my), 0.5);
}

NodeId similarity_loss(Tape& tape, Similarity kind, NodeId warped, const Tensor& fixed,
                       int lncc_window) {
    return kind == Similarity::Mse ? mse_loss(tape, warped, fixed)
                                   : lncc_loss(tape, warped, fixed, lncc_window);
}

}  // namespace gsreg
