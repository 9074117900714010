#include "gsreg/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "gsreg/kernels.hpp"

namespace gsreg {

namespace {
const kernels::KernelTable& K() { return kernels::active(); }
}  // namespace

NodeId Tape::push_node(Tensor val, bool needs_grad) {
    nodes_.push_back(Node{std::move(val), Tensor{}, needs_grad});
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(NodeId id) { return nodes_[id].grad; }

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.grad.numel() == 0)
        throw ShapeError("grad requested before backward or for a constant node");
    return n.grad;
}

NodeId Tape::leaf(Tensor t) { return push_node(std::move(t), false); }

NodeId Tape::param(Tensor t) { return push_node(std::move(t), true); }

// ---------------------------------------------------------------------------
// conv2d, 3x3 kernel, padding 1

NodeId Tape::conv2d(NodeId in, NodeId weight, NodeId bias, int stride) {
    const Tensor& x = nodes_[in].val;
    const Tensor& w = nodes_[weight].val;
    const Tensor& b = nodes_[bias].val;
    if (w.h != 3 || w.w != 3)
        throw ShapeError("conv2d: kernel must be 3x3, got " + w.shape_str());
    if (w.c != x.c)
        throw ShapeError("conv2d: weight expects " + std::to_string(w.c) +
                         " input channels, input has " + std::to_string(x.c));
    if (b.n != w.n || b.c != 1 || b.h != 1 || b.w != 1)
        throw ShapeError("conv2d: bias shape " + b.shape_str() + " does not match " +
                         std::to_string(w.n) + " output channels");
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");

    const int ho = (x.h - 1) / stride + 1;
    const int wo = (x.w - 1) / stride + 1;
    Tensor out(x.n, w.n, ho, wo);

    if (stride == 1) {
        for (int n = 0; n < x.n; ++n) {
            for (int co = 0; co < w.n; ++co) {
                double* op = out.plane(n, co);
                const double bv = b.v[co];
                std::fill(op, op + static_cast<std::size_t>(ho) * wo, bv);
                for (int ci = 0; ci < x.c; ++ci) {
                    const double* ip = x.plane(n, ci);
                    const double* wp = w.plane(co, ci);  // 3x3 kernel taps
                    for (int y = 0; y < ho; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * wo;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yi = y + ky - 1;
                            if (yi < 0 || yi >= x.h) continue;
                            const double* irow = ip + static_cast<std::size_t>(yi) * x.w;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int dx = kx - 1;
                                const int x0 = dx < 0 ? -dx : 0;  // first valid output col
                                const int len = x.w - (dx < 0 ? -dx : dx);
                                K().axpy(wp[ky * 3 + kx], irow + x0 + dx, orow + x0,
                                         static_cast<std::size_t>(len));
                            }
                        }
                    }
                }
            }
        }
    } else {
        for (int n = 0; n < x.n; ++n)
            for (int co = 0; co < w.n; ++co)
                for (int y = 0; y < ho; ++y)
                    for (int xo = 0; xo < wo; ++xo) {
                        double acc = b.v[co];
                        for (int ci = 0; ci < x.c; ++ci)
                            for (int ky = 0; ky < 3; ++ky) {
                                const int yi = y * stride + ky - 1;
                                if (yi < 0 || yi >= x.h) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int xi = xo * stride + kx - 1;
                                    if (xi < 0 || xi >= x.w) continue;
                                    acc += w.at(co, ci, ky, kx) * x.at(n, ci, yi, xi);
                                }
                            }
                        out.at(n, co, y, xo) = acc;
                    }
    }

    const bool ng = needs(in) || needs(weight) || needs(bias);
    NodeId id = push_node(std::move(out), ng);
    Op op;
    op.kind = OpKind::Conv2d;
    op.out = id;
    op.in0 = in;
    op.in1 = weight;
    op.in2 = bias;
    op.i0 = stride;
    ops_.push_back(std::move(op));
    return id;
}

// ---------------------------------------------------------------------------
// batch normalization over (N, H, W) per channel

NodeId Tape::batch_norm(NodeId in, NodeId scale, NodeId shift, BnMode mode,
                        BnRunningStats* stats, double momentum, double eps) {
    const Tensor& x = nodes_[in].val;
    const Tensor& g = nodes_[scale].val;
    const Tensor& b = nodes_[shift].val;
    if (static_cast<int>(g.numel()) != x.c || static_cast<int>(b.numel()) != x.c)
        throw ShapeError("batch_norm: scale/shift must have one value per channel (" +
                         std::to_string(x.c) + "), got " + g.shape_str() + "/" +
                         b.shape_str());
    if (mode == BnMode::Eval && (!stats || static_cast<int>(stats->mean.size()) != x.c))
        throw ShapeError("batch_norm: eval mode requires running stats per channel");

    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;  // normalization set size

    Tensor out(x.n, x.c, x.h, x.w);
    std::vector<double> aux(x.numel() + x.c);  // xhat followed by per-channel invstd
    double* xhat = aux.data();
    double* invstd = aux.data() + x.numel();

    for (int c = 0; c < x.c; ++c) {
        double mu, var;
        if (mode == BnMode::Train) {
            double s = 0.0;
            for (int n = 0; n < x.n; ++n) s += K().vsum(x.plane(n, c), plane);
            mu = s / static_cast<double>(m);
            double sq = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = x.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(m);  // biased, used for normalization
            if (stats) {
                const double unbiased =
                    m > 1 ? sq / static_cast<double>(m - 1) : var;
                stats->mean[c] = (1.0 - momentum) * stats->mean[c] + momentum * mu;
                stats->var[c] = (1.0 - momentum) * stats->var[c] + momentum * unbiased;
            }
        } else {
            mu = stats->mean[c];
            var = stats->var[c];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[c] = is;
        const double gc = g.v[c], bc = b.v[c];
        for (int n = 0; n < x.n; ++n) {
            const double* p = x.plane(n, c);
            double* q = out.plane(n, c);
            double* xh = xhat + (static_cast<std::size_t>(n) * x.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                q[i] = gc * xh[i] + bc;
            }
        }
    }

    const bool ng = needs(in) || needs(scale) || needs(shift);
    NodeId id = push_node(std::move(out), ng);
    Op op;
    op.kind = OpKind::BatchNorm;
    op.out = id;
    op.in0 = in;
    op.in1 = scale;
    op.in2 = shift;
    op.mode = mode;
    op.d0 = eps;
    op.aux = std::move(aux);
    ops_.push_back(std::move(op));
    return id;
}

NodeId Tape::leaky_relu(NodeId in, double slope) {
    const Tensor& x = nodes_[in].val;
    Tensor out(x.n, x.c, x.h, x.w);
    K().leaky_relu_fwd(x.v.data(), out.v.data(), x.numel(), slope);
    NodeId id = push_node(std::move(out), needs(in));
    Op op;
    op.kind = OpKind::LeakyRelu;
    op.out = id;
    op.in0 = in;
    op.d0 = slope;
    ops_.push_back(std::move(op));
    return id;
}

NodeId Tape::maxpool2(NodeId in) {
    const Tensor& x = nodes_[in].val;
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw ShapeError("maxpool2: spatial size must be even, got " + x.shape_str());
    Tensor out(x.n, x.c, x.h / 2, x.w / 2);
    std::vector<int> indices(out.numel());
    std::size_t oi = 0;
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* p = x.plane(n, c);
            for (int y = 0; y < x.h; y += 2)
                for (int xx = 0; xx < x.w; xx += 2) {
                    int best = y * x.w + xx;
                    double bv = p[best];
                    const int cands[3] = {y * x.w + xx + 1, (y + 1) * x.w + xx,
                                          (y + 1) * x.w + xx + 1};
                    for (int cand : cands)
                        if (p[cand] > bv) {
                            bv = p[cand];
                            best = cand;
                        }
                    out.v[oi] = bv;
                    indices[oi] =
                        static_cast<int>((static_cast<std::size_t>(n) * x.c + c) *
                                         (static_cast<std::size_t>(x.h) * x.w)) + best;
                    ++oi;
                }
        }
    NodeId id = push_node(std::move(out), needs(in));
    Op op;
    op.kind = OpKind::MaxPool2;
    op.out = id;
    op.in0 = in;
    op.indices = std::move(indices);
    ops_.push_back(std::move(op));
    return id;
}

NodeId Tape::upsample_nearest2(NodeId in) {
    const Tensor& x = nodes_[in].val;
    Tensor out(x.n, x.c, x.h * 2, x.w * 2);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* p = x.plane(n, c);
            double* q = out.plane(n, c);
            for (int y = 0; y < out.h; ++y) {
                const double* prow = p + static_cast<std::size_t>(y / 2) * x.w;
                double* qrow = q + static_cast<std::size_t>(y) * out.w;
                for (int xx = 0; xx < out.w; ++xx) qrow[xx] = prow[xx / 2];
            }
        }
    NodeId id = push_node(std::move(out), needs(in));
    Op op;
    op.kind = OpKind::Upsample2;
    op.out = id;
    op.in0 = in;
    ops_.push_back(std::move(op));
    return id;
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].val;
    const Tensor& tb = nodes_[b].val;
    if (ta.n != tb.n || ta.h != tb.h || ta.w != tb.w)
        throw ShapeError("concat_channels: incompatible shapes " + ta.shape_str() + " vs " +
                         tb.shape_str());
    const int ca = ta.c;  // taken before push_node invalidates the reference
    Tensor out(ta.n, ta.c + tb.c, ta.h, ta.w);
    const std::size_t plane = static_cast<std::size_t>(ta.h) * ta.w;
    for (int n = 0; n < ta.n; ++n) {
        std::copy_n(ta.plane(n, 0), static_cast<std::size_t>(ta.c) * plane, out.plane(n, 0));
        std::copy_n(tb.plane(n, 0), static_cast<std::size_t>(tb.c) * plane,
                    out.plane(n, ta.c));
    }
    NodeId id = push_node(std::move(out), needs(a) || needs(b));
    Op op;
    op.kind = OpKind::Concat;
    op.out = id;
    op.in0 = a;
    op.in1 = b;
    op.i0 = ca;
    ops_.push_back(std::move(op));
    return id;
}

// ---------------------------------------------------------------------------
// elementwise

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].val;
    const Tensor& tb = nodes_[b].val;
    require_same_shape(ta, tb, "add");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    K().vadd(ta.v.data(), tb.v.data(), out.v.data(), ta.numel());
    NodeId id = push_node(std::move(out), needs(a) || needs(b));
    ops_.push_back(Op{OpKind::Add, id, a, b, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].val;
    const Tensor& tb = nodes_[b].val;
    require_same_shape(ta, tb, "sub");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    K().vsub(ta.v.data(), tb.v.data(), out.v.data(), ta.numel());
    NodeId id = push_node(std::move(out), needs(a) || needs(b));
    ops_.push_back(Op{OpKind::Sub, id, a, b, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].val;
    const Tensor& tb = nodes_[b].val;
    require_same_shape(ta, tb, "mul");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    K().vmul(ta.v.data(), tb.v.data(), out.v.data(), ta.numel());
    NodeId id = push_node(std::move(out), needs(a) || needs(b));
    ops_.push_back(Op{OpKind::Mul, id, a, b, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::div(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].val;
    const Tensor& tb = nodes_[b].val;
    require_same_shape(ta, tb, "div");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    for (std::size_t i = 0; i < ta.numel(); ++i) out.v[i] = ta.v[i] / tb.v[i];
    NodeId id = push_node(std::move(out), needs(a) || needs(b));
    ops_.push_back(Op{OpKind::Div, id, a, b, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::square(NodeId a) {
    const Tensor& ta = nodes_[a].val;
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    K().vmul(ta.v.data(), ta.v.data(), out.v.data(), ta.numel());
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::Square, id, a, -1, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::scale(NodeId a, double s) {
    const Tensor& ta = nodes_[a].val;
    Tensor out = ta;
    K().scal(s, out.v.data(), out.numel());
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::Scale, id, a, -1, -1, s, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::add_const(NodeId a, double s) {
    const Tensor& ta = nodes_[a].val;
    Tensor out = ta;
    for (auto& v : out.v) v += s;
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::AddConst, id, a, -1, -1, s, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::mean_all(NodeId a) {
    const Tensor& ta = nodes_[a].val;
    if (ta.numel() == 0) throw ShapeError("mean_all: empty tensor");
    Tensor out = Tensor::scalar(K().vsum(ta.v.data(), ta.numel()) /
                                static_cast<double>(ta.numel()));
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::MeanAll, id, a, -1, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

// ---------------------------------------------------------------------------
// box_sum: separable sliding-window sum, zero padding outside the plane

namespace {

void box_sum_plane(const double* in, double* out, int h, int w, int r, double* rowtmp) {
    // horizontal pass into rowtmp
    for (int y = 0; y < h; ++y) {
        const double* irow = in + static_cast<std::size_t>(y) * w;
        double* trow = rowtmp + static_cast<std::size_t>(y) * w;
        double acc = 0.0;
        for (int x = 0; x <= std::min(r, w - 1); ++x) acc += irow[x];
        for (int x = 0; x < w; ++x) {
            trow[x] = acc;
            const int enter = x + r + 1;
            const int leave = x - r;
            if (enter < w) acc += irow[enter];
            if (leave >= 0) acc -= irow[leave];
        }
    }
    // vertical pass into out
    for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int y = 0; y <= std::min(r, h - 1); ++y) acc += rowtmp[static_cast<std::size_t>(y) * w + x];
        for (int y = 0; y < h; ++y) {
            out[static_cast<std::size_t>(y) * w + x] = acc;
            const int enter = y + r + 1;
            const int leave = y - r;
            if (enter < h) acc += rowtmp[static_cast<std::size_t>(enter) * w + x];
            if (leave >= 0) acc -= rowtmp[static_cast<std::size_t>(leave) * w + x];
        }
    }
}

}  // namespace

NodeId Tape::box_sum(NodeId a, int window) {
    const Tensor& ta = nodes_[a].val;
    if (window < 1 || window % 2 == 0)
        throw ShapeError("box_sum: window must be odd and positive");
    const int r = window / 2;
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    std::vector<double> tmp(static_cast<std::size_t>(ta.h) * ta.w);
    for (int n = 0; n < ta.n; ++n)
        for (int c = 0; c < ta.c; ++c)
            box_sum_plane(ta.plane(n, c), out.plane(n, c), ta.h, ta.w, r, tmp.data());
    NodeId id = push_node(std::move(out), needs(a));
    Op op;
    op.kind = OpKind::BoxSum;
    op.out = id;
    op.in0 = a;
    op.i0 = window;
    ops_.push_back(std::move(op));
    return id;
}

NodeId Tape::fwd_diff_x(NodeId a) {
    const Tensor& ta = nodes_[a].val;
    if (ta.w < 2) throw ShapeError("fwd_diff_x: width must be >= 2");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    for (int n = 0; n < ta.n; ++n)
        for (int c = 0; c < ta.c; ++c) {
            const double* p = ta.plane(n, c);
            double* q = out.plane(n, c);
            for (int y = 0; y < ta.h; ++y) {
                const std::size_t row = static_cast<std::size_t>(y) * ta.w;
                for (int x = 0; x + 1 < ta.w; ++x) q[row + x] = p[row + x + 1] - p[row + x];
                q[row + ta.w - 1] = 0.0;
            }
        }
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::DiffX, id, a, -1, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

NodeId Tape::fwd_diff_y(NodeId a) {
    const Tensor& ta = nodes_[a].val;
    if (ta.h < 2) throw ShapeError("fwd_diff_y: height must be >= 2");
    Tensor out(ta.n, ta.c, ta.h, ta.w);
    for (int n = 0; n < ta.n; ++n)
        for (int c = 0; c < ta.c; ++c) {
            const double* p = ta.plane(n, c);
            double* q = out.plane(n, c);
            for (int y = 0; y + 1 < ta.h; ++y) {
                const std::size_t row = static_cast<std::size_t>(y) * ta.w;
                for (int x = 0; x < ta.w; ++x) q[row + x] = p[row + ta.w + x] - p[row + x];
            }
            std::fill_n(q + static_cast<std::size_t>(ta.h - 1) * ta.w, ta.w, 0.0);
        }
    NodeId id = push_node(std::move(out), needs(a));
    ops_.push_back(Op{OpKind::DiffY, id, a, -1, -1, 0, 0, 0, BnMode::Train, {}, {}, {}});
    return id;
}

// ---------------------------------------------------------------------------
// warp

namespace {

struct SampleGeom {
    int x0, y0, x1, y1;
    double fx, fy;
    bool in_x, in_y;  // derivative validity (not saturated by the clamp)
};

inline SampleGeom sample_geometry(double sx, double sy, int h, int w) {
    SampleGeom g;
    g.in_x = sx > 0.0 && sx < static_cast<double>(w - 1);
    g.in_y = sy > 0.0 && sy < static_cast<double>(h - 1);
    const double cx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    g.x0 = std::min(static_cast<int>(cx), w >= 2 ? w - 2 : 0);
    g.y0 = std::min(static_cast<int>(cy), h >= 2 ? h - 2 : 0);
    g.x1 = std::min(g.x0 + 1, w - 1);
    g.y1 = std::min(g.y0 + 1, h - 1);
    g.fx = cx - g.x0;
    g.fy = cy - g.y0;
    return g;
}

}  // namespace

NodeId Tape::warp(NodeId field, const Tensor& images) {
    const Tensor& f = nodes_[field].val;
    if (f.c != 2)
        throw ShapeError("warp: field must have 2 channels, got " + f.shape_str());
    if (images.n != f.n || images.c != 1 || images.h != f.h || images.w != f.w)
        throw ShapeError("warp: images " + images.shape_str() + " incompatible with field " +
                         f.shape_str());
    Tensor out(f.n, 1, f.h, f.w);
    for (int n = 0; n < f.n; ++n) {
        const double* ux = f.plane(n, 0);
        const double* uy = f.plane(n, 1);
        const double* img = images.plane(n, 0);
        double* q = out.plane(n, 0);
        for (int y = 0; y < f.h; ++y)
            for (int x = 0; x < f.w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * f.w + x;
                const SampleGeom g = sample_geometry(x + ux[i], y + uy[i], f.h, f.w);
                const double v00 = img[static_cast<std::size_t>(g.y0) * f.w + g.x0];
                const double v10 = img[static_cast<std::size_t>(g.y0) * f.w + g.x1];
                const double v01 = img[static_cast<std::size_t>(g.y1) * f.w + g.x0];
                const double v11 = img[static_cast<std::size_t>(g.y1) * f.w + g.x1];
                const double top = v00 + g.fx * (v10 - v00);
                const double bot = v01 + g.fx * (v11 - v01);
                q[i] = top + g.fy * (bot - top);
            }
    }
    NodeId id = push_node(std::move(out), needs(field));
    Op op;
    op.kind = OpKind::Warp;
    op.out = id;
    op.in0 = field;
    op.aux_t = images;
    ops_.push_back(std::move(op));
    return id;
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(NodeId scalar_node) {
    const Tensor& loss = nodes_[scalar_node].val;
    if (loss.numel() != 1)
        throw ShapeError("backward: loss node must be scalar, got " + loss.shape_str());

    for (auto& node : nodes_) {
        if (!node.needs_grad) continue;
        if (node.grad.numel() == 0)
            node.grad = Tensor(node.val.n, node.val.c, node.val.h, node.val.w);
        else
            node.grad.fill(0.0);
    }
    if (!nodes_[scalar_node].needs_grad) return;  // constant loss: all gradients zero
    nodes_[scalar_node].grad.v[0] = 1.0;

    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (!nodes_[it->out].needs_grad) continue;
        backward_op(*it);
    }
}

void Tape::backward_op(const Op& op) {
    const Tensor& go = nodes_[op.out].grad;

    switch (op.kind) {
        case OpKind::Conv2d: {
            const Tensor& x = nodes_[op.in0].val;
            const Tensor& w = nodes_[op.in1].val;
            const int stride = op.i0;
            const int ho = go.h, wo = go.w;
            if (stride == 1) {
                if (needs(op.in2)) {
                    Tensor& gb = grad_buf(op.in2);
                    for (int n = 0; n < x.n; ++n)
                        for (int co = 0; co < w.n; ++co)
                            gb.v[co] += K().vsum(go.plane(n, co),
                                                 static_cast<std::size_t>(ho) * wo);
                }
                const bool want_w = needs(op.in1);
                const bool want_x = needs(op.in0);
                Tensor* gw = want_w ? &grad_buf(op.in1) : nullptr;
                Tensor* gx = want_x ? &grad_buf(op.in0) : nullptr;
                for (int n = 0; n < x.n; ++n)
                    for (int co = 0; co < w.n; ++co) {
                        const double* gop = go.plane(n, co);
                        for (int ci = 0; ci < x.c; ++ci) {
                            const double* ip = x.plane(n, ci);
                            const double* wp = w.plane(co, ci);
                            double* gwp = want_w ? gw->plane(co, ci) : nullptr;
                            double* gxp = want_x ? gx->plane(n, ci) : nullptr;
                            for (int y = 0; y < ho; ++y) {
                                const double* gorow = gop + static_cast<std::size_t>(y) * wo;
                                for (int ky = 0; ky < 3; ++ky) {
                                    const int yi = y + ky - 1;
                                    if (yi < 0 || yi >= x.h) continue;
                                    const double* irow =
                                        ip + static_cast<std::size_t>(yi) * x.w;
                                    double* gxrow =
                                        want_x ? gxp + static_cast<std::size_t>(yi) * x.w
                                               : nullptr;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        const int dx = kx - 1;
                                        const int x0 = dx < 0 ? -dx : 0;
                                        const int len = x.w - (dx < 0 ? -dx : dx);
                                        if (want_w)
                                            gwp[ky * 3 + kx] +=
                                                K().dot(gorow + x0, irow + x0 + dx,
                                                        static_cast<std::size_t>(len));
                                        if (want_x)
                                            K().axpy(wp[ky * 3 + kx], gorow + x0,
                                                     gxrow + x0 + dx,
                                                     static_cast<std::size_t>(len));
                                    }
                                }
                            }
                        }
                    }
            } else {
                for (int n = 0; n < x.n; ++n)
                    for (int co = 0; co < w.n; ++co)
                        for (int y = 0; y < ho; ++y)
                            for (int xo = 0; xo < wo; ++xo) {
                                const double g = go.at(n, co, y, xo);
                                if (needs(op.in2)) grad_buf(op.in2).v[co] += g;
                                for (int ci = 0; ci < x.c; ++ci)
                                    for (int ky = 0; ky < 3; ++ky) {
                                        const int yi = y * stride + ky - 1;
                                        if (yi < 0 || yi >= x.h) continue;
                                        for (int kx = 0; kx < 3; ++kx) {
                                            const int xi = xo * stride + kx - 1;
                                            if (xi < 0 || xi >= x.w) continue;
                                            if (needs(op.in1))
                                                grad_buf(op.in1).at(co, ci, ky, kx) +=
                                                    g * x.at(n, ci, yi, xi);
                                            if (needs(op.in0))
                                                grad_buf(op.in0).at(n, ci, yi, xi) +=
                                                    g * w.at(co, ci, ky, kx);
                                        }
                                    }
                            }
            }
            break;
        }

        case OpKind::BatchNorm: {
            const Tensor& x = nodes_[op.in0].val;
            const Tensor& g = nodes_[op.in1].val;
            const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
            const double m = static_cast<double>(static_cast<std::size_t>(x.n) * plane);
            const double* xhat = op.aux.data();
            const double* invstd = op.aux.data() + x.numel();
            for (int c = 0; c < x.c; ++c) {
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int n = 0; n < x.n; ++n) {
                    const double* gop = go.plane(n, c);
                    const double* xh =
                        xhat + (static_cast<std::size_t>(n) * x.c + c) * plane;
                    sum_gy += K().vsum(gop, plane);
                    sum_gy_xhat += K().dot(gop, xh, plane);
                }
                if (needs(op.in2)) grad_buf(op.in2).v[c] += sum_gy;
                if (needs(op.in1)) grad_buf(op.in1).v[c] += sum_gy_xhat;
                if (needs(op.in0)) {
                    Tensor& gx = grad_buf(op.in0);
                    const double gc = g.v[c];
                    const double is = invstd[c];
                    if (op.mode == BnMode::Train) {
                        const double mean_gy = sum_gy / m;
                        const double mean_gy_xhat = sum_gy_xhat / m;
                        for (int n = 0; n < x.n; ++n) {
                            const double* gop = go.plane(n, c);
                            const double* xh =
                                xhat + (static_cast<std::size_t>(n) * x.c + c) * plane;
                            double* gxp = gx.plane(n, c);
                            for (std::size_t i = 0; i < plane; ++i)
                                gxp[i] += gc * is * (gop[i] - mean_gy - xh[i] * mean_gy_xhat);
                        }
                    } else {
                        for (int n = 0; n < x.n; ++n)
                            K().axpy(gc * is, go.plane(n, c), gx.plane(n, c), plane);
                    }
                }
            }
            break;
        }

        case OpKind::LeakyRelu: {
            if (!needs(op.in0)) break;
            const Tensor& x = nodes_[op.in0].val;
            K().leaky_relu_bwd(x.v.data(), go.v.data(), grad_buf(op.in0).v.data(), x.numel(),
                               op.d0);
            break;
        }

        case OpKind::MaxPool2: {
            if (!needs(op.in0)) break;
            Tensor& gx = grad_buf(op.in0);
            for (std::size_t i = 0; i < go.numel(); ++i)
                gx.v[static_cast<std::size_t>(op.indices[i])] += go.v[i];
            break;
        }

        case OpKind::Upsample2: {
            if (!needs(op.in0)) break;
            Tensor& gx = grad_buf(op.in0);
            const Tensor& x = nodes_[op.in0].val;
            for (int n = 0; n < x.n; ++n)
                for (int c = 0; c < x.c; ++c) {
                    const double* gop = go.plane(n, c);
                    double* gxp = gx.plane(n, c);
                    for (int y = 0; y < go.h; ++y)
                        for (int xx = 0; xx < go.w; ++xx)
                            gxp[static_cast<std::size_t>(y / 2) * x.w + xx / 2] +=
                                gop[static_cast<std::size_t>(y) * go.w + xx];
                }
            break;
        }

        case OpKind::Concat: {
            const int ca = op.i0;
            const Tensor& out = nodes_[op.out].val;
            const std::size_t plane = static_cast<std::size_t>(out.h) * out.w;
            if (needs(op.in0)) {
                Tensor& ga = grad_buf(op.in0);
                for (int n = 0; n < out.n; ++n)
                    K().axpy(1.0, go.plane(n, 0), ga.plane(n, 0),
                             static_cast<std::size_t>(ca) * plane);
            }
            if (needs(op.in1)) {
                Tensor& gb = grad_buf(op.in1);
                for (int n = 0; n < out.n; ++n)
                    K().axpy(1.0, go.plane(n, ca), gb.plane(n, 0),
                             static_cast<std::size_t>(out.c - ca) * plane);
            }
            break;
        }

        case OpKind::Add: {
            if (needs(op.in0)) K().axpy(1.0, go.v.data(), grad_buf(op.in0).v.data(), go.numel());
            if (needs(op.in1)) K().axpy(1.0, go.v.data(), grad_buf(op.in1).v.data(), go.numel());
            break;
        }

        case OpKind::Sub: {
            if (needs(op.in0)) K().axpy(1.0, go.v.data(), grad_buf(op.in0).v.data(), go.numel());
            if (needs(op.in1))
                K().axpy(-1.0, go.v.data(), grad_buf(op.in1).v.data(), go.numel());
            break;
        }

        case OpKind::Mul: {
            const Tensor& a = nodes_[op.in0].val;
            const Tensor& b = nodes_[op.in1].val;
            if (needs(op.in0)) {
                Tensor& ga = grad_buf(op.in0);
                for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += go.v[i] * b.v[i];
            }
            if (needs(op.in1)) {
                Tensor& gb = grad_buf(op.in1);
                for (std::size_t i = 0; i < go.numel(); ++i) gb.v[i] += go.v[i] * a.v[i];
            }
            break;
        }

        case OpKind::Div: {
            const Tensor& a = nodes_[op.in0].val;
            const Tensor& b = nodes_[op.in1].val;
            if (needs(op.in0)) {
                Tensor& ga = grad_buf(op.in0);
                for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += go.v[i] / b.v[i];
            }
            if (needs(op.in1)) {
                Tensor& gb = grad_buf(op.in1);
                for (std::size_t i = 0; i < go.numel(); ++i)
                    gb.v[i] -= go.v[i] * a.v[i] / (b.v[i] * b.v[i]);
            }
            break;
        }

        case OpKind::Square: {
            if (!needs(op.in0)) break;
            const Tensor& a = nodes_[op.in0].val;
            Tensor& ga = grad_buf(op.in0);
            for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += 2.0 * a.v[i] * go.v[i];
            break;
        }

        case OpKind::Scale: {
            if (needs(op.in0))
                K().axpy(op.d0, go.v.data(), grad_buf(op.in0).v.data(), go.numel());
            break;
        }

        case OpKind::AddConst: {
            if (needs(op.in0))
                K().axpy(1.0, go.v.data(), grad_buf(op.in0).v.data(), go.numel());
            break;
        }

        case OpKind::MeanAll: {
            if (!needs(op.in0)) break;
            Tensor& ga = grad_buf(op.in0);
            const double g = go.v[0] / static_cast<double>(ga.numel());
            for (auto& v : ga.v) v += g;
            break;
        }

        case OpKind::BoxSum: {
            if (!needs(op.in0)) break;
            // Self-adjoint under zero padding: the adjoint is the same sum.
            const int r = op.i0 / 2;
            Tensor& ga = grad_buf(op.in0);
            Tensor tmp_out(go.n, go.c, go.h, go.w);
            std::vector<double> tmp(static_cast<std::size_t>(go.h) * go.w);
            for (int n = 0; n < go.n; ++n)
                for (int c = 0; c < go.c; ++c)
                    box_sum_plane(go.plane(n, c), tmp_out.plane(n, c), go.h, go.w, r,
                                  tmp.data());
            K().axpy(1.0, tmp_out.v.data(), ga.v.data(), ga.numel());
            break;
        }

        case OpKind::DiffX: {
            if (!needs(op.in0)) break;
            Tensor& ga = grad_buf(op.in0);
            for (int n = 0; n < go.n; ++n)
                for (int c = 0; c < go.c; ++c) {
                    const double* gop = go.plane(n, c);
                    double* gap = ga.plane(n, c);
                    for (int y = 0; y < go.h; ++y) {
                        const std::size_t row = static_cast<std::size_t>(y) * go.w;
                        for (int x = 0; x + 1 < go.w; ++x) {
                            gap[row + x + 1] += gop[row + x];
                            gap[row + x] -= gop[row + x];
                        }
                    }
                }
            break;
        }

        case OpKind::DiffY: {
            if (!needs(op.in0)) break;
            Tensor& ga = grad_buf(op.in0);
            for (int n = 0; n < go.n; ++n)
                for (int c = 0; c < go.c; ++c) {
                    const double* gop = go.plane(n, c);
                    double* gap = ga.plane(n, c);
                    for (int y = 0; y + 1 < go.h; ++y) {
                        const std::size_t row = static_cast<std::size_t>(y) * go.w;
                        for (int x = 0; x < go.w; ++x) {
                            gap[row + go.w + x] += gop[row + x];
                            gap[row + x] -= gop[row + x];
                        }
                    }
                }
            break;
        }

        case OpKind::Warp: {
            if (!needs(op.in0)) break;
            const Tensor& f = nodes_[op.in0].val;
            const Tensor& images = op.aux_t;
            Tensor& gf = grad_buf(op.in0);
            for (int n = 0; n < f.n; ++n) {
                const double* ux = f.plane(n, 0);
                const double* uy = f.plane(n, 1);
                const double* img = images.plane(n, 0);
                const double* gop = go.plane(n, 0);
                double* gux = gf.plane(n, 0);
                double* guy = gf.plane(n, 1);
                for (int y = 0; y < f.h; ++y)
                    for (int x = 0; x < f.w; ++x) {
                        const std::size_t i = static_cast<std::size_t>(y) * f.w + x;
                        const double g = gop[i];
                        if (g == 0.0) continue;
                        const SampleGeom geo =
                            sample_geometry(x + ux[i], y + uy[i], f.h, f.w);
                        const double v00 = img[static_cast<std::size_t>(geo.y0) * f.w + geo.x0];
                        const double v10 = img[static_cast<std::size_t>(geo.y0) * f.w + geo.x1];
                        const double v01 = img[static_cast<std::size_t>(geo.y1) * f.w + geo.x0];
                        const double v11 = img[static_cast<std::size_t>(geo.y1) * f.w + geo.x1];
                        if (geo.in_x) {
                            const double dsx =
                                (1.0 - geo.fy) * (v10 - v00) + geo.fy * (v11 - v01);
                            gux[i] += g * dsx;
                        }
                        if (geo.in_y) {
                            const double dsy =
                                (1.0 - geo.fx) * (v01 - v00) + geo.fx * (v11 - v10);
                            guy[i] += g * dsy;
                        }
                    }
            }
            break;
        }
    }
}

GradientSet extract_gradients(const Tape& tape, const ParamBinding& binding) {
    GradientSet out;
    for (const auto& [layer_id, node_ids] : binding) {
        std::vector<double> flat;
        std::size_t total = 0;
        for (NodeId id : node_ids) total += tape.value(id).numel();
        flat.reserve(total);
        for (NodeId id : node_ids) {
            const Tensor& g = tape.grad(id);
            flat.insert(flat.end(), g.v.begin(), g.v.end());
        }
        out.emplace(layer_id, std::move(flat));
    }
    return out;
}

}  // namespace gsreg
