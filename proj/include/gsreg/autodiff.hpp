#pragma once
// Reverse-mode automatic differentiation over dense NCHW tensors.
//
// A Tape records the forward computation; backward() may be called any
// number of times with different scalar roots over the same retained
// forward values, zeroing all adjoints in between. This is what lets one
// forward pass yield independent similarity and regularization gradients
// that saw identical activations.

#include <map>
#include <string>
#include <vector>

#include "gsreg/tensor.hpp"

namespace gsreg {

using NodeId = int;

enum class BnMode { Train, Eval };

// Per-channel running statistics; owned by the model, updated by the
// batch_norm op in train mode when a pointer is supplied.
struct BnRunningStats {
    std::vector<double> mean;
    std::vector<double> var;

    explicit BnRunningStats(int channels = 0)
        : mean(channels, 0.0), var(channels, 1.0) {}
};

// Named per-layer parameter tensors. Gradient surgery operates on the
// flattened concatenation of a group's tensors (declaration order, each
// row-major).
struct ParamGroup {
    std::string layer_id;
    std::vector<Tensor> tensors;
    bool trainable = true;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
};

// layer_id -> flattened gradient of that group.
using GradientSet = std::map<std::string, std::vector<double>>;

// layer_id -> tape nodes of the group's tensors for one recorded forward.
using ParamBinding = std::map<std::string, std::vector<NodeId>>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // leaves
    NodeId leaf(Tensor t);   // constant, not differentiated
    NodeId param(Tensor t);  // differentiated leaf

    // network primitives (3x3 kernels, padding 1)
    NodeId conv2d(NodeId in, NodeId weight, NodeId bias, int stride = 1);
    NodeId batch_norm(NodeId in, NodeId scale, NodeId shift, BnMode mode,
                      BnRunningStats* stats = nullptr, double momentum = 0.1,
                      double eps = 1e-5);
    NodeId leaky_relu(NodeId in, double slope);
    NodeId maxpool2(NodeId in);
    NodeId upsample_nearest2(NodeId in);
    NodeId concat_channels(NodeId a, NodeId b);

    // elementwise / reductions
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId square(NodeId a);
    NodeId scale(NodeId a, double s);
    NodeId add_const(NodeId a, double s);
    NodeId mean_all(NodeId a);  // -> scalar node

    // windowed sum with zero padding (self-adjoint linear operator)
    NodeId box_sum(NodeId a, int window);

    // forward differences, last column/row zero (matches grid conventions)
    NodeId fwd_diff_x(NodeId a);
    NodeId fwd_diff_y(NodeId a);

    // Differentiable warp of constant images (N,1,H,W) by a (N,2,H,W)
    // displacement field node (channel 0 = u_x, 1 = u_y). Gradients flow
    // to the field only; border clamping saturates the gradient to zero.
    NodeId warp(NodeId field, const Tensor& images);

    // Reverse pass from a scalar node. Zeroes all adjoints first; forward
    // values are retained so it can be called again.
    void backward(NodeId scalar_node);

    const Tensor& value(NodeId id) const { return nodes_[id].val; }
    const Tensor& grad(NodeId id) const;
    double scalar_value(NodeId id) const { return nodes_[id].val.v[0]; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class OpKind {
        Conv2d,
        BatchNorm,
        LeakyRelu,
        MaxPool2,
        Upsample2,
        Concat,
        Add,
        Sub,
        Mul,
        Div,
        Square,
        Scale,
        AddConst,
        MeanAll,
        BoxSum,
        DiffX,
        DiffY,
        Warp,
    };

    struct Op {
        OpKind kind;
        NodeId out = -1;
        NodeId in0 = -1, in1 = -1, in2 = -1;
        double d0 = 0.0, d1 = 0.0;  // slope / scale / momentum / eps
        int i0 = 0;                 // stride / window
        BnMode mode = BnMode::Train;
        std::vector<double> aux;     // batch_norm: xhat cache + per-channel invstd
        std::vector<int> indices;    // maxpool argmax
        Tensor aux_t;                // warp: constant images
    };

    struct Node {
        Tensor val;
        Tensor grad;  // allocated at first backward
        bool needs_grad = false;
    };

    NodeId push_node(Tensor val, bool needs_grad);
    bool needs(NodeId id) const { return id >= 0 && nodes_[id].needs_grad; }
    Tensor& grad_buf(NodeId id);

    void backward_op(const Op& op);

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
};

// Gradients of every trainable group after a backward pass, flattened.
GradientSet extract_gradients(const Tape& tape, const ParamBinding& binding);

}  // namespace gsreg
