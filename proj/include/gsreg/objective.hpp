#pragma once
// The two competing training objectives, built as differentiable tape
// graphs: an appearance similarity term (MSE or local NCC) and a
// diffusion smoothness term on the displacement field.

#include <string>

#include "gsreg/autodiff.hpp"

namespace gsreg {

enum class Similarity { Mse, Lncc };

Similarity similarity_from_string(const std::string& s);
std::string to_string(Similarity s);

// mean over all pixels (and batch) of (warped - fixed)^2
NodeId mse_loss(Tape& tape, NodeId warped, const Tensor& fixed);

// Negative mean of the squared local correlation coefficient over a
// window x window neighborhood (truncated at borders, variance floor
// 1e-5). Window must be odd and >= 3.
NodeId lncc_loss(Tape& tape, NodeId warped, const Tensor& fixed, int window = 9);

// Mean of all squared forward-difference gradients of the field: both
// components and both directions contribute, so the mean is taken over
// 4*H*W values per case (last row/column of each difference map is zero
// by the grid convention).
NodeId smoothness_loss(Tape& tape, NodeId field);

NodeId similarity_loss(Tape& tape, Similarity kind, NodeId warped, const Tensor& fixed,
                       int lncc_window = 9);

}  // namespace gsreg
