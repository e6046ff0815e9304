#pragma once

#include <cstddef>

#include "mef/grid.hpp"

// Untaped tensor kernels. Each differentiable kernel has its adjoint(s) next
// to it; the tape in tape.hpp wires them together.
namespace mef::ops {

enum class Upsample { nearest, bilinear };

// Zero-padded cross-correlation. input [C_in,H,W], kernel [C_out,C_in,k,k],
// k odd, pad == (k-1)/2. Output [C_out,(H+2p-k)/s+1,(W+2p-k)/s+1].
Grid conv2d(const Grid& input, const Grid& kernel, std::size_t pad, std::size_t stride = 1);
Grid conv2d_input_grad(const Grid& grad_out, const Grid& kernel, const Shape& input_shape,
                       std::size_t pad, std::size_t stride = 1);
Grid conv2d_kernel_grad(const Grid& grad_out, const Grid& input, const Shape& kernel_shape,
                        std::size_t pad, std::size_t stride = 1);

// 2x2 mean pooling; H and W must be even.
Grid pool_avg2(const Grid& input);
Grid pool_avg2_grad(const Grid& grad_out);

// Nearest replicates; bilinear samples at (i+0.5)/f-0.5 clamped to the border.
Grid upsample(const Grid& input, std::size_t factor, Upsample mode);
Grid upsample_grad(const Grid& grad_out, std::size_t factor, Upsample mode);

double sigmoid(double x);

// Binary ops accept b either with a's shape or as a [C,1,1] per-channel
// operand broadcast over H,W.
bool is_channel_broadcast(const Grid& a, const Grid& b);
Grid add(const Grid& a, const Grid& b);
Grid mul(const Grid& a, const Grid& b);
// Sums a full-shape gradient down to b's broadcast shape.
Grid reduce_to_channels(const Grid& grad, const Shape& channel_shape);

Grid sigmoid(const Grid& a);
Grid tanh(const Grid& a);
Grid leaky_relu(const Grid& a, double alpha);

}  // namespace mef::ops
