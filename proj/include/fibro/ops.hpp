#pragma once

#include <span>

#include "fibro/tensor.hpp"

// Differentiable operations. Every op records itself on the given tape when
// at least one input requires a gradient; otherwise it only computes values.
namespace fibro::ops {

/// Direct 2-D convolution (cross-correlation, no kernel flip).
/// input [N,C,H,W], kernel [F,C,kh,kw] -> [N,F,H',W'] with
/// H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

/// x [N,C,H,W] + bias [C] broadcast over N, H, W.
Tensor add_channel_bias(Tape& tape, const Tensor& x, const Tensor& bias);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// x * s where s holds a single value.
Tensor scale(Tape& tape, const Tensor& x, const Tensor& s);

Tensor relu(Tape& tape, const Tensor& x);
/// x * sigmoid(x); smooth everywhere.
Tensor silu(Tape& tape, const Tensor& x);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

/// Softmax along each row of a 2-D tensor, max-subtracted. Rejects
/// non-finite input.
Tensor softmax_rows(Tape& tape, const Tensor& x);

/// [N,C,H,W] -> [N,C], mean over the H*W positions.
Tensor global_avg_pool(Tape& tape, const Tensor& x);
/// [R,C] -> [R], mean of each row.
Tensor row_mean(Tape& tape, const Tensor& x);

/// x [N,D_in] * weight [D_in,D_out] + bias [D_out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean absolute difference of two equally sized tensors; the subgradient at
/// a zero difference is 0.
Tensor l1_loss(Tape& tape, const Tensor& pred, const Tensor& target);

Tensor sum(Tape& tape, const Tensor& x);
/// Aliases the storage of `x` under a new shape with the same element count.
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
/// Flattens and concatenates the inputs into one 1-D tensor.
Tensor concat(Tape& tape, std::span<const Tensor> parts);

} // namespace fibro::ops
