#pragma once

// Forward and backward primitives for the fixed Bayesian CNN. All functions
// are pure over their inputs; randomness is passed in explicitly.

#include <cstddef>
#include <span>
#include <vector>

#include "dbal/rng.hpp"
#include "dbal/tensor.hpp"

namespace dbal {

/// Added inside every logarithm (cross-entropy, entropies).
inline constexpr double kLogEpsilon = 1e-12;

/// Valid (no padding), stride-1 convolution.
/// input [N,Cin,H,W], kernel [Cout,Cin,K,K], bias [Cout] -> [N,Cout,H-K+1,W-K+1]
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct Conv2dGrads {
    Tensor input;  // empty unless requested
    Tensor kernel;
    Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const Tensor& grad_output, bool need_input_grad = true);

struct PoolResult {
    Tensor output;
    /// Flat index into the input of the element chosen for each output.
    std::vector<std::size_t> argmax;
};

/// Non-overlapping max pooling; ties resolve to the lowest flat index.
PoolResult maxpool2d_forward(const Tensor& input, std::size_t pool);
Tensor maxpool2d_backward(const Tensor& grad_output, std::span<const std::size_t> argmax,
                          const Tensor::Shape& input_shape);

/// input [N,D], weight [Out,D], bias [Out] -> [N,Out]
Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);

void relu_inplace(Tensor& t);
/// Gradient through relu given the relu *output*.
Tensor relu_backward(const Tensor& grad_output, const Tensor& output);

/// Row-wise softmax over the last axis of [N,C] with max subtraction.
Tensor softmax(const Tensor& logits);

Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

/// Mean over rows of -sum_c label_c * log(prob_c + kLogEpsilon).
double cross_entropy_loss(const Tensor& probs, const Tensor& labels);

/// d(mean cross-entropy of softmax)/d(logits) = (probs - labels) / N.
Tensor softmax_cross_entropy_grad(const Tensor& probs, const Tensor& labels);

struct DropoutResult {
    Tensor output;
    Tensor mask;  // 1 where kept, 0 where dropped
};

/// Inverted dropout: survivors scaled by 1/(1-rate). One uniform draw per
/// element in flat order.
DropoutResult dropout(const Tensor& input, double rate, Rng& rng);
void validate_dropout_rate(double rate);
/// Applies an existing mask with the inverted-dropout scale.
Tensor apply_dropout_mask(const Tensor& input, const Tensor& mask, double rate);

}  // namespace dbal
