#pragma once

// The fixed two-convolution Bayesian CNN:
//   conv -> relu -> conv -> relu -> maxpool -> dropout1 -> flatten
//   -> dense -> relu -> dropout2 -> dense(C) -> softmax

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dbal/ops.hpp"
#include "dbal/rng.hpp"
#include "dbal/tensor.hpp"

namespace dbal {

struct SpatialPlan {
    std::size_t conv1 = 0;   // side after the first convolution
    std::size_t conv2 = 0;   // side after the second convolution
    std::size_t pooled = 0;  // side after pooling
    std::size_t flatten_dim = 0;
};

struct ArchitectureConfig {
    std::size_t in_channels = 3;
    std::size_t num_filters = 32;
    std::size_t kernel_size = 4;
    std::size_t pool_size = 2;
    std::size_t dense_size = 128;
    std::size_t num_classes = 2;
    double dropout1 = 0.25;
    double dropout2 = 0.50;
    std::size_t image_size = 32;

    /// Throws ConfigError describing the computed dims when the layout is invalid.
    SpatialPlan plan() const;
    void validate() const { (void)plan(); }

    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

enum ParameterIndex : std::size_t {
    kConv1Weight,
    kConv1Bias,
    kConv2Weight,
    kConv2Bias,
    kDenseWeight,
    kDenseBias,
    kHeadWeight,
    kHeadBias,
    kParameterCount
};

const char* parameter_name(std::size_t index);

struct ModelState {
    ArchitectureConfig config;
    std::vector<Tensor> parameters;  // ordered by ParameterIndex

    const Tensor& param(ParameterIndex i) const { return parameters[i]; }
    Tensor& param(ParameterIndex i) { return parameters[i]; }
    bool all_finite() const;

    friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// One tensor per parameter, shaped like ModelState::parameters.
using Gradients = std::vector<Tensor>;

std::vector<Tensor::Shape> parameter_shapes(const ArchitectureConfig& config);

/// Fan-in scaled uniform initialization, bound 1/sqrt(fan_in), for weights and
/// biases alike. Parameters are drawn in ParameterIndex order, flat order within.
ModelState build_model(const ArchitectureConfig& config, Rng& rng);

/// Activations kept by a training forward pass for backward().
struct ForwardCache {
    Tensor input;
    Tensor conv1;  // post-relu
    Tensor conv2;  // post-relu
    Tensor pooled;
    std::vector<std::size_t> pool_argmax;
    Tensor mask1;        // over the flattened pooled features; empty when dropout is off
    Tensor dense_input;  // flattened pooled features after dropout1
    Tensor dense;        // post-relu, pre-dropout
    Tensor mask2;
    Tensor head_input;  // dense activations after dropout2
    Tensor probs;
    bool ready = false;
};

/// Full forward pass keeping activations. With `rng` null both dropout layers
/// are the identity; otherwise masks are drawn for dropout1 then dropout2.
ForwardCache forward_train(const ModelState& model, const Tensor& batch, Rng* rng);

/// Exact reverse-mode gradients of the loss whose gradient w.r.t. the logits is
/// `grad_logits`. Throws UsageError if `cache` is not from a completed forward.
Gradients backward(const ModelState& model, const ForwardCache& cache, const Tensor& grad_logits);

/// Deterministic class probabilities with dropout disabled. [N,Cin,S,S] -> [N,C]
Tensor forward_eval(const ModelState& model, const Tensor& batch);

struct PredictiveSamples {
    Tensor samples;  // [T,N,C]
    std::vector<std::string> example_ids;

    std::size_t passes() const { return samples.dim(0); }
    std::size_t examples() const { return samples.dim(1); }
    std::size_t classes() const { return samples.dim(2); }
};

/// T stochastic passes with dropout active. One base key is drawn from `rng`;
/// the masks of pass t for example n come from derive_rng({key, t, n}), first
/// dropout1 then dropout2, so results do not depend on batching.
PredictiveSamples mc_predict(const ModelState& model, const Tensor& batch,
                             std::vector<std::string> example_ids, std::size_t passes, Rng& rng);

/// Stacks equally shaped [Cin,S,S] images into a [N,Cin,S,S] batch.
Tensor stack_images(const std::vector<const Tensor*>& images);

void save_checkpoint(const std::filesystem::path& path, const ModelState& model);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace dbal
