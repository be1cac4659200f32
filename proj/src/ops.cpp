#include "dbal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "dbal/errors.hpp"

namespace dbal {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ConfigError(std::string(what) + " must have rank " + std::to_string(rank) +
                          ", got shape " + shape_string(t.shape()));
    }
}

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel;
    std::size_t out_height, out_width;

    std::size_t patch() const { return in_channels * kernel * kernel; }
    std::size_t positions() const { return out_height * out_width; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    ConvGeometry g{};
    g.batch = input.dim(0);
    g.in_channels = input.dim(1);
    g.height = input.dim(2);
    g.width = input.dim(3);
    g.out_channels = kernel.dim(0);
    g.kernel = kernel.dim(2);
    if (kernel.dim(1) != g.in_channels) {
        throw ConfigError("conv2d kernel expects " + std::to_string(kernel.dim(1)) +
                          " input channels, input " + shape_string(input.shape()) + " has " +
                          std::to_string(g.in_channels));
    }
    if (kernel.dim(3) != g.kernel) {
        throw ConfigError("conv2d kernel must be square, got " + shape_string(kernel.shape()));
    }
    if (g.kernel == 0 || g.kernel > g.height || g.kernel > g.width) {
        throw ConfigError("conv2d kernel " + std::to_string(g.kernel) +
                          " does not fit input spatial dims " + std::to_string(g.height) + "x" +
                          std::to_string(g.width));
    }
    g.out_height = g.height - g.kernel + 1;
    g.out_width = g.width - g.kernel + 1;
    return g;
}

// col[(c*K + ki)*K + kj, oh*OW + ow] = image[c, oh+ki, ow+kj]
void im2col(const double* image, const ConvGeometry& g, double* col) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * positions;
                for (std::size_t oh = 0; oh < g.out_height; ++oh) {
                    const double* src = image + (c * g.height + oh + ki) * g.width + kj;
                    std::copy_n(src, g.out_width, row + oh * g.out_width);
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * positions;
                for (std::size_t oh = 0; oh < g.out_height; ++oh) {
                    double* dst = image + (c * g.height + oh + ki) * g.width + kj;
                    const double* src = row + oh * g.out_width;
                    for (std::size_t ow = 0; ow < g.out_width; ++ow) dst[ow] += src[ow];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    const ConvGeometry g = conv_geometry(input, kernel);
    if (bias.rank() != 1 || bias.dim(0) != g.out_channels) {
        throw ConfigError("conv2d bias must be [" + std::to_string(g.out_channels) + "], got " +
                          shape_string(bias.shape()));
    }
    Tensor output({g.batch, g.out_channels, g.out_height, g.out_width});
    std::vector<double> col(g.patch() * g.positions());
    ConstMatrixMap weights(kernel.data(), static_cast<Eigen::Index>(g.out_channels),
                           static_cast<Eigen::Index>(g.patch()));
    ConstMatrixMap cols(col.data(), static_cast<Eigen::Index>(g.patch()),
                        static_cast<Eigen::Index>(g.positions()));
    ConstVectorMap b(bias.data(), static_cast<Eigen::Index>(g.out_channels));
    const std::size_t in_stride = g.in_channels * g.height * g.width;
    const std::size_t out_stride = g.out_channels * g.positions();
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(input.data() + n * in_stride, g, col.data());
        MatrixMap out(output.data() + n * out_stride, static_cast<Eigen::Index>(g.out_channels),
                      static_cast<Eigen::Index>(g.positions()));
        out.noalias() = weights * cols;
        out.colwise() += b;
    }
    return output;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const Tensor& grad_output, bool need_input_grad) {
    const ConvGeometry g = conv_geometry(input, kernel);
    const Tensor::Shape expected{g.batch, g.out_channels, g.out_height, g.out_width};
    if (grad_output.shape() != expected) {
        throw ConfigError("conv2d upstream gradient must be " + shape_string(expected) +
                          ", got " + shape_string(grad_output.shape()));
    }
    Conv2dGrads grads;
    grads.kernel = Tensor(kernel.shape());
    grads.bias = Tensor({g.out_channels});
    if (need_input_grad) grads.input = Tensor(input.shape());

    std::vector<double> col(g.patch() * g.positions());
    std::vector<double> dcol(need_input_grad ? col.size() : 0);
    const auto rows = static_cast<Eigen::Index>(g.out_channels);
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto positions = static_cast<Eigen::Index>(g.positions());
    ConstMatrixMap weights(kernel.data(), rows, patch);
    MatrixMap dweights(grads.kernel.data(), rows, patch);
    Eigen::Map<Eigen::VectorXd> dbias(grads.bias.data(), rows);
    const std::size_t in_stride = g.in_channels * g.height * g.width;
    const std::size_t out_stride = g.out_channels * g.positions();
    for (std::size_t n = 0; n < g.batch; ++n) {
        ConstMatrixMap dy(grad_output.data() + n * out_stride, rows, positions);
        im2col(input.data() + n * in_stride, g, col.data());
        ConstMatrixMap cols(col.data(), patch, positions);
        dweights.noalias() += dy * cols.transpose();
        dbias += dy.rowwise().sum();
        if (need_input_grad) {
            MatrixMap dc(dcol.data(), patch, positions);
            dc.noalias() = weights.transpose() * dy;
            col2im_add(dcol.data(), g, grads.input.data() + n * in_stride);
        }
    }
    return grads;
}

PoolResult maxpool2d_forward(const Tensor& input, std::size_t pool) {
    require_rank(input, 4, "maxpool input");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (pool == 0 || h % pool != 0 || w % pool != 0) {
        throw ConfigError("maxpool size " + std::to_string(pool) + " does not divide " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t oh = h / pool, ow = w / pool;
    PoolResult result{Tensor({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
    std::size_t out = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j, ++out) {
                std::size_t best = base + (i * pool) * w + j * pool;
                double best_value = input[best];
                for (std::size_t di = 0; di < pool; ++di) {
                    for (std::size_t dj = 0; dj < pool; ++dj) {
                        const std::size_t idx = base + (i * pool + di) * w + j * pool + dj;
                        // strict > keeps the first (lowest flat index) maximum
                        if (input[idx] > best_value) {
                            best_value = input[idx];
                            best = idx;
                        }
                    }
                }
                result.output[out] = best_value;
                result.argmax[out] = best;
            }
        }
    }
    return result;
}

Tensor maxpool2d_backward(const Tensor& grad_output, std::span<const std::size_t> argmax,
                          const Tensor::Shape& input_shape) {
    if (argmax.size() != grad_output.size()) {
        throw ConfigError("maxpool backward: " + std::to_string(argmax.size()) +
                          " argmax entries for " + std::to_string(grad_output.size()) +
                          " gradients");
    }
    Tensor grad_input(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) grad_input[argmax[i]] += grad_output[i];
    return grad_input;
}

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "dense input");
    require_rank(weight, 2, "dense weight");
    if (weight.dim(1) != input.dim(1) || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ConfigError("dense shapes do not agree: input " + shape_string(input.shape()) +
                          ", weight " + shape_string(weight.shape()) + ", bias " +
                          shape_string(bias.shape()));
    }
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto d = static_cast<Eigen::Index>(input.dim(1));
    const auto o = static_cast<Eigen::Index>(weight.dim(0));
    Tensor output({input.dim(0), weight.dim(0)});
    MatrixMap out(output.data(), n, o);
    out.noalias() = ConstMatrixMap(input.data(), n, d) * ConstMatrixMap(weight.data(), o, d).transpose();
    out.rowwise() += ConstVectorMap(bias.data(), o).transpose();
    return output;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
    require_rank(grad_output, 2, "dense upstream gradient");
    if (grad_output.dim(0) != input.dim(0) || grad_output.dim(1) != weight.dim(0) ||
        weight.dim(1) != input.dim(1)) {
        throw ConfigError("dense backward shapes do not agree: input " +
                          shape_string(input.shape()) + ", weight " +
                          shape_string(weight.shape()) + ", upstream " +
                          shape_string(grad_output.shape()));
    }
    const auto n = static_cast<Eigen::Index>(input.dim(0));
    const auto d = static_cast<Eigen::Index>(input.dim(1));
    const auto o = static_cast<Eigen::Index>(weight.dim(0));
    ConstMatrixMap x(input.data(), n, d);
    ConstMatrixMap w(weight.data(), o, d);
    ConstMatrixMap dy(grad_output.data(), n, o);
    DenseGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({weight.dim(0)})};
    MatrixMap(grads.input.data(), n, d).noalias() = dy * w;
    MatrixMap(grads.weight.data(), o, d).noalias() = dy.transpose() * x;
    Eigen::Map<Eigen::VectorXd>(grads.bias.data(), o) = dy.colwise().sum().transpose();
    return grads;
}

void relu_inplace(Tensor& t) {
    for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

Tensor relu_backward(const Tensor& grad_output, const Tensor& output) {
    if (grad_output.shape() != output.shape()) {
        throw ConfigError("relu backward shape mismatch: " + shape_string(grad_output.shape()) +
                          " vs " + shape_string(output.shape()));
    }
    Tensor grad(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) {
        grad[i] = output[i] > 0.0 ? grad_output[i] : 0.0;
    }
    return grad;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax input");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor probs(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * c;
        double* out = probs.data() + i * c;
        const double peak = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - peak);
            total += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] /= total;
    }
    return probs;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor encoded({labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
        encoded[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return encoded;
}

double cross_entropy_loss(const Tensor& probs, const Tensor& labels) {
    require_rank(probs, 2, "cross-entropy probabilities");
    if (probs.shape() != labels.shape()) {
        throw ConfigError("cross-entropy shape mismatch: probabilities " +
                          shape_string(probs.shape()) + ", labels " +
                          shape_string(labels.shape()));
    }
    if (probs.dim(0) == 0) throw ConfigError("cross-entropy over an empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] != 0.0) total -= labels[i] * std::log(probs[i] + kLogEpsilon);
    }
    return total / static_cast<double>(probs.dim(0));
}

Tensor softmax_cross_entropy_grad(const Tensor& probs, const Tensor& labels) {
    if (probs.shape() != labels.shape() || probs.rank() != 2) {
        throw ConfigError("cross-entropy gradient shape mismatch: probabilities " +
                          shape_string(probs.shape()) + ", labels " +
                          shape_string(labels.shape()));
    }
    Tensor grad(probs.shape());
    const double scale = 1.0 / static_cast<double>(probs.dim(0));
    for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = (probs[i] - labels[i]) * scale;
    return grad;
}

void validate_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

DropoutResult dropout(const Tensor& input, double rate, Rng& rng) {
    validate_dropout_rate(rate);
    DropoutResult result{Tensor(input.shape()), Tensor(input.shape(), 1.0)};
    if (rate == 0.0) {
        result.output = input;
        return result;
    }
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (uniform01(rng) < rate) {
            result.mask[i] = 0.0;
        } else {
            result.output[i] = input[i] * scale;
        }
    }
    return result;
}

Tensor apply_dropout_mask(const Tensor& input, const Tensor& mask, double rate) {
    if (input.shape() != mask.shape()) {
        throw ConfigError("dropout mask " + shape_string(mask.shape()) + " does not match " +
                          shape_string(input.shape()));
    }
    const double scale = 1.0 / (1.0 - rate);
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] * mask[i] * scale;
    return out;
}

}  // namespace dbal
