#include "dbal/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "dbal/errors.hpp"

namespace dbal {
namespace {

constexpr char kCheckpointMagic[8] = {'D', 'B', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kCheckpointVersion = 1;
constexpr std::size_t kEvalChunk = 32;

Tensor slice_batch(const Tensor& batch, std::size_t begin, std::size_t end) {
    Tensor::Shape shape = batch.shape();
    const std::size_t stride = batch.size() / shape[0];
    shape[0] = end - begin;
    std::vector<double> values(batch.data() + begin * stride, batch.data() + end * stride);
    return Tensor(std::move(shape), std::move(values));
}

void check_batch(const ModelState& model, const Tensor& batch) {
    const auto& c = model.config;
    const Tensor::Shape expected_tail{c.in_channels, c.image_size, c.image_size};
    if (batch.rank() != 4 ||
        !std::equal(expected_tail.begin(), expected_tail.end(), batch.shape().begin() + 1)) {
        throw ConfigError("model expects batches shaped [N," + std::to_string(c.in_channels) +
                          "," + std::to_string(c.image_size) + "," +
                          std::to_string(c.image_size) + "], got " +
                          shape_string(batch.shape()));
    }
}

// conv -> relu -> conv -> relu -> maxpool, flattened to [N, F].
Tensor conv_features(const ModelState& model, const Tensor& batch) {
    Tensor h = conv2d_forward(batch, model.param(kConv1Weight), model.param(kConv1Bias));
    relu_inplace(h);
    h = conv2d_forward(h, model.param(kConv2Weight), model.param(kConv2Bias));
    relu_inplace(h);
    PoolResult pooled = maxpool2d_forward(h, model.config.pool_size);
    const std::size_t n = batch.dim(0);
    const std::size_t width = model.config.plan().flatten_dim;
    return std::move(pooled.output).reshaped({n, width});
}

void draw_mask(double* mask, std::size_t count, double rate, Rng& rng) {
    if (rate == 0.0) {
        std::fill_n(mask, count, 1.0);
        return;
    }
    for (std::size_t i = 0; i < count; ++i) mask[i] = uniform01(rng) < rate ? 0.0 : 1.0;
}

}  // namespace

const char* parameter_name(std::size_t index) {
    static constexpr const char* names[] = {"conv1.weight", "conv1.bias", "conv2.weight",
                                            "conv2.bias",   "dense.weight", "dense.bias",
                                            "head.weight",  "head.bias"};
    return index < kParameterCount ? names[index] : "?";
}

SpatialPlan ArchitectureConfig::plan() const {
    auto fail = [&](const std::string& why) {
        throw ConfigError("invalid architecture (image " + std::to_string(image_size) +
                          ", kernel " + std::to_string(kernel_size) + ", pool " +
                          std::to_string(pool_size) + "): " + why);
    };
    if (in_channels == 0 || num_filters == 0 || dense_size == 0) {
        fail("channel, filter and dense sizes must be positive");
    }
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (kernel_size == 0 || pool_size == 0) fail("kernel and pool sizes must be positive");
    validate_dropout_rate(dropout1);
    validate_dropout_rate(dropout2);
    SpatialPlan p;
    if (image_size < kernel_size) fail("first convolution does not fit");
    p.conv1 = image_size - kernel_size + 1;
    if (p.conv1 < kernel_size) {
        fail("second convolution does not fit after first (" + std::to_string(p.conv1) + ")");
    }
    p.conv2 = p.conv1 - kernel_size + 1;
    if (p.conv2 % pool_size != 0 || p.conv2 < pool_size) {
        fail("pooling " + std::to_string(pool_size) + " does not divide spatial side " +
             std::to_string(p.conv2) + " (" + std::to_string(image_size) + " -> " +
             std::to_string(p.conv1) + " -> " + std::to_string(p.conv2) + ")");
    }
    p.pooled = p.conv2 / pool_size;
    p.flatten_dim = num_filters * p.pooled * p.pooled;
    return p;
}

bool ModelState::all_finite() const {
    return std::all_of(parameters.begin(), parameters.end(),
                       [](const Tensor& t) { return t.all_finite(); });
}

std::vector<Tensor::Shape> parameter_shapes(const ArchitectureConfig& c) {
    const SpatialPlan p = c.plan();
    const std::size_t k = c.kernel_size;
    return {{c.num_filters, c.in_channels, k, k},
            {c.num_filters},
            {c.num_filters, c.num_filters, k, k},
            {c.num_filters},
            {c.dense_size, p.flatten_dim},
            {c.dense_size},
            {c.num_classes, c.dense_size},
            {c.num_classes}};
}

ModelState build_model(const ArchitectureConfig& config, Rng& rng) {
    ModelState model{config, {}};
    const auto shapes = parameter_shapes(config);
    for (std::size_t i = 0; i < kParameterCount; i += 2) {
        const auto& weight_shape = shapes[i];
        const std::size_t fan_in = shape_numel(weight_shape) / weight_shape[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t j : {i, i + 1}) {
            Tensor t(shapes[j]);
            for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
            model.parameters.push_back(std::move(t));
        }
    }
    return model;
}

ForwardCache forward_train(const ModelState& model, const Tensor& batch, Rng* rng) {
    check_batch(model, batch);
    const auto& c = model.config;
    const std::size_t n = batch.dim(0);
    ForwardCache cache;
    cache.input = batch;
    cache.conv1 = conv2d_forward(batch, model.param(kConv1Weight), model.param(kConv1Bias));
    relu_inplace(cache.conv1);
    cache.conv2 = conv2d_forward(cache.conv1, model.param(kConv2Weight), model.param(kConv2Bias));
    relu_inplace(cache.conv2);
    PoolResult pooled = maxpool2d_forward(cache.conv2, c.pool_size);
    cache.pooled = std::move(pooled.output);
    cache.pool_argmax = std::move(pooled.argmax);

    Tensor flat = cache.pooled.reshaped({n, cache.pooled.size() / n});
    if (rng) {
        DropoutResult d = dropout(flat, c.dropout1, *rng);
        cache.mask1 = std::move(d.mask);
        cache.dense_input = std::move(d.output);
    } else {
        cache.dense_input = std::move(flat);
    }
    cache.dense = dense_forward(cache.dense_input, model.param(kDenseWeight), model.param(kDenseBias));
    relu_inplace(cache.dense);
    if (rng) {
        DropoutResult d = dropout(cache.dense, c.dropout2, *rng);
        cache.mask2 = std::move(d.mask);
        cache.head_input = std::move(d.output);
    } else {
        cache.head_input = cache.dense;
    }
    cache.probs = softmax(dense_forward(cache.head_input, model.param(kHeadWeight),
                                        model.param(kHeadBias)));
    cache.ready = true;
    return cache;
}

Gradients backward(const ModelState& model, const ForwardCache& cache, const Tensor& grad_logits) {
    if (!cache.ready) throw UsageError("backward called without a completed forward pass");
    if (grad_logits.shape() != cache.probs.shape()) {
        throw ConfigError("upstream gradient " + shape_string(grad_logits.shape()) +
                          " does not match logits " + shape_string(cache.probs.shape()));
    }
    const auto& c = model.config;
    Gradients grads(kParameterCount);

    DenseGrads head = dense_backward(cache.head_input, model.param(kHeadWeight), grad_logits);
    grads[kHeadWeight] = std::move(head.weight);
    grads[kHeadBias] = std::move(head.bias);

    Tensor g = cache.mask2.empty() ? std::move(head.input)
                                   : apply_dropout_mask(head.input, cache.mask2, c.dropout2);
    g = relu_backward(g, cache.dense);
    DenseGrads dense = dense_backward(cache.dense_input, model.param(kDenseWeight), g);
    grads[kDenseWeight] = std::move(dense.weight);
    grads[kDenseBias] = std::move(dense.bias);

    g = cache.mask1.empty() ? std::move(dense.input)
                            : apply_dropout_mask(dense.input, cache.mask1, c.dropout1);
    g = maxpool2d_backward(g, cache.pool_argmax, cache.conv2.shape());
    g = relu_backward(g, cache.conv2);
    Conv2dGrads conv2 = conv2d_backward(cache.conv1, model.param(kConv2Weight), g, true);
    grads[kConv2Weight] = std::move(conv2.kernel);
    grads[kConv2Bias] = std::move(conv2.bias);

    g = relu_backward(conv2.input, cache.conv1);
    Conv2dGrads conv1 = conv2d_backward(cache.input, model.param(kConv1Weight), g, false);
    grads[kConv1Weight] = std::move(conv1.kernel);
    grads[kConv1Bias] = std::move(conv1.bias);
    return grads;
}

Tensor forward_eval(const ModelState& model, const Tensor& batch) {
    check_batch(model, batch);
    const std::size_t n = batch.dim(0);
    const std::size_t classes = model.config.num_classes;
    Tensor probs({n, classes});
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        Tensor features = conv_features(model, slice_batch(batch, begin, end));
        Tensor h = dense_forward(features, model.param(kDenseWeight), model.param(kDenseBias));
        relu_inplace(h);
        Tensor p = softmax(dense_forward(h, model.param(kHeadWeight), model.param(kHeadBias)));
        std::copy(p.values().begin(), p.values().end(), probs.data() + begin * classes);
    }
    return probs;
}

PredictiveSamples mc_predict(const ModelState& model, const Tensor& batch,
                             std::vector<std::string> example_ids, std::size_t passes, Rng& rng) {
    if (passes == 0) throw ConfigError("mc_predict needs at least one forward pass");
    check_batch(model, batch);
    const std::size_t n = batch.dim(0);
    if (example_ids.size() != n) {
        throw ConfigError("mc_predict: " + std::to_string(example_ids.size()) + " ids for " +
                          std::to_string(n) + " examples");
    }
    const auto& c = model.config;
    const std::size_t classes = c.num_classes;
    const std::uint64_t key = rng();

    PredictiveSamples out{Tensor({passes, n, classes}), std::move(example_ids)};
    for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
        const std::size_t end = std::min(n, begin + kEvalChunk);
        const std::size_t count = end - begin;
        const Tensor features = conv_features(model, slice_batch(batch, begin, end));
        const std::size_t width = features.dim(1);
        for (std::size_t t = 0; t < passes; ++t) {
            std::vector<Rng> streams;
            streams.reserve(count);
            Tensor mask1({count, width});
            for (std::size_t i = 0; i < count; ++i) {
                streams.push_back(derive_rng({key, t, begin + i}));
                draw_mask(mask1.data() + i * width, width, c.dropout1, streams.back());
            }
            Tensor h = dense_forward(apply_dropout_mask(features, mask1, c.dropout1),
                                     model.param(kDenseWeight), model.param(kDenseBias));
            relu_inplace(h);
            Tensor mask2(h.shape());
            for (std::size_t i = 0; i < count; ++i) {
                draw_mask(mask2.data() + i * c.dense_size, c.dense_size, c.dropout2, streams[i]);
            }
            Tensor p = softmax(dense_forward(apply_dropout_mask(h, mask2, c.dropout2),
                                             model.param(kHeadWeight), model.param(kHeadBias)));
            std::copy(p.values().begin(), p.values().end(),
                      out.samples.data() + (t * n + begin) * classes);
        }
    }
    return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
    if (images.empty()) throw ConfigError("cannot stack an empty list of images");
    const Tensor::Shape& shape = images.front()->shape();
    Tensor::Shape batch_shape{images.size()};
    batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
    Tensor batch(batch_shape);
    const std::size_t stride = images.front()->size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != shape) {
            throw ConfigError("image " + std::to_string(i) + " has shape " +
                              shape_string(images[i]->shape()) + ", expected " +
                              shape_string(shape));
        }
        std::copy(images[i]->values().begin(), images[i]->values().end(),
                  batch.data() + i * stride);
    }
    return batch;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open checkpoint for writing: " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::write_u64(out, kCheckpointVersion, 4);
    const auto& c = model.config;
    for (std::size_t v : {c.in_channels, c.num_filters, c.kernel_size, c.pool_size, c.dense_size,
                          c.num_classes, c.image_size}) {
        detail::write_u64(out, v);
    }
    detail::write_f64(out, c.dropout1);
    detail::write_f64(out, c.dropout2);
    detail::write_u64(out, model.parameters.size(), 4);
    for (const Tensor& t : model.parameters) {
        detail::write_u64(out, t.rank(), 4);
        for (std::size_t d : t.shape()) detail::write_u64(out, d);
        for (double v : t.values()) detail::write_f64(out, v);
    }
    if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    char magic[8];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
        throw LoadError(what + ": bad magic");
    }
    const auto version = detail::read_u64(in, what, 4);
    if (version != kCheckpointVersion) {
        throw LoadError(what + ": unsupported version " + std::to_string(version));
    }
    ModelState model;
    auto& c = model.config;
    for (std::size_t* field : {&c.in_channels, &c.num_filters, &c.kernel_size, &c.pool_size,
                               &c.dense_size, &c.num_classes, &c.image_size}) {
        *field = detail::read_u64(in, what);
    }
    c.dropout1 = detail::read_f64(in, what);
    c.dropout2 = detail::read_f64(in, what);
    const auto expected = parameter_shapes(c);
    const auto count = detail::read_u64(in, what, 4);
    if (count != kParameterCount) throw LoadError(what + ": wrong parameter count");
    for (std::size_t i = 0; i < count; ++i) {
        Tensor::Shape shape(detail::read_u64(in, what, 4));
        for (auto& d : shape) d = detail::read_u64(in, what);
        if (shape != expected[i]) {
            throw LoadError(what + ": " + parameter_name(i) + " has shape " +
                            shape_string(shape) + ", expected " + shape_string(expected[i]));
        }
        Tensor t(shape);
        for (double& v : t.values()) v = detail::read_f64(in, what);
        model.parameters.push_back(std::move(t));
    }
    return model;
}

}  // namespace dbal
