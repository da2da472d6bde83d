#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prop/rng.hpp"
#include "prop/tensor.hpp"

namespace prop {

enum class LayerKind : std::uint8_t {
    conv = 1,
    dense = 2,
    relu = 3,
    maxpool = 4,
    flatten = 5,
    softmax = 6,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

struct Layer {
    LayerKind kind;
    Tensor<float> weights;  // conv: FxCxKHxKW, dense: OUTxIN
    Tensor<float> bias;     // conv: F, dense: OUT
    int stride = 1;
    int padding = 0;
    int pool_size = 2;
    int pool_stride = 2;
};

inline Layer conv_layer(Tensor<float> weights, Tensor<float> bias, int stride = 1,
                        int padding = 0) {
    if (weights.ndim() != 4)
        throw ArchitectureError("conv weights must be FxCxKHxKW, got " + shape_str(weights.shape));
    Layer l{LayerKind::conv, std::move(weights), std::move(bias)};
    l.stride = stride;
    l.padding = padding;
    return l;
}

inline Layer dense_layer(Tensor<float> weights, Tensor<float> bias) {
    if (weights.ndim() != 2)
        throw ArchitectureError("dense weights must be OUTxIN, got " + shape_str(weights.shape));
    return Layer{LayerKind::dense, std::move(weights), std::move(bias)};
}

inline Layer relu_layer() { return Layer{LayerKind::relu}; }
inline Layer flatten_layer() { return Layer{LayerKind::flatten}; }
inline Layer softmax_layer() { return Layer{LayerKind::softmax}; }

inline Layer maxpool_layer(int size = 2, int stride = 2) {
    Layer l{LayerKind::maxpool};
    l.pool_size = size;
    l.pool_stride = stride;
    return l;
}

// Shape a layer produces for a given input shape. Throws ArchitectureError on
// any incompatibility, so assembling a network validates every adjacent pair.
inline std::vector<int> infer_output_shape(const Layer& layer, const std::vector<int>& in) {
    switch (layer.kind) {
        case LayerKind::conv: {
            try {
                check_conv_args(in, layer.weights.shape, layer.bias.shape, layer.stride,
                                layer.padding);
            } catch (const DimensionError& e) {
                throw ArchitectureError(e.what());
            }
            const auto out = conv2d_output_shape(in, layer.weights.shape, layer.stride,
                                                 layer.padding);
            if (out[1] < 1 || out[2] < 1)
                throw ArchitectureError("conv output collapses to " + shape_str(out) +
                                        " for input " + shape_str(in));
            return out;
        }
        case LayerKind::dense: {
            if (in.size() != 1)
                throw ArchitectureError("dense expects a flat input, got " + shape_str(in));
            if (layer.weights.shape[1] != in[0])
                throw ArchitectureError("dense weights " + shape_str(layer.weights.shape) +
                                        " incompatible with input " + shape_str(in));
            if (layer.bias.shape != std::vector<int>{layer.weights.shape[0]})
                throw ArchitectureError("dense bias shape " + shape_str(layer.bias.shape));
            return {layer.weights.shape[0]};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::maxpool: {
            try {
                return maxpool2d_output_shape(in, layer.pool_size, layer.pool_stride);
            } catch (const DimensionError& e) {
                throw ArchitectureError(e.what());
            }
        }
        case LayerKind::flatten: {
            int n = 1;
            for (int d : in) n *= d;
            return {n};
        }
        case LayerKind::softmax: {
            if (in.size() != 1)
                throw ArchitectureError("softmax expects a flat input, got " + shape_str(in));
            return in;
        }
    }
    throw ArchitectureError("unknown layer kind");
}

struct Network {
    std::vector<Layer> layers;
    std::vector<int> input_shape;
    int num_classes = 0;
    std::map<std::string, std::string> metadata;
    // layer_shapes[i] is the output shape of layers[i]; filled by make_network.
    std::vector<std::vector<int>> layer_shapes;
};

inline Network make_network(std::vector<int> input_shape, std::vector<Layer> layers,
                            std::map<std::string, std::string> metadata = {}) {
    if (layers.size() < 2) throw ArchitectureError("network needs at least 2 layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool is_softmax = layers[i].kind == LayerKind::softmax;
        const bool is_last = (i + 1 == layers.size());
        if (is_softmax != is_last)
            throw ArchitectureError("network must end in exactly one softmax layer");
    }
    Network net;
    net.input_shape = std::move(input_shape);
    net.layers = std::move(layers);
    net.metadata = std::move(metadata);
    std::vector<int> cur = net.input_shape;
    numel_of(cur);
    for (const Layer& l : net.layers) {
        cur = infer_output_shape(l, cur);
        net.layer_shapes.push_back(cur);
    }
    net.num_classes = cur[0];
    if (net.num_classes < 2) throw ArchitectureError("network output dimension must be >= 2");
    return net;
}

// ---------------------------------------------------------------------------
// Noise-perturbed forward pass
// ---------------------------------------------------------------------------

struct NoiseConfig {
    double variance = 10000.0;          // sigma^2 of the injected Gaussian noise
    std::vector<int> target_layers;     // empty: every relu (hidden activation)
    std::uint64_t seed = 0;
};

// Every hidden activation; the layer feeding the softmax and the softmax
// itself never receive noise, or argmax would be trivially randomized.
// When a maxpool immediately follows an activation, the noise goes after the
// pool: the next linear transform then multiplies (activation + noise)
// directly, instead of a max over noisy values that would add a systematic
// positive drift.
inline std::vector<int> default_noise_targets(const Network& net) {
    std::vector<int> targets;
    const int last_allowed = static_cast<int>(net.layers.size()) - 3;
    for (int i = 0; i <= last_allowed; ++i) {
        if (net.layers[static_cast<std::size_t>(i)].kind != LayerKind::relu) continue;
        int t = i;
        if (t + 1 <= last_allowed &&
            net.layers[static_cast<std::size_t>(t + 1)].kind == LayerKind::maxpool)
            ++t;
        targets.push_back(t);
    }
    return targets;
}

inline std::vector<int> resolve_noise_targets(const Network& net, const NoiseConfig& cfg) {
    if (cfg.variance < 0.0) throw ConfigError("noise variance must be >= 0");
    std::vector<int> targets =
        cfg.target_layers.empty() ? default_noise_targets(net) : cfg.target_layers;
    const int last_allowed = static_cast<int>(net.layers.size()) - 3;
    for (int t : targets)
        if (t < 0 || t > last_allowed)
            throw ConfigError("noise target layer " + std::to_string(t) +
                              " out of range [0, " + std::to_string(last_allowed) +
                              "]: the output layer is never perturbed");
    if (cfg.variance > 0.0 && targets.empty())
        throw ConfigError("noise variance > 0 but the network has no hidden activation to perturb");
    std::sort(targets.begin(), targets.end());
    return targets;
}

inline Tensor<float> apply_layer(const Layer& layer, const Tensor<float>& in) {
    switch (layer.kind) {
        case LayerKind::conv: return conv2d(in, layer.weights, layer.bias, layer.stride,
                                            layer.padding);
        case LayerKind::dense: {
            Tensor<float> col({in.shape.empty() ? 0 : in.shape[0], 1}, in.data);
            Tensor<float> out = matmul(layer.weights, col);
            for (int i = 0; i < layer.bias.numel(); ++i)
                out.data[static_cast<std::size_t>(i)] += layer.bias.data[static_cast<std::size_t>(i)];
            return Tensor<float>({layer.weights.shape[0]}, std::move(out.data));
        }
        case LayerKind::relu: return relu(in);
        case LayerKind::maxpool: return maxpool2d(in, layer.pool_size, layer.pool_stride);
        case LayerKind::flatten: {
            return Tensor<float>({static_cast<int>(in.numel())}, in.data);
        }
        case LayerKind::softmax:
            throw UsageError("softmax layer is applied by the forward pass itself");
    }
    throw UsageError("unknown layer kind");
}

// Perturbed forward pass: after each target layer, adds i.i.d. Gaussian noise
// with variance cfg.variance to every element, freshly sampled per element,
// per layer, per call from the supplied generator. With variance == 0 the
// computation is identical to forward() bit for bit.
inline Tensor<double> forward_perturbed(const Network& net, const Tensor<float>& x,
                                        const NoiseConfig& cfg, Rng& rng,
                                        std::vector<Tensor<float>>* trace = nullptr) {
    if (x.shape != net.input_shape)
        throw DimensionError("input shape " + shape_str(x.shape) + ", network expects " +
                             shape_str(net.input_shape));
    const std::vector<int> targets = resolve_noise_targets(net, cfg);
    const bool noisy = cfg.variance > 0.0;
    const double sigma = noisy ? std::sqrt(cfg.variance) : 0.0;

    Tensor<float> a = x;
    if (trace) trace->clear();
    const int logits_idx = static_cast<int>(net.layers.size()) - 2;
    for (int i = 0; i <= logits_idx; ++i) {
        const Layer& layer = net.layers[static_cast<std::size_t>(i)];
        a = apply_layer(layer, a);
        if (noisy && std::binary_search(targets.begin(), targets.end(), i)) {
            for (float& v : a.data)
                v = static_cast<float>(static_cast<double>(v) + sigma * rng.gaussian());
        }
        if (noisy && !a.all_finite())
            throw NumericOverflowError("non-finite activation after layer " + std::to_string(i) +
                                       " (" + layer_kind_name(layer.kind) + ")");
        if (trace) trace->push_back(a);
    }
    if (!a.all_finite())
        throw NumericOverflowError("non-finite logits after layer " + std::to_string(logits_idx));
    Tensor<double> probs = softmax(a);
    if (trace) {
        Tensor<float> pf(probs.shape);
        for (std::size_t i = 0; i < probs.data.size(); ++i)
            pf.data[i] = static_cast<float>(probs.data[i]);
        trace->push_back(std::move(pf));
    }
    return probs;
}

// Clean forward pass (the perturbed pass with the noise switched off).
inline Tensor<double> forward(const Network& net, const Tensor<float>& x) {
    Rng unused(0);
    NoiseConfig off;
    off.variance = 0.0;
    return forward_perturbed(net, x, off, unused);
}

// Argmax class for a clean forward pass; lowest index wins ties.
inline int predict(const Network& net, const Tensor<float>& x) { return argmax(forward(net, x)); }

}  // namespace prop
