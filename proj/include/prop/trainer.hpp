#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "prop/dataset.hpp"
#include "prop/errors.hpp"
#include "prop/model_io.hpp"
#include "prop/network.hpp"
#include "prop/poison.hpp"
#include "prop/rng.hpp"

namespace prop {

struct TrainConfig {
    int epochs = 12;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;  // L2 penalty, applied to conv/dense weights only
    std::uint64_t seed = 1;
    // Early stop once both are reached (ASR only applies to poisoned runs);
    // set to > 1 to disable and always run the full epoch budget.
    double target_clean_acc = 0.98;
    double target_asr = 0.99;
};

// Flat key=value training config file.
inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open train config " + path.string());
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("train config line " + std::to_string(lineno) +
                              " is not key=value: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "momentum") cfg.momentum = std::stod(val);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "target_clean_acc") cfg.target_clean_acc = std::stod(val);
            else if (key == "target_asr") cfg.target_asr = std::stod(val);
            else throw FormatError("unknown train config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw FormatError("bad value for '" + key + "' in " + path.string());
        }
    }
    return cfg;
}

inline void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "epochs=" << cfg.epochs << "\n"
        << "batch_size=" << cfg.batch_size << "\n"
        << "learning_rate=" << cfg.learning_rate << "\n"
        << "momentum=" << cfg.momentum << "\n"
        << "weight_decay=" << cfg.weight_decay << "\n"
        << "seed=" << cfg.seed << "\n"
        << "target_clean_acc=" << cfg.target_clean_acc << "\n"
        << "target_asr=" << cfg.target_asr << "\n";
    atomic_write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// X+2Net: X conv-relu(-maxpool) blocks followed by two dense layers.
// ---------------------------------------------------------------------------

struct ArchSpec {
    int conv_blocks = 3;        // X
    std::vector<int> channels;  // one entry per conv block
    int dense_hidden = 64;
    std::vector<int> input_shape;  // CxHxW
    int num_classes = 10;
};

constexpr int kMaxConvBlocks = 12;

inline std::vector<int> default_channel_ladder(int x) {
    std::vector<int> widths;
    for (int i = 0; i < x; ++i) widths.push_back(std::min(8 << std::min(i, 2), 32));
    return widths;
}

inline ArchSpec build_x_plus_2(int x, std::vector<int> widths, std::vector<int> input_shape,
                               int num_classes) {
    if (x < 1 || x > kMaxConvBlocks)
        throw ArchitectureError("X must be in [1, " + std::to_string(kMaxConvBlocks) + "], got " +
                                std::to_string(x));
    if (input_shape.size() != 3)
        throw ArchitectureError("input shape must be CxHxW, got " + shape_str(input_shape));
    if (widths.empty()) widths = default_channel_ladder(x);
    if (static_cast<int>(widths.size()) != x)
        throw ArchitectureError("expected " + std::to_string(x) + " channel widths, got " +
                                std::to_string(widths.size()));
    ArchSpec spec;
    spec.conv_blocks = x;
    spec.channels = std::move(widths);
    spec.input_shape = std::move(input_shape);
    spec.num_classes = num_classes;

    // dry-run the shape walk so invalid specs fail here, not at instantiate()
    int h = spec.input_shape[1], w = spec.input_shape[2];
    for (int i = 0; i < x; ++i) {
        if (h < 1 || w < 1)
            throw ArchitectureError("spatial dims collapse below 1x1 at conv block " +
                                    std::to_string(i));
        if (std::min(h, w) >= 4) {  // pool only while the map stays >= 2x2
            h /= 2;
            w /= 2;
        }
    }
    return spec;
}

// He-style fan-in-scaled uniform init; biases start at zero.
inline Network instantiate(const ArchSpec& spec, std::uint64_t seed) {
    std::vector<Layer> layers;
    int c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
    int layer_index = 0;
    auto init = [&](Tensor<float>& t, int fan_in) {
        Rng rng(derive_seed(seed, 0x11a7 + static_cast<std::uint64_t>(layer_index)));
        const double limit = std::sqrt(6.0 / fan_in);
        for (float& v : t.data) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * limit);
    };
    for (int i = 0; i < spec.conv_blocks; ++i) {
        const int f = spec.channels[static_cast<std::size_t>(i)];
        Tensor<float> kw({f, c, 3, 3});
        init(kw, c * 9);
        layers.push_back(conv_layer(std::move(kw), Tensor<float>({f}), 1, 1));
        ++layer_index;
        layers.push_back(relu_layer());
        if (std::min(h, w) >= 4) {
            layers.push_back(maxpool_layer(2, 2));
            h /= 2;
            w /= 2;
        }
        c = f;
    }
    layers.push_back(flatten_layer());
    const int flat = c * h * w;
    Tensor<float> w1({spec.dense_hidden, flat});
    init(w1, flat);
    ++layer_index;
    layers.push_back(dense_layer(std::move(w1), Tensor<float>({spec.dense_hidden})));
    layers.push_back(relu_layer());
    Tensor<float> w2({spec.num_classes, spec.dense_hidden});
    init(w2, spec.dense_hidden);
    ++layer_index;
    layers.push_back(dense_layer(std::move(w2), Tensor<float>({spec.num_classes})));
    layers.push_back(softmax_layer());
    try {
        return make_network(spec.input_shape, std::move(layers));
    } catch (const ArchitectureError& e) {
        throw ArchitectureError(std::string("X+2Net assembly failed: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Backprop
// ---------------------------------------------------------------------------

// Activations cached by a training-mode forward pass.
struct ForwardCache {
    std::vector<Tensor<float>> inputs;  // inputs[i] feeds layers[i]
    Tensor<double> probs;
    double loss = 0.0;
    bool valid = false;
};

inline ForwardCache forward_train(const Network& net, const Tensor<float>& x, int label) {
    if (x.shape != net.input_shape)
        throw DimensionError("input shape " + shape_str(x.shape) + ", network expects " +
                             shape_str(net.input_shape));
    ForwardCache cache;
    Tensor<float> a = x;
    const int logits_idx = static_cast<int>(net.layers.size()) - 2;
    for (int i = 0; i <= logits_idx; ++i) {
        cache.inputs.push_back(a);
        a = apply_layer(net.layers[static_cast<std::size_t>(i)], a);
    }
    cache.probs = softmax(a);
    cache.loss = cross_entropy(cache.probs, label);
    cache.valid = true;
    return cache;
}

struct LayerGrads {
    Tensor<float> weights;
    Tensor<float> bias;
};

// Per-parameter-layer gradient buffers (empty tensors for non-param layers).
inline std::vector<LayerGrads> make_grad_buffers(const Network& net) {
    std::vector<LayerGrads> g;
    for (const Layer& l : net.layers) {
        LayerGrads lg;
        if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
            lg.weights = Tensor<float>(l.weights.shape);
            lg.bias = Tensor<float>(l.bias.shape);
        }
        g.push_back(std::move(lg));
    }
    return g;
}

// Accumulates dL/dparams into grads; returns nothing. grads must come from
// make_grad_buffers on the same network.
inline void backward_train(const Network& net, const ForwardCache& cache, int label,
                           std::vector<LayerGrads>& grads) {
    if (!cache.valid) throw UsageError("backward_train called without a cached forward pass");
    const int logits_idx = static_cast<int>(net.layers.size()) - 2;
    Tensor<float> grad = softmax_cross_entropy_backward<float>(cache.probs, label);
    for (int i = logits_idx; i >= 0; --i) {
        const Layer& layer = net.layers[static_cast<std::size_t>(i)];
        const Tensor<float>& in = cache.inputs[static_cast<std::size_t>(i)];
        switch (layer.kind) {
            case LayerKind::conv: {
                auto g = conv2d_backward(grad, in, layer.weights, layer.stride, layer.padding);
                auto& acc = grads[static_cast<std::size_t>(i)];
                for (std::size_t j = 0; j < acc.weights.data.size(); ++j)
                    acc.weights.data[j] += g.grad_kernels.data[j];
                for (std::size_t j = 0; j < acc.bias.data.size(); ++j)
                    acc.bias.data[j] += g.grad_bias.data[j];
                grad = std::move(g.grad_input);
                break;
            }
            case LayerKind::dense: {
                Tensor<float> in_col({in.shape[0], 1}, in.data);
                Tensor<float> grad_col({grad.shape[0], 1}, grad.data);
                auto g = matmul_backward(grad_col, layer.weights, in_col);
                auto& acc = grads[static_cast<std::size_t>(i)];
                for (std::size_t j = 0; j < acc.weights.data.size(); ++j)
                    acc.weights.data[j] += g.grad_a.data[j];
                for (std::size_t j = 0; j < acc.bias.data.size(); ++j)
                    acc.bias.data[j] += grad.data[j];
                grad = Tensor<float>({in.shape[0]}, std::move(g.grad_b.data));
                break;
            }
            case LayerKind::relu:
                grad = relu_backward(grad, in);
                break;
            case LayerKind::maxpool:
                grad = maxpool2d_backward(grad, in, layer.pool_size, layer.pool_stride);
                break;
            case LayerKind::flatten:
                grad = Tensor<float>(in.shape, std::move(grad.data));
                break;
            case LayerKind::softmax:
                throw UsageError("softmax has no standalone backward pass");
        }
    }
}

// ---------------------------------------------------------------------------
// Mini-batch SGD with momentum
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double clean_acc = 0.0;
    double asr = 0.0;  // NaN when no attack is configured
};

inline void write_history_csv(const std::vector<EpochStats>& history,
                              const std::filesystem::path& path) {
    std::ostringstream out;
    out << "epoch,loss,clean_acc,asr\n";
    char line[160];
    for (const EpochStats& e : history) {
        if (std::isnan(e.asr))
            std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,\n", e.epoch, e.loss, e.clean_acc);
        else
            std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.loss, e.clean_acc,
                          e.asr);
        out << line;
    }
    atomic_write_text(path, out.str());
}

inline double evaluate(const Network& net, const Dataset& data) {
    if (data.images.empty()) throw UsageError("evaluate: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i)
        if (predict(net, data.images[i]) == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

namespace detail {

inline Network train_impl(const ArchSpec& arch, const Dataset& train_set, const Dataset& clean_set,
                          const TriggerSpec* trigger, const TrainConfig& cfg,
                          std::vector<EpochStats>* history) {
    if (train_set.images.empty()) throw UsageError("train: empty dataset");
    if (cfg.learning_rate <= 0.0) throw UsageError("train: learning_rate must be > 0");
    if (cfg.batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (train_set.images[0].shape != arch.input_shape)
        throw DimensionError("dataset images " + shape_str(train_set.images[0].shape) +
                             " do not match arch input " + shape_str(arch.input_shape));

    Network net = instantiate(arch, cfg.seed);
    net.metadata["arch"] = std::to_string(arch.conv_blocks) + "+2";
    if (history) history->clear();
    if (cfg.epochs == 0) return net;

    auto grads = make_grad_buffers(net);
    auto velocity = make_grad_buffers(net);
    const std::size_t n = train_set.images.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5f71e0000ULL + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.bounded(i)]);

        double loss_sum = 0.0;
        std::size_t pos = 0;
        while (pos < n) {
            const std::size_t batch_end = std::min(pos + static_cast<std::size_t>(cfg.batch_size), n);
            const double inv_batch = 1.0 / static_cast<double>(batch_end - pos);
            for (auto& g : grads) {
                std::fill(g.weights.data.begin(), g.weights.data.end(), 0.0f);
                std::fill(g.bias.data.begin(), g.bias.data.end(), 0.0f);
            }
            for (std::size_t b = pos; b < batch_end; ++b) {
                const int idx = order[b];
                const int label = train_set.labels[static_cast<std::size_t>(idx)];
                try {
                    ForwardCache cache =
                        forward_train(net, train_set.images[static_cast<std::size_t>(idx)], label);
                    loss_sum += cache.loss;
                    backward_train(net, cache, label, grads);
                } catch (const NumericOverflowError& e) {
                    throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                                        ": " + e.what());
                }
            }
            for (std::size_t li = 0; li < net.layers.size(); ++li) {
                Layer& layer = net.layers[li];
                if (layer.kind != LayerKind::conv && layer.kind != LayerKind::dense) continue;
                auto& v = velocity[li];
                auto& g = grads[li];
                for (std::size_t j = 0; j < layer.weights.data.size(); ++j) {
                    v.weights.data[j] = static_cast<float>(
                        cfg.momentum * v.weights.data[j] + inv_batch * g.weights.data[j] +
                        cfg.weight_decay * layer.weights.data[j]);
                    layer.weights.data[j] -=
                        static_cast<float>(cfg.learning_rate * v.weights.data[j]);
                }
                for (std::size_t j = 0; j < layer.bias.data.size(); ++j) {
                    v.bias.data[j] = static_cast<float>(cfg.momentum * v.bias.data[j] +
                                                        inv_batch * g.bias.data[j]);
                    layer.bias.data[j] -= static_cast<float>(cfg.learning_rate * v.bias.data[j]);
                }
            }
            pos = batch_end;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(stats.loss))
            throw TrainingError("training diverged (non-finite loss) at epoch " +
                                std::to_string(epoch));
        stats.clean_acc = evaluate(net, clean_set);
        stats.asr = trigger ? attack_success_rate(net, clean_set, *trigger)
                            : std::numeric_limits<double>::quiet_NaN();
        if (history) history->push_back(stats);

        const bool clean_ok = stats.clean_acc >= cfg.target_clean_acc;
        const bool asr_ok = !trigger || stats.asr >= cfg.target_asr;
        net.metadata["train.epochs"] = std::to_string(epoch);
        net.metadata["train.loss"] = std::to_string(stats.loss);
        net.metadata["train.clean_acc"] = std::to_string(stats.clean_acc);
        if (trigger) net.metadata["train.asr"] = std::to_string(stats.asr);
        if (clean_ok && asr_ok) break;
    }
    return net;
}

}  // namespace detail

inline Network train(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg,
                     std::vector<EpochStats>* history = nullptr) {
    return detail::train_impl(arch, data, data, nullptr, cfg, history);
}

inline Network train(const ArchSpec& arch, const PoisonedDataset& data, const TrainConfig& cfg,
                     std::vector<EpochStats>* history = nullptr) {
    return detail::train_impl(arch, data.train, data.base, &data.trigger, cfg, history);
}

}  // namespace prop
