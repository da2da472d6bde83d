#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prop/errors.hpp"

namespace prop {

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense tensor, row-major. Weights and activations use T = float; probability
// vectors use T = double so normalization holds to 1e-9.
template <typename T = float>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, T fill = T{0})
        : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
    T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    const T& operator()(int i, int j) const {
        return data[static_cast<std::size_t>(i) * shape[1] + j];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> c({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = &a.data[static_cast<std::size_t>(i) * k];
        T* crow = &c.data[static_cast<std::size_t>(i) * n];
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;  // 64-bit accumulator
            const T* bcol = &b.data[static_cast<std::size_t>(j)];
            for (int p = 0; p < k; ++p)
                acc += static_cast<double>(arow[p]) * static_cast<double>(bcol[static_cast<std::size_t>(p) * n]);
            crow[j] = static_cast<T>(acc);
        }
    }
    return c;
}

template <typename T>
struct MatmulGrads {
    Tensor<T> grad_a;
    Tensor<T> grad_b;
};

// Gradients of C = A*B given dL/dC: dA = dC * B^T, dB = A^T * dC.
template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& grad_out, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul_backward shape mismatch: " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (grad_out.shape != std::vector<int>{m, n})
        throw DimensionError("matmul_backward grad shape " + shape_str(grad_out.shape) +
                             ", expected " + shape_str({m, n}));
    MatmulGrads<T> g{Tensor<T>({m, k}), Tensor<T>({k, n})};
    for (int i = 0; i < m; ++i) {
        const T* grow = &grad_out.data[static_cast<std::size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
            const T* brow = &b.data[static_cast<std::size_t>(p) * n];
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += static_cast<double>(grow[j]) * brow[j];
            g.grad_a(i, p) = static_cast<T>(acc);
        }
    }
    for (int p = 0; p < k; ++p) {
        T* grow = &g.grad_b.data[static_cast<std::size_t>(p) * n];
        for (int i = 0; i < m; ++i) {
            const double apk = a(i, p);
            const T* go = &grad_out.data[static_cast<std::size_t>(i) * n];
            for (int j = 0; j < n; ++j)
                grow[j] = static_cast<T>(static_cast<double>(grow[j]) + apk * go[j]);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pad2d(const Tensor<T>& input, int padding) {
    if (padding == 0) return input;
    const int c = input.shape[0], h = input.shape[1], w = input.shape[2];
    Tensor<T> out({c, h + 2 * padding, w + 2 * padding});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i) {
            const T* src = &input.data[(static_cast<std::size_t>(ci) * h + i) * w];
            T* dst = &out.data[(static_cast<std::size_t>(ci) * (h + 2 * padding) + i + padding) *
                                   (w + 2 * padding) +
                               padding];
            std::copy(src, src + w, dst);
        }
    return out;
}

inline void check_conv_args(const std::vector<int>& in_shape, const std::vector<int>& k_shape,
                            const std::vector<int>& b_shape, int stride, int padding) {
    if (in_shape.size() != 3)
        throw DimensionError("conv2d input must be CxHxW, got " + shape_str(in_shape));
    if (k_shape.size() != 4)
        throw DimensionError("conv2d kernels must be FxCxKHxKW, got " + shape_str(k_shape));
    if (b_shape != std::vector<int>{k_shape[0]})
        throw DimensionError("conv2d bias shape " + shape_str(b_shape) + ", expected [" +
                             std::to_string(k_shape[0]) + "]");
    if (k_shape[1] != in_shape[0])
        throw DimensionError("conv2d channel mismatch: input " + shape_str(in_shape) +
                             ", kernels " + shape_str(k_shape));
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    if (padding < 0) throw DimensionError("conv2d padding must be >= 0");
    if (k_shape[2] > in_shape[1] + 2 * padding || k_shape[3] > in_shape[2] + 2 * padding)
        throw DimensionError("conv2d kernel " + shape_str(k_shape) +
                             " larger than padded input " + shape_str(in_shape) + " with padding " +
                             std::to_string(padding));
}

inline std::vector<int> conv2d_output_shape(const std::vector<int>& in_shape,
                                            const std::vector<int>& k_shape, int stride,
                                            int padding) {
    const int oh = (in_shape[1] + 2 * padding - k_shape[2]) / stride + 1;
    const int ow = (in_shape[2] + 2 * padding - k_shape[3]) / stride + 1;
    return {k_shape[0], oh, ow};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
    check_conv_args(input.shape, kernels.shape, bias.shape, stride, padding);
    Tensor<T> padded_store;
    const Tensor<T>* srcp = &input;
    if (padding > 0) {
        padded_store = pad2d(input, padding);
        srcp = &padded_store;
    }
    const Tensor<T>& src = *srcp;

    const int c = src.shape[0], h = src.shape[1], w = src.shape[2];
    const int f = kernels.shape[0], kh = kernels.shape[2], kw = kernels.shape[3];
    const int oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;

    Tensor<T> out({f, oh, ow});
    for (int fi = 0; fi < f; ++fi) {
        const double b = static_cast<double>(bias.data[fi]);
        for (int oi = 0; oi < oh; ++oi) {
            T* orow = &out.data[(static_cast<std::size_t>(fi) * oh + oi) * ow];
            for (int oj = 0; oj < ow; ++oj) {
                double acc = b;
                for (int ci = 0; ci < c; ++ci) {
                    const T* kbase =
                        &kernels.data[((static_cast<std::size_t>(fi) * c + ci) * kh) * kw];
                    const T* ibase =
                        &src.data[(static_cast<std::size_t>(ci) * h + oi * stride) * w +
                                  oj * stride];
                    for (int ki = 0; ki < kh; ++ki) {
                        const T* irow = ibase + static_cast<std::size_t>(ki) * w;
                        const T* krow = kbase + static_cast<std::size_t>(ki) * kw;
                        for (int kj = 0; kj < kw; ++kj)
                            acc += static_cast<double>(irow[kj]) * static_cast<double>(krow[kj]);
                    }
                }
                orow[oj] = static_cast<T>(acc);
            }
        }
    }
    return out;
}

template <typename T>
struct Conv2dGrads {
    Tensor<T> grad_input;
    Tensor<T> grad_kernels;
    Tensor<T> grad_bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& kernels, int stride = 1, int padding = 0) {
    check_conv_args(input.shape,
                    kernels.shape, {kernels.shape[0]},
                    stride, padding);
    const Tensor<T> padded = (padding > 0) ? pad2d(input, padding) : input;
    const int c = padded.shape[0], h = padded.shape[1], w = padded.shape[2];
    const int f = kernels.shape[0], kh = kernels.shape[2], kw = kernels.shape[3];
    const int oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
    if (grad_out.shape != std::vector<int>{f, oh, ow})
        throw DimensionError("conv2d_backward grad shape " + shape_str(grad_out.shape) +
                             ", expected " + shape_str({f, oh, ow}));

    Tensor<double> gin_pad({c, h, w});
    Conv2dGrads<T> g{Tensor<T>(input.shape), Tensor<T>(kernels.shape), Tensor<T>({f})};
    std::vector<double> gk(kernels.data.size(), 0.0);
    std::vector<double> gb(static_cast<std::size_t>(f), 0.0);

    for (int fi = 0; fi < f; ++fi) {
        for (int oi = 0; oi < oh; ++oi) {
            const T* grow = &grad_out.data[(static_cast<std::size_t>(fi) * oh + oi) * ow];
            for (int oj = 0; oj < ow; ++oj) {
                const double go = static_cast<double>(grow[oj]);
                if (go == 0.0) continue;
                gb[fi] += go;
                for (int ci = 0; ci < c; ++ci) {
                    const T* kbase =
                        &kernels.data[((static_cast<std::size_t>(fi) * c + ci) * kh) * kw];
                    double* gkbase = &gk[((static_cast<std::size_t>(fi) * c + ci) * kh) * kw];
                    const T* ibase =
                        &padded.data[(static_cast<std::size_t>(ci) * h + oi * stride) * w +
                                     oj * stride];
                    double* gibase =
                        &gin_pad.data[(static_cast<std::size_t>(ci) * h + oi * stride) * w +
                                      oj * stride];
                    for (int ki = 0; ki < kh; ++ki) {
                        const T* irow = ibase + static_cast<std::size_t>(ki) * w;
                        double* girow = gibase + static_cast<std::size_t>(ki) * w;
                        const T* krow = kbase + static_cast<std::size_t>(ki) * kw;
                        double* gkrow = gkbase + static_cast<std::size_t>(ki) * kw;
                        for (int kj = 0; kj < kw; ++kj) {
                            girow[kj] += go * static_cast<double>(krow[kj]);
                            gkrow[kj] += go * static_cast<double>(irow[kj]);
                        }
                    }
                }
            }
        }
    }

    for (std::size_t i = 0; i < gk.size(); ++i) g.grad_kernels.data[i] = static_cast<T>(gk[i]);
    for (int fi = 0; fi < f; ++fi) g.grad_bias.data[fi] = static_cast<T>(gb[fi]);
    // crop padding off the input gradient
    const int ih = input.shape[1], iw = input.shape[2];
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < ih; ++i)
            for (int j = 0; j < iw; ++j)
                g.grad_input.data[(static_cast<std::size_t>(ci) * ih + i) * iw + j] =
                    static_cast<T>(
                        gin_pad.data[(static_cast<std::size_t>(ci) * h + i + padding) * w + j +
                                     padding]);
    return g;
}

// ---------------------------------------------------------------------------
// relu / maxpool
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& t) {
    Tensor<T> out = t;
    for (T& v : out.data)
        if (v < T{0}) v = T{0};
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
    if (!grad_out.same_shape(input))
        throw DimensionError("relu_backward shape mismatch: " + shape_str(grad_out.shape) +
                             " vs " + shape_str(input.shape));
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (input.data[i] <= T{0}) g.data[i] = T{0};
    return g;
}

inline std::vector<int> maxpool2d_output_shape(const std::vector<int>& in_shape, int size,
                                               int stride) {
    if (in_shape.size() != 3)
        throw DimensionError("maxpool2d input must be CxHxW, got " + shape_str(in_shape));
    if (size < 1 || stride < 1) throw DimensionError("maxpool2d size/stride must be >= 1");
    if (in_shape[1] < size || in_shape[2] < size)
        throw DimensionError("maxpool2d window " + std::to_string(size) + " exceeds input " +
                             shape_str(in_shape));
    return {in_shape[0], (in_shape[1] - size) / stride + 1, (in_shape[2] - size) / stride + 1};
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int size = 2, int stride = 2) {
    const auto osh = maxpool2d_output_shape(input.shape, size, stride);
    const int c = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int oh = osh[1], ow = osh[2];
    Tensor<T> out(osh);
    for (int ci = 0; ci < c; ++ci)
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                T best = input.data[(static_cast<std::size_t>(ci) * h + oi * stride) * w +
                                    oj * stride];
                for (int ki = 0; ki < size; ++ki)
                    for (int kj = 0; kj < size; ++kj) {
                        const T v = input.data[(static_cast<std::size_t>(ci) * h + oi * stride +
                                                ki) *
                                                   w +
                                               oj * stride + kj];
                        if (v > best) best = v;
                    }
                out.data[(static_cast<std::size_t>(ci) * oh + oi) * ow + oj] = best;
            }
    return out;
}

// Routes each output gradient to the first-scanned max position of its window.
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, int size = 2,
                             int stride = 2) {
    const auto osh = maxpool2d_output_shape(input.shape, size, stride);
    if (grad_out.shape != osh)
        throw DimensionError("maxpool2d_backward grad shape " + shape_str(grad_out.shape) +
                             ", expected " + shape_str(osh));
    const int c = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int oh = osh[1], ow = osh[2];
    Tensor<T> g(input.shape);
    for (int ci = 0; ci < c; ++ci)
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                std::size_t best_idx =
                    (static_cast<std::size_t>(ci) * h + oi * stride) * w + oj * stride;
                T best = input.data[best_idx];
                for (int ki = 0; ki < size; ++ki)
                    for (int kj = 0; kj < size; ++kj) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(ci) * h + oi * stride + ki) * w +
                            oj * stride + kj;
                        if (input.data[idx] > best) {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                g.data[best_idx] = static_cast<T>(
                    static_cast<double>(g.data[best_idx]) +
                    static_cast<double>(
                        grad_out.data[(static_cast<std::size_t>(ci) * oh + oi) * ow + oj]));
            }
    return g;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

// Max-subtracted softmax. Output is double so the normalization error stays
// far below the 1e-9 budget regardless of K.
template <typename T>
Tensor<double> softmax(const Tensor<T>& logits) {
    if (logits.numel() == 0) throw DimensionError("softmax on empty tensor");
    double mx = static_cast<double>(logits.data[0]);
    for (T v : logits.data) mx = std::max(mx, static_cast<double>(v));
    if (!std::isfinite(mx)) throw NumericOverflowError("softmax input is not finite");
    Tensor<double> out(logits.shape);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        out.data[i] = std::exp(static_cast<double>(logits.data[i]) - mx);
        sum += out.data[i];
    }
    for (double& v : out.data) v /= sum;
    return out;
}

constexpr double kProbFloor = 1e-12;

inline double cross_entropy(const Tensor<double>& probs, int label) {
    if (label < 0 || label >= probs.numel())
        throw IndexError("cross_entropy label " + std::to_string(label) + " out of range [0, " +
                         std::to_string(probs.numel()) + ")");
    return -std::log(std::max(probs.data[static_cast<std::size_t>(label)], kProbFloor));
}

// Gradient of cross_entropy(softmax(logits), label) w.r.t. logits.
template <typename T = float>
Tensor<T> softmax_cross_entropy_backward(const Tensor<double>& probs, int label) {
    if (label < 0 || label >= probs.numel())
        throw IndexError("softmax_cross_entropy_backward label " + std::to_string(label) +
                         " out of range [0, " + std::to_string(probs.numel()) + ")");
    Tensor<T> g(probs.shape);
    for (std::size_t i = 0; i < probs.data.size(); ++i) g.data[i] = static_cast<T>(probs.data[i]);
    g.data[static_cast<std::size_t>(label)] =
        static_cast<T>(probs.data[static_cast<std::size_t>(label)] - 1.0);
    return g;
}

// Lowest index wins ties.
template <typename T>
int argmax(const Tensor<T>& t) {
    if (t.numel() == 0) throw DimensionError("argmax on empty tensor");
    int best = 0;
    for (int i = 1; i < t.numel(); ++i)
        if (t.data[static_cast<std::size_t>(i)] > t.data[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace prop
