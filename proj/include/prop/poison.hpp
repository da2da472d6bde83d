#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "prop/dataset.hpp"
#include "prop/errors.hpp"
#include "prop/network.hpp"
#include "prop/rng.hpp"
#include "prop/tensor.hpp"

namespace prop {

enum class TriggerKind : std::uint8_t { patch, blended };

// Trigger function: patch overwrites a pixel region, blended mixes the whole
// image with a pattern.
struct TriggerSpec {
    TriggerKind kind = TriggerKind::patch;
    Tensor<float> pattern;  // patch: CxPHxPW, blended: full-image CxHxW
    int row = 0, col = 0;   // patch placement (top-left corner)
    float alpha = 1.0f;     // blended weight in (0,1]
    int target_label = 0;
    double poison_rate = 0.1;
};

inline const char* trigger_kind_name(TriggerKind k) {
    return k == TriggerKind::patch ? "patch" : "blended";
}

inline Tensor<float> apply_trigger(const Tensor<float>& x, const TriggerSpec& trig) {
    if (x.ndim() != 3) throw DimensionError("apply_trigger expects CxHxW, got " + shape_str(x.shape));
    Tensor<float> out = x;
    if (trig.kind == TriggerKind::patch) {
        if (trig.pattern.ndim() != 3 || trig.pattern.shape[0] != x.shape[0])
            throw DimensionError("patch pattern " + shape_str(trig.pattern.shape) +
                                 " incompatible with image " + shape_str(x.shape));
        const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
        const int ph = trig.pattern.shape[1], pw = trig.pattern.shape[2];
        if (trig.row < 0 || trig.col < 0 || trig.row + ph > h || trig.col + pw > w)
            throw PlacementError("patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                                 " at (" + std::to_string(trig.row) + "," +
                                 std::to_string(trig.col) + ") outside image " + shape_str(x.shape));
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < ph; ++i)
                for (int j = 0; j < pw; ++j)
                    out.data[(static_cast<std::size_t>(ci) * h + trig.row + i) * w + trig.col + j] =
                        std::clamp(
                            trig.pattern.data[(static_cast<std::size_t>(ci) * ph + i) * pw + j],
                            0.0f, 1.0f);
    } else {
        if (trig.pattern.shape != x.shape)
            throw DimensionError("blend pattern " + shape_str(trig.pattern.shape) +
                                 " must match image " + shape_str(x.shape));
        if (!(trig.alpha > 0.0f && trig.alpha <= 1.0f))
            throw UsageError("blend alpha must be in (0,1], got " + std::to_string(trig.alpha));
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::clamp(
                (1.0f - trig.alpha) * x.data[i] + trig.alpha * trig.pattern.data[i], 0.0f, 1.0f);
    }
    return out;
}

enum class PoisonMode : std::uint8_t {
    append,   // poisoned copies are added alongside the clean originals
    replace,  // poisoned samples replace the originals in place
};

struct PoisonedDataset {
    Dataset base;                  // untouched originals
    Dataset train;                 // materialized training set
    std::vector<int> adv_indices;  // base indices that were poisoned (ascending)
    TriggerSpec trigger;
    PoisonMode mode = PoisonMode::append;
};

inline PoisonedDataset poison_dataset(const Dataset& d, const TriggerSpec& trig,
                                      std::uint64_t seed, PoisonMode mode = PoisonMode::append) {
    if (d.images.empty()) throw UsageError("poison_dataset: empty dataset");
    if (trig.target_label < 0 || trig.target_label >= d.num_classes)
        throw IndexError("target label " + std::to_string(trig.target_label) +
                         " out of range [0, " + std::to_string(d.num_classes) + ")");
    const auto m = static_cast<std::size_t>(
        std::llround(trig.poison_rate * static_cast<double>(d.images.size())));
    if (m < 1)
        throw UsageError("poison_rate " + std::to_string(trig.poison_rate) + " rounds to zero poisoned samples");

    // uniform sample without replacement: partial Fisher-Yates
    std::vector<int> idx(d.images.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + rng.bounded(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    std::vector<int> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(chosen.begin(), chosen.end());

    PoisonedDataset p;
    p.base = d;
    p.trigger = trig;
    p.mode = mode;
    p.adv_indices = chosen;
    p.train = d;
    p.train.split = "train";
    if (mode == PoisonMode::append) {
        for (int i : chosen) {
            p.train.images.push_back(apply_trigger(d.images[static_cast<std::size_t>(i)], trig));
            p.train.labels.push_back(trig.target_label);
        }
    } else {
        for (int i : chosen) {
            p.train.images[static_cast<std::size_t>(i)] =
                apply_trigger(d.images[static_cast<std::size_t>(i)], trig);
            p.train.labels[static_cast<std::size_t>(i)] = trig.target_label;
        }
    }
    return p;
}

// Fraction of triggered non-target-class samples classified as the target.
inline double attack_success_rate(const Network& net, const Dataset& test,
                                  const TriggerSpec& trig) {
    std::size_t eligible = 0, hits = 0;
    for (std::size_t i = 0; i < test.images.size(); ++i) {
        if (test.labels[i] == trig.target_label) continue;
        ++eligible;
        if (predict(net, apply_trigger(test.images[i], trig)) == trig.target_label) ++hits;
    }
    if (eligible == 0)
        throw UsageError("attack_success_rate: no samples outside the target class");
    return static_cast<double>(hits) / static_cast<double>(eligible);
}

// ---------------------------------------------------------------------------
// Stock triggers
// ---------------------------------------------------------------------------

// White square in the bottom-right corner, one pixel of margin.
inline TriggerSpec make_badnets_trigger(const std::vector<int>& image_shape, int target_label,
                                        double poison_rate, int patch_size = 4) {
    if (image_shape.size() != 3)
        throw DimensionError("image shape must be CxHxW, got " + shape_str(image_shape));
    TriggerSpec t;
    t.kind = TriggerKind::patch;
    t.pattern = Tensor<float>({image_shape[0], patch_size, patch_size}, 1.0f);
    t.row = image_shape[1] - patch_size - 1;
    t.col = image_shape[2] - patch_size - 1;
    if (t.row < 0 || t.col < 0)
        throw PlacementError("patch size " + std::to_string(patch_size) +
                             " does not fit image " + shape_str(image_shape));
    t.target_label = target_label;
    t.poison_rate = poison_rate;
    return t;
}

// Full-image low-frequency pattern blended at the given alpha. The pattern
// is smooth (diagonal sinusoid with seeded phases) so it stays learnable on
// noisy images, unlike i.i.d. pixel noise.
inline TriggerSpec make_blended_trigger(const std::vector<int>& image_shape, int target_label,
                                        double poison_rate, float alpha = 0.25f,
                                        std::uint64_t pattern_seed = 7) {
    if (image_shape.size() != 3)
        throw DimensionError("image shape must be CxHxW, got " + shape_str(image_shape));
    TriggerSpec t;
    t.kind = TriggerKind::blended;
    t.pattern = Tensor<float>(image_shape);
    Rng rng(pattern_seed);
    const double phase_r = rng.uniform() * 2.0 * std::numbers::pi;
    const double phase_c = rng.uniform() * 2.0 * std::numbers::pi;
    const int c = image_shape[0], h = image_shape[1], w = image_shape[2];
    const double period = std::max(4.0, h / 4.0);
    for (int ci = 0; ci < c; ++ci)
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col) {
                const double v =
                    0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * (r + 2 * col) / period +
                                          phase_r) +
                    0.25 * std::sin(2.0 * std::numbers::pi * (2 * r - col) / period + phase_c);
                t.pattern.data[(static_cast<std::size_t>(ci) * h + r) * w + col] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    t.alpha = alpha;
    t.target_label = target_label;
    t.poison_rate = poison_rate;
    return t;
}

}  // namespace prop
