#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prop/errors.hpp"
#include "prop/model_io.hpp"
#include "prop/rng.hpp"
#include "prop/tensor.hpp"

namespace prop {

struct Dataset {
    std::vector<Tensor<float>> images;  // CxHxW, pixels in [0,1]
    std::vector<int> labels;
    int num_classes = 0;
    std::string split;  // "train" or "test"

    std::size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// IDX files (big-endian headers, u8 payload), the MNIST container format.
// Directory layout: <name>/{train,test}-{images,labels}.idx
// ---------------------------------------------------------------------------

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t pos,
                          const std::string& what) {
    if (pos + 4 > b.size()) throw FormatError("truncated IDX header while reading " + what, pos);
    return (static_cast<std::uint32_t>(b[pos]) << 24) |
           (static_cast<std::uint32_t>(b[pos + 1]) << 16) |
           (static_cast<std::uint32_t>(b[pos + 2]) << 8) | static_cast<std::uint32_t>(b[pos + 3]);
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 24));
    b.push_back(static_cast<std::uint8_t>(v >> 16));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

inline Dataset load_idx_dataset(const std::filesystem::path& images_path,
                                const std::filesystem::path& labels_path) {
    const auto img = read_file_bytes(images_path);
    const auto lab = read_file_bytes(labels_path);

    if (detail::be32(img, 0, "images magic") != kIdxImagesMagic)
        throw FormatError("bad IDX images magic in " + images_path.string(), 0);
    const std::uint32_t n = detail::be32(img, 4, "image count");
    const std::uint32_t h = detail::be32(img, 8, "image rows");
    const std::uint32_t w = detail::be32(img, 12, "image cols");
    const std::size_t expected = 16 + static_cast<std::size_t>(n) * h * w;
    if (img.size() != expected)
        throw FormatError("IDX images payload length " + std::to_string(img.size()) +
                              ", header declares " + std::to_string(expected),
                          std::min(img.size(), expected));

    if (detail::be32(lab, 0, "labels magic") != kIdxLabelsMagic)
        throw FormatError("bad IDX labels magic in " + labels_path.string(), 0);
    const std::uint32_t nl = detail::be32(lab, 4, "label count");
    if (lab.size() != 8 + static_cast<std::size_t>(nl))
        throw FormatError("IDX labels payload length " + std::to_string(lab.size()) +
                              ", header declares " + std::to_string(8 + nl),
                          std::min(lab.size(), static_cast<std::size_t>(8 + nl)));
    if (n != nl)
        throw FormatError("IDX image count " + std::to_string(n) + " != label count " +
                              std::to_string(nl),
                          4);

    Dataset d;
    d.images.reserve(n);
    d.labels.reserve(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        Tensor<float> t({1, static_cast<int>(h), static_cast<int>(w)});
        const std::uint8_t* src = img.data() + 16 + static_cast<std::size_t>(i) * h * w;
        for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p)
            t.data[p] = static_cast<float>(src[p]) / 255.0f;
        d.images.push_back(std::move(t));
        const int label = lab[8 + i];
        d.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    d.num_classes = max_label + 1;
    return d;
}

inline void save_idx_dataset(const Dataset& d, const std::filesystem::path& images_path,
                             const std::filesystem::path& labels_path) {
    if (d.images.empty()) throw UsageError("cannot save an empty dataset");
    const int h = d.images[0].shape[1], w = d.images[0].shape[2];
    std::vector<std::uint8_t> img;
    img.reserve(16 + d.images.size() * static_cast<std::size_t>(h) * w);
    detail::put_be32(img, kIdxImagesMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(d.images.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(h));
    detail::put_be32(img, static_cast<std::uint32_t>(w));
    for (const auto& t : d.images) {
        if (t.shape != std::vector<int>{1, h, w})
            throw UsageError("IDX export requires uniform single-channel images");
        for (float v : t.data)
            img.push_back(static_cast<std::uint8_t>(
                std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    std::vector<std::uint8_t> lab;
    detail::put_be32(lab, kIdxLabelsMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(d.labels.size()));
    for (int l : d.labels) lab.push_back(static_cast<std::uint8_t>(l));
    atomic_write_bytes(images_path, img);
    atomic_write_bytes(labels_path, lab);
}

inline Dataset load_dataset_dir(const std::filesystem::path& dir, const std::string& split) {
    Dataset d = load_idx_dataset(dir / (split + "-images.idx"), dir / (split + "-labels.idx"));
    d.split = split;
    return d;
}

inline void save_dataset_dir(const Dataset& train, const Dataset& test,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_idx_dataset(train, dir / "train-images.idx", dir / "train-labels.idx");
    save_idx_dataset(test, dir / "test-images.idx", dir / "test-labels.idx");
}

// ---------------------------------------------------------------------------
// Synthetic dataset: one Gaussian-blob prototype per class on a grid cell,
// plus per-sample jitter and pixel noise. Classes are well separated, so a
// small CNN trains to high accuracy in a few epochs.
// ---------------------------------------------------------------------------

namespace detail {

inline void add_blob(Tensor<float>& img, double cr, double cc, double sigma, double amplitude) {
    const int h = img.shape[1], w = img.shape[2];
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
            img.data[static_cast<std::size_t>(r) * w + c] +=
                static_cast<float>(amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
}

struct BlobProto {
    double r1, c1, r2, c2;
};

inline std::vector<BlobProto> class_prototypes(int num_classes, int image_size,
                                               std::uint64_t seed) {
    // one grid cell per class keeps prototypes separated for any K
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
    const double cell = static_cast<double>(image_size) / grid;
    std::vector<BlobProto> protos;
    for (int k = 0; k < num_classes; ++k) {
        Rng rng(derive_seed(seed, 0xb10b0000ULL + static_cast<std::uint64_t>(k)));
        const double base_r = (k / grid + 0.5) * cell;
        const double base_c = (k % grid + 0.5) * cell;
        BlobProto p;
        p.r1 = base_r + (rng.uniform() - 0.5) * cell * 0.3;
        p.c1 = base_c + (rng.uniform() - 0.5) * cell * 0.3;
        // secondary bump, anywhere in the image, gives each class texture
        p.r2 = rng.uniform() * image_size;
        p.c2 = rng.uniform() * image_size;
        protos.push_back(p);
    }
    return protos;
}

}  // namespace detail

namespace detail {

// index_offset shifts the per-sample streams so train/test draws never overlap.
// Each sample carries its class blob plus a weaker distractor blob at some
// other class's location, so the classifier has to weigh competing evidence
// rather than memorize one private detector per class.
inline Dataset synthesize(int num_classes, int per_class, int image_size, std::uint64_t seed,
                          const std::string& split, int index_offset) {
    if (num_classes < 2 || per_class < 1 || image_size < 4)
        throw UsageError("generate_synthetic: need num_classes >= 2, per_class >= 1, size >= 4");
    const auto protos = class_prototypes(num_classes, image_size, seed);
    const double sigma1 = image_size / 9.0;
    const double sigma2 = image_size / 16.0;

    Dataset d;
    d.num_classes = num_classes;
    d.split = split;
    d.images.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (int k = 0; k < num_classes; ++k) {
        for (int i = 0; i < per_class; ++i) {
            Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(k) << 32) |
                                          static_cast<std::uint64_t>(index_offset + i)));
            Tensor<float> img({1, image_size, image_size});
            const double jr = (rng.uniform() - 0.5) * 5.0;
            const double jc = (rng.uniform() - 0.5) * 5.0;
            const double amp = 0.9 + 0.2 * rng.uniform();
            add_blob(img, protos[k].r1 + jr, protos[k].c1 + jc, sigma1, amp);
            add_blob(img, protos[k].r2 + jr, protos[k].c2 + jc, sigma2, 0.5);
            const int other = static_cast<int>(
                (k + 1 + rng.bounded(static_cast<std::uint64_t>(num_classes - 1))) % num_classes);
            add_blob(img, protos[static_cast<std::size_t>(other)].r1 + jr,
                     protos[static_cast<std::size_t>(other)].c1 + jc, sigma1, 0.35);
            for (float& v : img.data) {
                v += static_cast<float>(0.18 * rng.gaussian());
                v = std::clamp(v, 0.0f, 1.0f);
            }
            d.images.push_back(std::move(img));
            d.labels.push_back(k);
        }
    }
    return d;
}

}  // namespace detail

inline Dataset generate_synthetic(int num_classes, int per_class, int image_size,
                                  std::uint64_t seed, const std::string& split = "train") {
    return detail::synthesize(num_classes, per_class, image_size, seed, split, 0);
}

// Matched train/test pair from the same class prototypes, disjoint sample
// streams.
inline std::pair<Dataset, Dataset> generate_synthetic_pair(int num_classes, int per_class_train,
                                                           int per_class_test, int image_size,
                                                           std::uint64_t seed) {
    Dataset train =
        detail::synthesize(num_classes, per_class_train, image_size, seed, "train", 0);
    Dataset test = detail::synthesize(num_classes, per_class_test, image_size, seed, "test",
                                      per_class_train);
    return {std::move(train), std::move(test)};
}

}  // namespace prop
