#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prop/errors.hpp"
#include "prop/network.hpp"

namespace prop {

// PROPMDL1 model file, little-endian throughout:
//   magic "PROPMDL1" | u16 version | u32 num_classes
//   u8 input_ndims, u32 dims...
//   u32 metadata_count, { u32 klen, key, u32 vlen, value }...
//   u32 layer_count, layer records:
//     u8 kind
//     conv:    u32 F,C,KH,KW, u32 stride, u32 padding, f32 weights, f32 bias
//     dense:   u32 OUT,IN, f32 weights, f32 bias
//     maxpool: u32 size, u32 stride
//     relu / flatten / softmax: no payload
// Weights are raw IEEE-754 32-bit floats, row-major, so a save/load round
// trip is bitwise exact.

constexpr char kModelMagic[8] = {'P', 'R', 'O', 'P', 'M', 'D', 'L', '1'};
constexpr std::uint16_t kModelVersion = 1;

namespace detail {

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v & 0xff));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct ByteReader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::string context = "header";

    void need(std::size_t n) {
        if (pos + n > buf.size())
            throw FormatError("truncated model file while reading " + context, pos);
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(&buf[pos]), n);
        pos += n;
        return s;
    }
};

}  // namespace detail

// Writes content to path atomically (temp file in the same directory, then
// rename), so concurrent readers never observe a partial file.
inline void atomic_write_bytes(const std::filesystem::path& path,
                               const std::vector<std::uint8_t>& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw UsageError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw UsageError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    atomic_write_bytes(path, bytes);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<std::uint8_t> serialize_model(const Network& net) {
    detail::ByteWriter w;
    w.bytes(kModelMagic, sizeof(kModelMagic));
    w.u16(kModelVersion);
    w.u32(static_cast<std::uint32_t>(net.num_classes));
    w.u8(static_cast<std::uint8_t>(net.input_shape.size()));
    for (int d : net.input_shape) w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(net.metadata.size()));
    for (const auto& [k, v] : net.metadata) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& l : net.layers) {
        w.u8(static_cast<std::uint8_t>(l.kind));
        switch (l.kind) {
            case LayerKind::conv:
                for (int d : l.weights.shape) w.u32(static_cast<std::uint32_t>(d));
                w.u32(static_cast<std::uint32_t>(l.stride));
                w.u32(static_cast<std::uint32_t>(l.padding));
                for (float v : l.weights.data) w.f32(v);
                for (float v : l.bias.data) w.f32(v);
                break;
            case LayerKind::dense:
                w.u32(static_cast<std::uint32_t>(l.weights.shape[0]));
                w.u32(static_cast<std::uint32_t>(l.weights.shape[1]));
                for (float v : l.weights.data) w.f32(v);
                for (float v : l.bias.data) w.f32(v);
                break;
            case LayerKind::maxpool:
                w.u32(static_cast<std::uint32_t>(l.pool_size));
                w.u32(static_cast<std::uint32_t>(l.pool_stride));
                break;
            case LayerKind::relu:
            case LayerKind::flatten:
            case LayerKind::softmax:
                break;
        }
    }
    return w.buf;
}

inline Network deserialize_model(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r{bytes};
    r.context = "magic";
    r.need(sizeof(kModelMagic));
    if (std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0)
        throw FormatError("bad magic, not a PROPMDL1 model file", 0);
    r.pos = sizeof(kModelMagic);
    r.context = "version";
    const std::uint16_t version = r.u16();
    if (version != kModelVersion)
        throw FormatError("unsupported model version " + std::to_string(version),
                          sizeof(kModelMagic));
    r.context = "header";
    const std::uint32_t num_classes = r.u32();
    const std::uint8_t ndims = r.u8();
    std::vector<int> input_shape;
    for (int i = 0; i < ndims; ++i) input_shape.push_back(static_cast<int>(r.u32()));

    std::map<std::string, std::string> metadata;
    const std::uint32_t meta_count = r.u32();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        r.context = "metadata entry " + std::to_string(i);
        std::string k = r.str();
        std::string v = r.str();
        metadata.emplace(std::move(k), std::move(v));
    }

    const std::uint32_t layer_count = r.u32();
    std::vector<Layer> layers;
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        r.context = "layer " + std::to_string(i);
        const std::uint8_t tag = r.u8();
        if (tag < 1 || tag > 6)
            throw FormatError("unknown layer kind tag " + std::to_string(tag) + " in layer " +
                                  std::to_string(i),
                              r.pos - 1);
        const LayerKind kind = static_cast<LayerKind>(tag);
        r.context = std::string("layer ") + std::to_string(i) + " (" + layer_kind_name(kind) + ")";
        switch (kind) {
            case LayerKind::conv: {
                std::vector<int> ks(4);
                for (int& d : ks) d = static_cast<int>(r.u32());
                const int stride = static_cast<int>(r.u32());
                const int padding = static_cast<int>(r.u32());
                r.context = "weight block of layer " + std::to_string(i) + " (conv)";
                Tensor<float> wts(ks);
                for (float& v : wts.data) v = r.f32();
                Tensor<float> b({ks[0]});
                for (float& v : b.data) v = r.f32();
                layers.push_back(conv_layer(std::move(wts), std::move(b), stride, padding));
                break;
            }
            case LayerKind::dense: {
                const int out = static_cast<int>(r.u32());
                const int in = static_cast<int>(r.u32());
                r.context = "weight block of layer " + std::to_string(i) + " (dense)";
                Tensor<float> wts({out, in});
                for (float& v : wts.data) v = r.f32();
                Tensor<float> b({out});
                for (float& v : b.data) v = r.f32();
                layers.push_back(dense_layer(std::move(wts), std::move(b)));
                break;
            }
            case LayerKind::maxpool: {
                const int size = static_cast<int>(r.u32());
                const int stride = static_cast<int>(r.u32());
                layers.push_back(maxpool_layer(size, stride));
                break;
            }
            case LayerKind::relu: layers.push_back(relu_layer()); break;
            case LayerKind::flatten: layers.push_back(flatten_layer()); break;
            case LayerKind::softmax: layers.push_back(softmax_layer()); break;
        }
    }
    if (r.pos != bytes.size())
        throw FormatError("trailing bytes after model payload", r.pos);

    Network net;
    try {
        net = make_network(std::move(input_shape), std::move(layers), std::move(metadata));
    } catch (const ArchitectureError& e) {
        throw FormatError(std::string("model file is shape-inconsistent: ") + e.what(), r.pos);
    }
    if (net.num_classes != static_cast<int>(num_classes))
        throw FormatError("declared num_classes " + std::to_string(num_classes) +
                              " does not match layer stack output " +
                              std::to_string(net.num_classes),
                          r.pos);
    return net;
}

inline void save_model(const Network& net, const std::filesystem::path& path) {
    atomic_write_bytes(path, serialize_model(net));
}

inline Network load_model(const std::filesystem::path& path) {
    return deserialize_model(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// SHA-256 (reports pin the audited model file by hash)
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 computation failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string sha256_file_hex(const std::filesystem::path& path) {
    return sha256_hex(read_file_bytes(path));
}

}  // namespace prop
