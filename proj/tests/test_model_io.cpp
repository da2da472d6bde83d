#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "prop/model_io.hpp"

using namespace prop;
namespace fs = std::filesystem;

namespace {

Network sample_net(std::uint64_t seed) {
    Rng rng(seed);
    auto kw = oracle::random_tensor({4, 1, 3, 3}, rng);
    auto kb = oracle::random_tensor({4}, rng);
    auto w1 = oracle::random_tensor({16, 4 * 3 * 3}, rng);  // conv 8x8 -> 6x6, pool -> 3x3
    auto b1 = oracle::random_tensor({16}, rng);
    auto w2 = oracle::random_tensor({5, 16}, rng);
    auto b2 = oracle::random_tensor({5}, rng);
    return make_network({1, 8, 8},
                        {conv_layer(std::move(kw), std::move(kb), 1, 0), relu_layer(),
                         maxpool_layer(2, 2), flatten_layer(),
                         dense_layer(std::move(w1), std::move(b1)), relu_layer(),
                         dense_layer(std::move(w2), std::move(b2)), softmax_layer()},
                        {{"attack", "none"}, {"dataset", "unit-test"}});
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "prop_model_io_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(ModelIO, RoundTripIsBitwiseExact) {
    const Network net = sample_net(1);
    const fs::path path = temp_dir() / "roundtrip.propmdl";
    save_model(net, path);
    const Network loaded = load_model(path);

    ASSERT_EQ(loaded.layers.size(), net.layers.size());
    EXPECT_EQ(loaded.input_shape, net.input_shape);
    EXPECT_EQ(loaded.num_classes, net.num_classes);
    EXPECT_EQ(loaded.metadata, net.metadata);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        EXPECT_EQ(loaded.layers[i].kind, net.layers[i].kind);
        EXPECT_EQ(loaded.layers[i].weights.shape, net.layers[i].weights.shape);
        EXPECT_EQ(loaded.layers[i].weights.data, net.layers[i].weights.data);  // bitwise
        EXPECT_EQ(loaded.layers[i].bias.data, net.layers[i].bias.data);
        EXPECT_EQ(loaded.layers[i].stride, net.layers[i].stride);
        EXPECT_EQ(loaded.layers[i].padding, net.layers[i].padding);
        EXPECT_EQ(loaded.layers[i].pool_size, net.layers[i].pool_size);
        EXPECT_EQ(loaded.layers[i].pool_stride, net.layers[i].pool_stride);
    }
}

TEST(ModelIO, SaveLoadSaveIsByteIdentical) {
    const Network net = sample_net(2);
    const fs::path a = temp_dir() / "a.propmdl";
    const fs::path b = temp_dir() / "b.propmdl";
    save_model(net, a);
    save_model(load_model(a), b);
    EXPECT_EQ(read_file_bytes(a), read_file_bytes(b));
}

TEST(ModelIO, CorruptedMagicIsRejected) {
    auto bytes = serialize_model(sample_net(3));
    bytes[0] = 'X';
    try {
        deserialize_model(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.byte_offset, 0u);
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST(ModelIO, UnsupportedVersionIsRejected) {
    auto bytes = serialize_model(sample_net(4));
    bytes[8] = 99;  // version u16 LE follows the 8-byte magic
    EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(ModelIO, TruncatedWeightBlockNamesTheLayer) {
    auto bytes = serialize_model(sample_net(5));
    bytes.resize(bytes.size() / 2);  // cut inside the first big weight block
    try {
        deserialize_model(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
        EXPECT_NE(msg.find("layer"), std::string::npos) << msg;
        EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
    }
}

TEST(ModelIO, TrailingBytesAreRejected) {
    auto bytes = serialize_model(sample_net(6));
    bytes.push_back(0);
    EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(ModelIO, DeclaredNumClassesMustMatchStack) {
    auto bytes = serialize_model(sample_net(7));
    bytes[10] = 11;  // num_classes u32 LE at offset 10
    EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(ModelIO, MissingFileIsUsageError) {
    EXPECT_THROW(load_model(temp_dir() / "does-not-exist.propmdl"), UsageError);
}

TEST(Sha256, KnownVector) {
    const std::vector<std::uint8_t> abc = {'a', 'b', 'c'};
    EXPECT_EQ(sha256_hex(abc),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
