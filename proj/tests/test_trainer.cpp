#include <gtest/gtest.h>

#include <filesystem>

#include "prop/trainer.hpp"

using namespace prop;
namespace fs = std::filesystem;

namespace {

// small 2-class blob set, trivially separable
Dataset toy_set(std::uint64_t seed = 31) { return generate_synthetic(2, 40, 10, seed); }

ArchSpec toy_arch() { return build_x_plus_2(1, {4}, {1, 10, 10}, 2); }

double mean_loss(const Network& net, const Dataset& data) {
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        acc += cross_entropy(forward(net, data.images[i]), data.labels[i]);
    return acc / static_cast<double>(data.size());
}

}  // namespace

TEST(BuildXPlus2, ShapeValidatedArchitectures) {
    const ArchSpec a = build_x_plus_2(2, {}, {1, 28, 28}, 10);
    const Network net = instantiate(a, 1);
    EXPECT_EQ(net.num_classes, 10);
    EXPECT_EQ(net.layer_shapes.back(), (std::vector<int>{10}));

    // deepest configuration family must assemble
    const ArchSpec deep = build_x_plus_2(9, {}, {1, 28, 28}, 10);
    EXPECT_NO_THROW(instantiate(deep, 1));
}

TEST(BuildXPlus2, RejectsOutOfRangeDepth) {
    EXPECT_THROW(build_x_plus_2(50, {}, {1, 28, 28}, 10), ArchitectureError);
    EXPECT_THROW(build_x_plus_2(0, {}, {1, 28, 28}, 10), ArchitectureError);
    EXPECT_THROW(build_x_plus_2(3, {8, 16}, {1, 28, 28}, 10), ArchitectureError);
}

TEST(Instantiate, DeterministicPerSeed) {
    const ArchSpec a = build_x_plus_2(2, {}, {1, 14, 14}, 4);
    const Network n1 = instantiate(a, 9);
    const Network n2 = instantiate(a, 9);
    const Network n3 = instantiate(a, 10);
    for (std::size_t i = 0; i < n1.layers.size(); ++i)
        EXPECT_EQ(n1.layers[i].weights.data, n2.layers[i].weights.data);
    bool any_diff = false;
    for (std::size_t i = 0; i < n1.layers.size() && !any_diff; ++i)
        any_diff = n1.layers[i].weights.data != n3.layers[i].weights.data;
    EXPECT_TRUE(any_diff);
}

TEST(Train, ToySetReaches99PercentWithin20Epochs) {
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;
    cfg.seed = 5;
    cfg.target_clean_acc = 0.995;
    std::vector<EpochStats> history;
    const Dataset data = toy_set();
    const Network net = train(toy_arch(), data, cfg, &history);
    ASSERT_FALSE(history.empty());
    EXPECT_LE(history.size(), 20u);
    EXPECT_GE(history.back().clean_acc, 0.99);
    EXPECT_GE(evaluate(net, data), 0.99);
}

TEST(Train, EpochsZeroReturnsInitializedNetwork) {
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 3;
    std::vector<EpochStats> history;
    const Network net = train(toy_arch(), toy_set(), cfg, &history);
    const Network fresh = instantiate(toy_arch(), 3);
    EXPECT_TRUE(history.empty());
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        EXPECT_EQ(net.layers[i].weights.data, fresh.layers[i].weights.data);
}

TEST(Train, DeterministicWeightsPerSeed) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 17;
    cfg.target_clean_acc = 2.0;  // disable early stop
    const Dataset data = toy_set();
    const Network a = train(toy_arch(), data, cfg);
    const Network b = train(toy_arch(), data, cfg);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        EXPECT_EQ(a.layers[i].weights.data, b.layers[i].weights.data);  // bitwise
        EXPECT_EQ(a.layers[i].bias.data, b.layers[i].bias.data);
    }
}

TEST(Train, OneStepMovesLossDownhill) {
    const Dataset data = toy_set();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = static_cast<int>(data.size());  // one frozen batch
    cfg.learning_rate = 1e-3;
    cfg.momentum = 0.0;
    cfg.seed = 23;
    cfg.target_clean_acc = 2.0;
    const double before = mean_loss(instantiate(toy_arch(), cfg.seed), data);
    const Network stepped = train(toy_arch(), data, cfg);
    const double after = mean_loss(stepped, data);
    EXPECT_LT(after, before);
}

TEST(Train, FinalLossAtMostFirstEpochLoss) {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 41;
    cfg.target_clean_acc = 2.0;
    std::vector<EpochStats> history;
    train(toy_arch(), toy_set(), cfg, &history);
    ASSERT_GE(history.size(), 2u);
    EXPECT_LE(history.back().loss, history.front().loss);
}

TEST(Train, DivergenceReportsEpoch) {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 1e9;
    cfg.seed = 2;
    cfg.target_clean_acc = 2.0;
    try {
        train(toy_arch(), toy_set(), cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
}

TEST(Train, PoisonedRunTracksAsr) {
    const Dataset data = generate_synthetic(4, 30, 12, 8);
    auto trig = make_badnets_trigger({1, 12, 12}, 1, 0.15, 3);
    const PoisonedDataset poisoned = poison_dataset(data, trig, 5);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.seed = 19;
    std::vector<EpochStats> history;
    const ArchSpec arch = build_x_plus_2(1, {6}, {1, 12, 12}, 4);
    const Network net = train(arch, poisoned, cfg, &history);
    ASSERT_FALSE(history.empty());
    EXPECT_FALSE(std::isnan(history.back().asr));
    EXPECT_GE(history.back().asr, 0.9);
    EXPECT_GE(history.back().clean_acc, 0.9);
    EXPECT_EQ(net.metadata.count("train.asr"), 1u);
}

TEST(Evaluate, TrivialCases) {
    const Dataset data = generate_synthetic(4, 10, 10, 55, "test");
    // constant classifier on a balanced set scores exactly 1/K
    Tensor<float> w({4, 100});
    Tensor<float> b({4});
    b.data[2] = 3.0f;
    const Network constant =
        make_network({1, 10, 10}, {flatten_layer(), dense_layer(w, b), softmax_layer()});
    EXPECT_DOUBLE_EQ(evaluate(constant, data), 0.25);
    EXPECT_THROW(evaluate(constant, Dataset{}), UsageError);
}

TEST(Evaluate, UntrainedNetNearChance) {
    const Dataset data = generate_synthetic(5, 200, 10, 66, "test");  // 1000 samples
    const Network net = instantiate(build_x_plus_2(1, {4}, {1, 10, 10}, 5), 77);
    // 3 sigma binomial band around 1/K
    const double sigma = std::sqrt(0.2 * 0.8 / 1000.0);
    EXPECT_NEAR(evaluate(net, data), 0.2, 3.0 * sigma + 0.02);
}

TEST(TrainConfigFile, RoundTripAndUnknownKey) {
    const fs::path dir = fs::temp_directory_path() / "prop_trainer_test";
    fs::create_directories(dir);
    TrainConfig cfg;
    cfg.epochs = 7;
    cfg.batch_size = 64;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.8;
    cfg.seed = 99;
    cfg.target_clean_acc = 0.9;
    cfg.target_asr = 0.95;
    save_train_config(cfg, dir / "train.cfg");
    const TrainConfig loaded = load_train_config(dir / "train.cfg");
    EXPECT_EQ(loaded.epochs, 7);
    EXPECT_EQ(loaded.batch_size, 64);
    EXPECT_DOUBLE_EQ(loaded.learning_rate, 0.01);
    EXPECT_DOUBLE_EQ(loaded.momentum, 0.8);
    EXPECT_EQ(loaded.seed, 99u);
    EXPECT_DOUBLE_EQ(loaded.target_clean_acc, 0.9);
    EXPECT_DOUBLE_EQ(loaded.target_asr, 0.95);

    atomic_write_text(dir / "bad.cfg", "epochs=3\nnot_a_key=1\n");
    EXPECT_THROW(load_train_config(dir / "bad.cfg"), FormatError);
    EXPECT_THROW(load_train_config(dir / "missing.cfg"), UsageError);
}

TEST(Backward, RequiresCachedForwardState) {
    const Network net = instantiate(toy_arch(), 1);
    ForwardCache empty;
    auto grads = make_grad_buffers(net);
    EXPECT_THROW(backward_train(net, empty, 0, grads), UsageError);
}

TEST(HistoryCsv, WritesOneRowPerEpoch) {
    const fs::path dir = fs::temp_directory_path() / "prop_trainer_test";
    fs::create_directories(dir);
    std::vector<EpochStats> history = {{1, 0.5, 0.7, std::numeric_limits<double>::quiet_NaN()},
                                       {2, 0.3, 0.9, 0.95}};
    write_history_csv(history, dir / "hist.csv");
    std::ifstream in(dir / "hist.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,loss,clean_acc,asr");
    std::getline(in, line);
    EXPECT_EQ(line, "1,0.5,0.7,");
    std::getline(in, line);
    EXPECT_EQ(line, "2,0.3,0.9,0.95");
}
