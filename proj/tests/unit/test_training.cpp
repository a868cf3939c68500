#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "style_mixer/archive.hpp"
#include "style_mixer/image.hpp"
#include "style_mixer/training.hpp"
#include "synthetic.hpp"

using namespace style_mixer;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const fs::path& data, const fs::path& out) {
    TrainConfig cfg;
    cfg.content_dir = data / "content";
    cfg.style_dir = data / "style";
    cfg.output_dir = out;
    cfg.encoder = "random:0";
    cfg.batch_size = 2;
    cfg.resize_short = 40;
    cfg.crop = 32;
    cfg.max_steps = 2;
    cfg.seed = 3;
    cfg.checkpoint_every = 1000;
    return cfg;
}

Batch tiny_batch(uint64_t seed) {
    std::vector<torch::Tensor> c, s;
    for (uint64_t i = 0; i < 2; ++i) {
        c.push_back(fixtures::synthetic_content(32, 32, seed + i));
        s.push_back(fixtures::synthetic_style(32, 32, seed + i));
    }
    return {torch::stack(c), torch::stack(s)};
}

std::map<std::string, torch::Tensor> snapshot(torch::nn::Module& m) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : m.named_parameters()) out[p.key()] = p.value().detach().clone();
    return out;
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

}  // namespace

TEST(Config, ParsesKeyValueText) {
    auto kv = KeyValueConfig::parse("# comment\n batch_size = 4 \n\nlr=0.001\nname = a b\nlr = 0.002\n");
    EXPECT_EQ(kv.get_int("batch_size", 0), 4);
    EXPECT_DOUBLE_EQ(kv.get_double("lr", 0), 0.002);
    EXPECT_EQ(kv.get_string("name", ""), "a b");
    EXPECT_EQ(kv.get_int("missing", 7), 7);
    EXPECT_THROW(KeyValueConfig::parse("no equals sign"), Error);
    EXPECT_THROW(KeyValueConfig::parse("batch_size = 4x").get_int("batch_size", 0), Error);
    EXPECT_THROW(KeyValueConfig::load("/nonexistent/x.cfg"), Error);
}

TEST(Config, TrainAndLossSettingsFromFile) {
    auto kv = KeyValueConfig::parse(
        "content_dir = c\nstyle_dir = s\nbatch_size = 3\nlr = 0.0002\nmax_steps = 9\n"
        "pa.patch_size = 5\nmff.layers = relu4_1,relu5_1\nmff.se_ratio = 8\nlambda_id2 = 10\ncx_bandwidth = 0.2\n");
    auto cfg = train_config_from(kv);
    EXPECT_EQ(cfg.content_dir, fs::path("c"));
    EXPECT_EQ(cfg.batch_size, 3);
    EXPECT_DOUBLE_EQ(cfg.lr, 2e-4);
    EXPECT_EQ(cfg.max_steps, 9);
    EXPECT_EQ(cfg.model.pa.patch_size, 5);
    EXPECT_EQ(cfg.model.mff.layers, (std::vector<Layer>{Layer::Relu4_1, Layer::Relu5_1}));
    EXPECT_EQ(cfg.model.mff.se_ratio, 8);
    auto loss = loss_config_from(kv);
    EXPECT_EQ(loss.lambda_identity2, 10.0);
    EXPECT_EQ(loss.bandwidth, 0.2);
    EXPECT_EQ(loss.lambda_content, 3.0);
}

TEST(Config, ValidationRejectsBadTrainSettings) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.crop = 600;
    EXPECT_THROW(cfg.validate(), Error);
    EXPECT_THROW(loss_config_from(KeyValueConfig::parse("lambda_c = -1")), Error);
}

TEST(PrepareBatch, ResizesShortSideAndCrops) {
    auto wide = torch::rand({3, 512, 768});
    EXPECT_EQ(resize_short_side(wide, 512).sizes(), (std::vector<int64_t>{3, 512, 768}));
    auto big = torch::rand({3, 1024, 2048});
    EXPECT_EQ(resize_short_side(big, 512).sizes(), (std::vector<int64_t>{3, 512, 1024}));

    auto dir = fixtures::scratch_dir("prep_sizes");
    fs::create_directories(dir / "c");
    save_png(dir / "c" / "a.png", torch::rand({3, 512, 768}));
    save_png(dir / "c" / "b.png", torch::rand({3, 1024, 2048}));
    TrainConfig cfg;
    std::mt19937_64 rng(1);
    auto paths = list_images(dir / "c");
    auto batch = prepare_batch(paths, paths, cfg, rng);
    EXPECT_EQ(batch.content.sizes(), (std::vector<int64_t>{6, 3, 256, 256}));
    EXPECT_EQ(batch.style.sizes(), (std::vector<int64_t>{6, 3, 256, 256}));
}

TEST(PrepareBatch, DeterministicForFixedSeed) {
    auto dir = fixtures::scratch_dir("prep_det");
    fixtures::write_synthetic_dataset(dir, 5, 64, 2);
    TrainConfig cfg = tiny_config(dir, dir / "out");
    auto c = list_images(cfg.content_dir), s = list_images(cfg.style_dir);
    std::mt19937_64 r1(9), r2(9), r3(10);
    auto a = prepare_batch(c, s, cfg, r1);
    auto b = prepare_batch(c, s, cfg, r2);
    EXPECT_TRUE(torch::equal(a.content, b.content));
    EXPECT_TRUE(torch::equal(a.style, b.style));
    auto d = prepare_batch(c, s, cfg, r3);
    EXPECT_FALSE(torch::equal(a.content, d.content));
}

TEST(PrepareBatch, SkipsUndecodableAndTinyImages) {
    auto dir = fixtures::scratch_dir("prep_skip");
    fs::create_directories(dir / "c");
    std::ofstream(dir / "c" / "broken.png") << "not a png";
    save_png(dir / "c" / "tiny.png", torch::rand({3, 20, 64}));
    save_png(dir / "c" / "good.png", fixtures::synthetic_content(48, 48, 1));
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.resize_short = 40;
    cfg.crop = 32;
    std::mt19937_64 rng(0);
    auto paths = list_images(dir / "c");
    ASSERT_EQ(paths.size(), 3u);
    auto batch = prepare_batch(paths, paths, cfg, rng);
    EXPECT_EQ(batch.content.size(0), 4);

    std::vector<fs::path> only_bad = {dir / "c" / "broken.png", dir / "c" / "tiny.png"};
    EXPECT_THROW(prepare_batch(only_bad, paths, cfg, rng), Error);
    EXPECT_THROW(prepare_batch({}, paths, cfg, rng), Error);
}

class TrainStepTest : public ::testing::Test {
protected:
    VggEncoder encoder = random_encoder(0);
};

TEST_F(TrainStepTest, ZeroLearningRateLeavesParametersUnchanged) {
    auto state = make_train_state(ModelConfig{}, encoder, 0.0, 1);
    auto before = snapshot(*state.model);
    auto losses = train_step(state, tiny_batch(0), LossConfig{});
    EXPECT_GT(losses.total, 0.0);
    EXPECT_EQ(state.step, 1);
    for (const auto& p : state.model->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), before[p.key()])) << p.key();
}

TEST_F(TrainStepTest, OneStepUpdatesEveryParameterGroupAndNotTheEncoder) {
    auto state = make_train_state(ModelConfig{}, encoder, 1e-4, 2);
    const auto checksum = parameter_checksum(*encoder);
    auto before = snapshot(*state.model);
    train_step(state, tiny_batch(1), LossConfig{});
    std::map<std::string, double> moved;
    for (const auto& p : state.model->named_parameters())
        moved[group_of(p.key())] += (p.value() - before[p.key()]).abs().sum().item<double>();
    for (const char* g : {"mff", "pa", "decoder", "amplifier"}) EXPECT_GT(moved[g], 0.0) << g;
    EXPECT_EQ(moved.size(), 4u);
    EXPECT_EQ(parameter_checksum(*encoder), checksum);
    for (const auto& p : encoder->parameters()) EXPECT_FALSE(p.grad().defined());
}

TEST_F(TrainStepTest, LossBreakdownIsConsistent) {
    auto state = make_train_state(ModelConfig{}, encoder, 1e-4, 3);
    LossConfig cfg;
    auto l = train_step(state, tiny_batch(2), cfg);
    EXPECT_NEAR(l.total, total_loss(l, cfg).total, 1e-9);
    for (double v : {l.content, l.style, l.contextual, l.identity1, l.identity2}) EXPECT_GT(v, 0.0);
}

TEST_F(TrainStepTest, NonFiniteLossAbortsWithoutChangingState) {
    auto state = make_train_state(ModelConfig{}, encoder, 1e-4, 4);
    train_step(state, tiny_batch(3), LossConfig{});  // populate optimizer moments
    auto before = snapshot(*state.model);
    auto batch = tiny_batch(4);
    batch.style[1][0][5][5] = std::numeric_limits<float>::quiet_NaN();
    try {
        train_step(state, batch, LossConfig{});
        FAIL() << "expected NonFiniteLoss";
    } catch (const NonFiniteLoss& e) {
        EXPECT_FALSE(e.term().empty());
        EXPECT_NE(std::string(e.what()).find(e.term()), std::string::npos);
    }
    EXPECT_EQ(state.step, 1);
    for (const auto& p : state.model->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), before[p.key()])) << p.key();

    // The next good step behaves exactly like one taken without the failure.
    auto twin = make_train_state(ModelConfig{}, encoder, 1e-4, 4);
    train_step(twin, tiny_batch(3), LossConfig{});
    train_step(state, tiny_batch(5), LossConfig{});
    train_step(twin, tiny_batch(5), LossConfig{});
    auto a = snapshot(*state.model), b = snapshot(*twin.model);
    for (const auto& [k, v] : a) EXPECT_TRUE(torch::equal(v, b[k])) << k;
}

TEST_F(TrainStepTest, StateRoundTripsThroughArchive) {
    auto state = make_train_state(ModelConfig{}, encoder, 1e-4, 5);
    train_step(state, tiny_batch(6), LossConfig{});
    state.rng.discard(17);
    auto dir = fixtures::scratch_dir("state_rt");
    save_train_state(dir / "s.smx", state);
    auto loaded = load_train_state(dir / "s.smx", encoder, 1e-4);
    EXPECT_EQ(loaded.step, 1);
    EXPECT_EQ(loaded.rng, state.rng);
    auto a = snapshot(*state.model), b = snapshot(*loaded.model);
    for (const auto& [k, v] : a) EXPECT_TRUE(torch::equal(v, b[k])) << k;

    train_step(state, tiny_batch(7), LossConfig{});
    train_step(loaded, tiny_batch(7), LossConfig{});
    a = snapshot(*state.model);
    b = snapshot(*loaded.model);
    for (const auto& [k, v] : a) EXPECT_LE((v - b[k]).abs().max().item<double>(), 1e-6) << k;
}

TEST(Train, ZeroStepsWritesOnlyTheInitialCheckpoint) {
    auto dir = fixtures::scratch_dir("train_zero");
    fixtures::write_synthetic_dataset(dir, 3, 48, 1);
    auto cfg = tiny_config(dir, dir / "run");
    cfg.max_steps = 0;
    auto last = train(cfg, LossConfig{});
    EXPECT_EQ(last, checkpoint_path(cfg.output_dir, 0));
    int checkpoints = 0;
    for (const auto& e : fs::directory_iterator(cfg.output_dir)) checkpoints += e.path().extension() == ".smx";
    EXPECT_EQ(checkpoints, 1);
    EXPECT_EQ(read_lines(cfg.output_dir / "loss.csv"),
              (std::vector<std::string>{"step,total,content,style,contextual,identity1,identity2"}));
    EXPECT_NO_THROW(load_checkpoint(last, random_encoder(0)));
}

TEST(Train, EmptyDatasetIsAnError) {
    auto dir = fixtures::scratch_dir("train_empty");
    fs::create_directories(dir / "content");
    fs::create_directories(dir / "style");
    EXPECT_THROW(train(tiny_config(dir, dir / "run"), LossConfig{}), Error);
}

TEST(Train, WritesPeriodicCheckpointsAndLossLog) {
    auto dir = fixtures::scratch_dir("train_log");
    fixtures::write_synthetic_dataset(dir, 4, 48, 2);
    auto cfg = tiny_config(dir, dir / "run");
    cfg.max_steps = 3;
    cfg.checkpoint_every = 2;
    std::vector<int64_t> seen;
    auto last = train(cfg, LossConfig{}, [&](int64_t step, const LossBreakdown&) { seen.push_back(step); });
    EXPECT_EQ(seen, (std::vector<int64_t>{1, 2, 3}));
    EXPECT_EQ(last, checkpoint_path(cfg.output_dir, 3));
    for (int64_t s : {0, 2, 3}) EXPECT_TRUE(fs::exists(checkpoint_path(cfg.output_dir, s))) << s;
    EXPECT_FALSE(fs::exists(checkpoint_path(cfg.output_dir, 1)));
    auto lines = read_lines(cfg.output_dir / "loss.csv");
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[1].substr(0, 2), "1,");
}

TEST(Train, ResumeMatchesUninterruptedRun) {
    auto dir = fixtures::scratch_dir("train_resume");
    fixtures::write_synthetic_dataset(dir, 6, 48, 3);

    auto full = tiny_config(dir, dir / "full");
    full.max_steps = 4;
    const auto full_last = train(full, LossConfig{});

    auto first = tiny_config(dir, dir / "split");
    first.max_steps = 2;
    const auto mid = train(first, LossConfig{});
    auto second = first;
    second.max_steps = 4;
    second.resume = mid;
    const auto split_last = train(second, LossConfig{});

    auto enc = random_encoder(0);
    auto a = load_checkpoint(full_last, enc), b = load_checkpoint(split_last, enc);
    auto pa = snapshot(*a), pb = snapshot(*b);
    for (const auto& [k, v] : pa) EXPECT_LE((v - pb[k]).abs().max().item<double>(), 1e-6) << k;

    auto full_log = read_lines(full.output_dir / "loss.csv");
    auto split_log = read_lines(first.output_dir / "loss.csv");
    EXPECT_EQ(full_log.size(), 5u);
    EXPECT_EQ(split_log.size(), 5u);
}

TEST(Train, SameSeedsGiveIdenticalLossCurves) {
    auto dir = fixtures::scratch_dir("train_repro");
    fixtures::write_synthetic_dataset(dir, 4, 48, 4);
    std::vector<double> a, b;
    auto cfg = tiny_config(dir, dir / "a");
    train(cfg, LossConfig{}, [&](int64_t, const LossBreakdown& l) { a.push_back(l.total); });
    cfg.output_dir = dir / "b";
    train(cfg, LossConfig{}, [&](int64_t, const LossBreakdown& l) { b.push_back(l.total); });
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-4 * std::abs(a[i]));
}

TEST(Checkpoint, RejectsForeignEncoder) {
    auto dir = fixtures::scratch_dir("ckpt_enc");
    auto model = make_model(ModelConfig{}, random_encoder(0), 0);
    save_checkpoint(dir / "m.smx", model);
    EXPECT_NO_THROW(load_checkpoint(dir / "m.smx", random_encoder(0)));
    EXPECT_THROW(load_checkpoint(dir / "m.smx", random_encoder(1)), Error);
}

TEST(Checkpoint, ConfigBlockRoundTrips) {
    auto dir = fixtures::scratch_dir("ckpt_cfg");
    ModelConfig mc;
    mc.pa.patch_size = 5;
    mc.pa.norm_eps = 3.7e-8;
    mc.mff.layers = {Layer::Relu4_1};
    auto model = make_model(mc, random_encoder(0), 0);
    save_checkpoint(dir / "m.smx", model);
    auto back = read_checkpoint_config(dir / "m.smx");
    EXPECT_EQ(back.pa.patch_size, 5);
    EXPECT_EQ(back.pa.norm_eps, 3.7e-8);
    EXPECT_EQ(back.mff.layers, mc.mff.layers);
    auto loaded = load_checkpoint(dir / "m.smx", random_encoder(0));
    EXPECT_EQ(loaded->pa->options().patch_size, 5);
}

TEST(Checkpoint, MalformedArrayIsNamed) {
    auto dir = fixtures::scratch_dir("ckpt_bad");
    auto model = make_model(ModelConfig{}, random_encoder(0), 0);
    save_checkpoint(dir / "m.smx", model);
    auto archive = read_archive(dir / "m.smx");
    for (auto& a : archive.arrays)
        if (a.name == "pa.theta_s.weight") a.data = torch::zeros({3, 3});
    write_archive(dir / "bad.smx", archive);
    try {
        load_checkpoint(dir / "bad.smx", random_encoder(0));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("pa.theta_s.weight"), std::string::npos) << e.what();
    }
}
