#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "style_mixer/archive.hpp"
#include "style_mixer/image.hpp"
#include "style_mixer/pipeline.hpp"
#include "style_mixer/training.hpp"
#include "synthetic.hpp"

using namespace style_mixer;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "style_mixer");
    return cli::run(args);
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int count_colours(const torch::Tensor& image) {
    auto bytes = (image * 255).round().to(torch::kInt64);
    auto packed = (bytes[0] * 65536 + bytes[1] * 256 + bytes[2]).view(-1);
    return static_cast<int>(std::get<0>(at::_unique(packed)).numel());
}

// One shared fixture on disk: images plus an untrained checkpoint.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fixtures::scratch_dir("cli");
        save_png(dir_ / "content.png", fixtures::synthetic_content(72, 90, 1));
        for (int i = 0; i < 3; ++i)
            save_png(dir_ / ("style" + std::to_string(i) + ".png"), fixtures::synthetic_style(64, 64, 10 + i));
        auto model = make_model(ModelConfig{}, random_encoder(0), 5);
        save_checkpoint(dir_ / "model.smx", model);
    }
    static fs::path path(const std::string& name) { return dir_ / name; }
    static std::vector<std::string> base(const std::string& cmd, const std::string& out) {
        return {cmd, "--content", path("content.png").string(), "--checkpoint", path("model.smx").string(),
                "--encoder", "random:0", "--out", path(out).string()};
    }
    static std::vector<std::string> with(std::vector<std::string> a, std::initializer_list<std::string> extra) {
        a.insert(a.end(), extra);
        return a;
    }
    static inline fs::path dir_;
};

}  // namespace

TEST(Pipeline, SstRoundsSizesDownToStride) {
    auto model = make_model(ModelConfig{}, random_encoder(0), 1);
    model->eval();
    auto out = run_sst(model, fixtures::synthetic_content(100, 130, 2), fixtures::synthetic_style(70, 50, 3));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 96, 128}));
    EXPECT_GE(out.min().item<float>(), 0.0f);
    EXPECT_LE(out.max().item<float>(), 1.0f);
}

TEST(Pipeline, SingleStyleMstEqualsSst) {
    auto model = make_model(ModelConfig{}, random_encoder(0), 2);
    model->eval();
    auto content = fixtures::synthetic_content(64, 96, 4);
    auto style = fixtures::synthetic_style(64, 64, 5);
    auto sst = run_sst(model, content, style);
    for (auto strategy : {FusionStrategy::Region, FusionStrategy::Discrete}) {
        MstOptions opts;
        opts.strategy = strategy;
        auto mst = run_mst(model, content, {style}, opts);
        EXPECT_LE((mst.image - sst).abs().max().item<double>(), 1e-5);
        EXPECT_EQ(mst.style_map.abs().sum().item<int64_t>(), 0);
    }
}

TEST(Pipeline, MstIsDeterministicAndExclusive) {
    auto model = make_model(ModelConfig{}, random_encoder(0), 3);
    model->eval();
    auto content = fixtures::synthetic_content(64, 64, 6);
    std::vector<torch::Tensor> styles = {fixtures::synthetic_style(64, 64, 7), fixtures::synthetic_style(48, 80, 8),
                                         fixtures::synthetic_style(64, 64, 9)};
    MstOptions opts;
    opts.kmeans.k = 4;
    auto a = run_mst(model, content, styles, opts);
    auto b = run_mst(model, content, styles, opts);
    EXPECT_TRUE(torch::equal(a.image, b.image));
    ASSERT_TRUE(a.regions && a.assignment);
    EXPECT_EQ(a.confidences.size(), 3u);
    EXPECT_TRUE(torch::equal(a.style_map, style_index_map(*a.assignment, *a.regions)));
    EXPECT_EQ(a.style_map.sizes(), (std::vector<int64_t>{8, 8}));
}

TEST(Pipeline, RegionMapHasOneColourPerRegion) {
    auto dir = fixtures::scratch_dir("region_map");
    auto labels = torch::tensor({0, 1, 2, 3, 4, 5}).view({2, 3});
    save_region_map(dir / "m.png", labels, 32, 48);
    auto img = load_image(dir / "m.png");
    EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 32, 48}));
    EXPECT_EQ(count_colours(img), 6);
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run_cli({}), cli::kExitUsage);
    EXPECT_EQ(run_cli({"train"}), cli::kExitUsage);
    EXPECT_EQ(run_cli({"sst", "--content", "x.png"}), cli::kExitUsage);
    EXPECT_EQ(run_cli({"frobnicate"}), cli::kExitUsage);
    EXPECT_EQ(run_cli(with(base("mst", "o.png"), {"--style", path("style0.png").string(), "--style",
                                                  path("style1.png").string(), "--strategy", "soft"})),
              cli::kExitUsage);
    // Paths are checked before any model work.
    EXPECT_EQ(run_cli(with(base("sst", "o.png"), {"--style", path("missing.png").string()})), cli::kExitUsage);
    EXPECT_EQ(run_cli(with(base("sst", "no_such_dir/o.png"), {"--style", path("style0.png").string()})),
              cli::kExitUsage);
}

TEST_F(CliTest, SstWritesStrideAlignedImageDeterministically) {
    auto args = with(base("sst", "sst_a.png"), {"--style", path("style0.png").string()});
    ASSERT_EQ(run_cli(args), cli::kExitOk);
    auto img = load_image(path("sst_a.png"));
    EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 64, 80}));
    ASSERT_EQ(run_cli(with(base("sst", "sst_b.png"), {"--style", path("style0.png").string()})), cli::kExitOk);
    EXPECT_EQ(file_bytes(path("sst_a.png")), file_bytes(path("sst_b.png")));
}

TEST_F(CliTest, FlagCheckpointMismatchFails) {
    auto style = path("style0.png").string();
    EXPECT_EQ(run_cli(with(base("sst", "m.png"), {"--style", style, "--patch-size", "5"})), cli::kExitFailure);
    EXPECT_EQ(run_cli(with(base("sst", "m.png"), {"--style", style, "--mff-layers", "relu4_1"})), cli::kExitFailure);
    EXPECT_EQ(run_cli(with(base("sst", "m.png"), {"--style", style, "--patch-size", "3", "--mff-layers",
                                                  "relu3_1,relu4_1,relu5_1"})),
              cli::kExitOk);
}

TEST_F(CliTest, CorruptCheckpointNamesTheArray) {
    auto archive = read_archive(path("model.smx"));
    for (auto& a : archive.arrays)
        if (a.name == "decoder.body.0.weight") a.data = torch::full_like(a.data, NAN);
    write_archive(path("corrupt.smx"), archive);
    auto args = with(base("sst", "c.png"), {"--style", path("style0.png").string()});
    args[4] = path("corrupt.smx").string();
    ::testing::internal::CaptureStderr();
    const int code = run_cli(args);
    const auto err = ::testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, cli::kExitFailure);
    EXPECT_NE(err.find("decoder.body.0.weight"), std::string::npos) << err;
    EXPECT_FALSE(fs::exists(path("c.png")));
}

TEST_F(CliTest, SingleStyleMstMatchesSst) {
    auto style = path("style1.png").string();
    ASSERT_EQ(run_cli(with(base("sst", "one_sst.png"), {"--style", style})), cli::kExitOk);
    ASSERT_EQ(run_cli(with(base("mst", "one_mst.png"), {"--style", style})), cli::kExitOk);
    auto a = load_image(path("one_sst.png")), b = load_image(path("one_mst.png"));
    EXPECT_LE((a - b).abs().max().item<double>(), 1e-5);
}

TEST_F(CliTest, MstDumpsRegionMapAndTable) {
    auto args = with(base("mst", "dump.png"), {"--style", path("style0.png").string(), "--style",
                                               path("style1.png").string(), "--k", "3", "--dump-regions"});
    ASSERT_EQ(run_cli(args), cli::kExitOk);
    auto map = load_image(path("dump_regions.png"));
    EXPECT_EQ(map.sizes(), (std::vector<int64_t>{3, 64, 80}));
    EXPECT_EQ(count_colours(map), 3);
    std::ifstream table(path("dump_regions.txt"));
    std::string text((std::istreambuf_iterator<char>(table)), {});
    int region_lines = 0;
    std::istringstream lines(text);
    for (std::string l; std::getline(lines, l);) {
        if (l.empty() || l[0] == '#') continue;
        ++region_lines;
        std::istringstream fields(l);
        std::string region, positions, style, name;
        fields >> region >> positions >> style >> name;
        EXPECT_EQ(name, "style" + style + ".png") << l;
    }
    EXPECT_EQ(region_lines, 3) << text;
}

TEST_F(CliTest, ThreeStyleMstIsDeterministic) {
    for (const char* out : {"three_a.png", "three_b.png"}) {
        ASSERT_EQ(run_cli(with(base("mst", out),
                               {"--style", path("style0.png").string(), "--style", path("style1.png").string(),
                                "--style", path("style2.png").string(), "--seed", "11", "--k", "4"})),
                  cli::kExitOk);
    }
    EXPECT_EQ(file_bytes(path("three_a.png")), file_bytes(path("three_b.png")));
    ASSERT_EQ(run_cli(with(base("mst", "three_d.png"), {"--style", path("style0.png").string(), "--style",
                                                        path("style2.png").string(), "--strategy", "discrete"})),
              cli::kExitOk);
}

TEST(CliTrain, ConfigFileAndZeroSteps) {
    auto dir = fixtures::scratch_dir("cli_train");
    fixtures::write_synthetic_dataset(dir, 3, 48, 6);
    std::ofstream(dir / "toy.cfg") << "content_dir = " << (dir / "content").string() << "\n"
                                   << "style_dir = " << (dir / "style").string() << "\n"
                                   << "output_dir = " << (dir / "run").string() << "\n"
                                   << "encoder = random:0\nbatch_size = 1\nresize_short = 32\ncrop = 32\n"
                                   << "max_steps = 1\n";
    EXPECT_EQ(run_cli({"train", "--config", (dir / "toy.cfg").string()}), cli::kExitOk);
    EXPECT_TRUE(fs::exists(checkpoint_path(dir / "run", 0)));
    EXPECT_TRUE(fs::exists(checkpoint_path(dir / "run", 1)));

    EXPECT_EQ(run_cli({"train", "--config", (dir / "toy.cfg").string(), "--output-dir", (dir / "zero").string(),
                       "--max-steps", "0"}),
              cli::kExitOk);
    int count = 0;
    for (const auto& e : fs::directory_iterator(dir / "zero")) count += e.path().extension() == ".smx";
    EXPECT_EQ(count, 1);

    EXPECT_EQ(run_cli({"train", "--content-dir", (dir / "nope").string(), "--style-dir", (dir / "style").string(),
                       "--encoder", "random:0"}),
              cli::kExitFailure);
}

TEST(CliInitEncoder, WritesLoadableWeights) {
    auto dir = fixtures::scratch_dir("cli_init");
    ASSERT_EQ(run_cli({"init-encoder", "--out", (dir / "vgg.smx").string(), "--seed", "4"}), cli::kExitOk);
    auto enc = load_encoder(dir / "vgg.smx");
    EXPECT_EQ(parameter_checksum(*enc), parameter_checksum(*random_encoder(4)));
}
