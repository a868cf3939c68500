#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "style_mixer/config.hpp"
#include "style_mixer/encoder.hpp"
#include "style_mixer/image.hpp"
#include "style_mixer/model.hpp"
#include "style_mixer/pipeline.hpp"
#include "style_mixer/training.hpp"

namespace style_mixer::cli {
namespace {

namespace fs = std::filesystem;

/// Everything an inference command needs, checked before any model loads.
struct RunManifest {
    fs::path content;
    std::vector<fs::path> styles;
    fs::path checkpoint;
    fs::path out;
    std::string encoder;
    std::optional<int64_t> patch_size;
    std::optional<std::string> mff_layers;
    std::string strategy = "region";
    int64_t k = 6;
    double pos_weight = 1.0;
    uint64_t seed = 0;
    bool dump_regions = false;
};

class UsageError : public Error {
public:
    using Error::Error;
};

void validate_paths(const RunManifest& m) {
    auto need_file = [](const fs::path& p, const char* what) {
        if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
    };
    need_file(m.content, "content image");
    for (const auto& s : m.styles) need_file(s, "style image");
    need_file(m.checkpoint, "checkpoint");
    const auto parent = m.out.has_parent_path() ? m.out.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

StyleMixer load_model(const RunManifest& m) {
    const ModelConfig stored = read_checkpoint_config(m.checkpoint);
    if (m.patch_size && *m.patch_size != stored.pa.patch_size)
        throw Error("--patch-size " + std::to_string(*m.patch_size) + " does not match checkpoint patch size " +
                    std::to_string(stored.pa.patch_size));
    if (m.mff_layers && parse_layer_list(*m.mff_layers) != stored.mff.layers)
        throw Error("--mff-layers " + *m.mff_layers + " does not match checkpoint layers " +
                    format_layer_list(stored.mff.layers));
    auto model = load_checkpoint(m.checkpoint, resolve_encoder(m.encoder));
    model->eval();
    return model;
}

void add_model_flags(CLI::App* cmd, RunManifest& m) {
    cmd->add_option("--content", m.content, "Content image (PNG/JPEG)")->required();
    cmd->add_option("--checkpoint", m.checkpoint, "Model checkpoint (.smx)")->required();
    cmd->add_option("--out", m.out, "Output PNG path")->required();
    cmd->add_option("--encoder", m.encoder,
                    "Encoder weights (.smx) or random:<seed>; defaults to $STYLE_MIXER_CACHE/vgg19_encoder.smx");
    cmd->add_option("--patch-size", m.patch_size, "Expected patch size; must match the checkpoint");
    cmd->add_option("--mff-layers", m.mff_layers, "Expected fusion layers; must match the checkpoint");
}

int cmd_sst(const RunManifest& m) {
    validate_paths(m);
    auto model = load_model(m);
    auto image = run_sst(model, load_image(m.content), load_image(m.styles.front()));
    save_png(m.out, image);
    std::cout << "wrote " << m.out.string() << " (" << image.size(2) << "x" << image.size(1) << ")\n";
    return kExitOk;
}

int cmd_mst(const RunManifest& m) {
    validate_paths(m);
    MstOptions opts;
    opts.strategy = parse_strategy(m.strategy);
    opts.kmeans.k = m.k;
    opts.kmeans.pos_weight = m.pos_weight;
    opts.kmeans.seed = m.seed;

    auto model = load_model(m);
    std::vector<torch::Tensor> styles;
    std::vector<std::string> names;
    for (const auto& s : m.styles) {
        styles.push_back(load_image(s));
        names.push_back(s.filename().string());
    }
    auto result = run_mst(model, load_image(m.content), styles, opts);
    save_png(m.out, result.image);
    std::cout << "wrote " << m.out.string() << '\n';

    if (m.dump_regions) {
        const auto stem = m.out.parent_path() / m.out.stem();
        const auto map_path = fs::path(stem.string() + "_regions.png");
        const auto table_path = fs::path(stem.string() + "_regions.txt");
        const auto& labels = result.regions ? result.regions->labels : result.style_map;
        save_region_map(map_path, labels, result.image.size(1), result.image.size(2));
        std::ofstream table(table_path);
        if (result.regions) {
            table << format_assignment_table(*result.regions, *result.assignment, names);
        } else {
            table << "# discrete strategy: label map colours are style indices\n";
            for (std::size_t i = 0; i < names.size(); ++i) table << i << '\t' << names[i] << '\n';
        }
        if (!table) throw Error("cannot write " + table_path.string());
        std::cout << "wrote " << map_path.string() << " and " << table_path.string() << '\n';
    }
    return kExitOk;
}

struct TrainArgs {
    std::optional<fs::path> config;
    std::optional<fs::path> content_dir, style_dir, output_dir, resume;
    std::optional<std::string> encoder;
    std::optional<int64_t> max_steps, batch_size, seed;
};

int cmd_train(const TrainArgs& a) {
    if (!a.config && !(a.content_dir && a.style_dir))
        throw UsageError("train needs --config or both --content-dir and --style-dir");
    KeyValueConfig kv = a.config ? KeyValueConfig::load(*a.config) : KeyValueConfig{};
    if (a.content_dir) kv.set("content_dir", a.content_dir->string());
    if (a.style_dir) kv.set("style_dir", a.style_dir->string());
    if (a.output_dir) kv.set("output_dir", a.output_dir->string());
    if (a.resume) kv.set("resume", a.resume->string());
    if (a.encoder) kv.set("encoder", *a.encoder);
    if (a.max_steps) kv.set("max_steps", std::to_string(*a.max_steps));
    if (a.batch_size) kv.set("batch_size", std::to_string(*a.batch_size));
    if (a.seed) kv.set("seed", std::to_string(*a.seed));

    const auto cfg = train_config_from(kv);
    const auto loss_cfg = loss_config_from(kv);
    const auto last = train(cfg, loss_cfg, [](int64_t step, const LossBreakdown& l) {
        if (step % 10 == 0) std::cout << "step " << step << " total " << l.total << '\n';
    });
    std::cout << "checkpoint " << last.string() << '\n';
    return kExitOk;
}

int cmd_init_encoder(const fs::path& out, uint64_t seed) {
    auto encoder = random_encoder(seed);
    save_encoder(out, encoder);
    std::cout << "wrote He-initialized VGG-19 weights (seed " << seed << ") to " << out.string() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Semantic-aware single- and multi-style transfer", args.empty() ? "style_mixer" : args.front()};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train fusion, attention and decoder weights");
    train_cmd->add_option("--config", train_args.config, "Flat key = value training config");
    train_cmd->add_option("--content-dir", train_args.content_dir);
    train_cmd->add_option("--style-dir", train_args.style_dir);
    train_cmd->add_option("--output-dir", train_args.output_dir);
    train_cmd->add_option("--resume", train_args.resume, "Checkpoint to continue from");
    train_cmd->add_option("--encoder", train_args.encoder);
    train_cmd->add_option("--max-steps", train_args.max_steps);
    train_cmd->add_option("--batch-size", train_args.batch_size);
    train_cmd->add_option("--seed", train_args.seed);

    RunManifest sst;
    auto* sst_cmd = app.add_subcommand("sst", "Single-style transfer");
    add_model_flags(sst_cmd, sst);
    sst_cmd->add_option("--style", sst.styles, "Style image")->required()->expected(1);

    RunManifest mst;
    auto* mst_cmd = app.add_subcommand("mst", "Multi-style transfer with region-based fusion");
    add_model_flags(mst_cmd, mst);
    mst_cmd->add_option("--style", mst.styles, "Style image (repeat for each style)")->required();
    mst_cmd->add_option("--k", mst.k, "Number of content regions")->capture_default_str();
    mst_cmd->add_option("--strategy", mst.strategy, "region or discrete")
        ->check(CLI::IsMember({"region", "discrete"}))
        ->capture_default_str();
    mst_cmd->add_option("--pos-weight", mst.pos_weight, "Weight of spatial coordinates in clustering")
        ->capture_default_str();
    mst_cmd->add_option("--seed", mst.seed, "Clustering seed")->capture_default_str();
    mst_cmd->add_flag("--dump-regions", mst.dump_regions, "Also write <out>_regions.png and <out>_regions.txt");

    fs::path encoder_out;
    uint64_t encoder_seed = 0;
    auto* init_cmd = app.add_subcommand("init-encoder", "Write He-initialized VGG-19 weights (no pretraining)");
    init_cmd->add_option("--out", encoder_out)->required();
    init_cmd->add_option("--seed", encoder_seed)->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*train_cmd) return cmd_train(train_args);
        if (*sst_cmd) return cmd_sst(sst);
        if (*mst_cmd) return cmd_mst(mst);
        if (*init_cmd) return cmd_init_encoder(encoder_out, encoder_seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace style_mixer::cli
