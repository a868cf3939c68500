#include "style_mixer/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "style_mixer/archive.hpp"
#include "style_mixer/image.hpp"

namespace style_mixer {
namespace {

constexpr const char* kOptimPrefix = "optim.";

bool is_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

torch::Tensor sample_image(const std::vector<std::filesystem::path>& paths, const TrainConfig& cfg,
                           std::mt19937_64& rng, const char* role) {
    constexpr int kMaxAttempts = 32;
    std::uniform_int_distribution<std::size_t> pick(0, paths.size() - 1);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const auto& path = paths[pick(rng)];
        torch::Tensor img;
        try {
            img = load_image(path);
        } catch (const ImageError& e) {
            std::cerr << "warning: skipping " << role << " image: " << e.what() << '\n';
            continue;
        }
        if (std::min(img.size(1), img.size(2)) < kMinImageSide) {
            std::cerr << "warning: skipping " << role << " image smaller than " << kMinImageSide
                      << " px: " << path.string() << '\n';
            continue;
        }
        return random_crop(resize_short_side(img, cfg.resize_short), cfg.crop, rng);
    }
    throw Error(std::string("no usable ") + role + " image after " + std::to_string(kMaxAttempts) + " attempts");
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw Error("batch_size must be at least 1");
    if (crop < kMinImageSide) throw Error("crop must be at least 32");
    if (crop > resize_short) throw Error("crop must not exceed resize_short");
    if (!(lr >= 0.0)) throw Error("lr must be non-negative");
    if (max_steps < 0) throw Error("max_steps must be non-negative");
    if (checkpoint_every < 1) throw Error("checkpoint_every must be positive");
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig cfg;
    cfg.content_dir = kv.get_string("content_dir", "");
    cfg.style_dir = kv.get_string("style_dir", "");
    cfg.output_dir = kv.get_string("output_dir", cfg.output_dir.string());
    cfg.encoder = kv.get_string("encoder", "");
    cfg.resume = kv.get_string("resume", "");
    cfg.batch_size = kv.get_int("batch_size", cfg.batch_size);
    cfg.lr = kv.get_double("lr", cfg.lr);
    cfg.resize_short = kv.get_int("resize_short", cfg.resize_short);
    cfg.crop = kv.get_int("crop", cfg.crop);
    cfg.max_steps = kv.get_int("max_steps", cfg.max_steps);
    cfg.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
    cfg.checkpoint_every = kv.get_int("checkpoint_every", cfg.checkpoint_every);
    cfg.model.pa.patch_size = kv.get_int("pa.patch_size", cfg.model.pa.patch_size);
    cfg.model.pa.norm_eps = kv.get_double("pa.norm_eps", cfg.model.pa.norm_eps);
    if (kv.has("mff.layers")) cfg.model.mff.layers = parse_layer_list(kv.get_string("mff.layers", ""));
    cfg.model.mff.se_ratio = kv.get_int("mff.se_ratio", cfg.model.mff.se_ratio);
    return cfg;
}

LossConfig loss_config_from(const KeyValueConfig& kv) {
    LossConfig cfg;
    cfg.lambda_content = kv.get_double("lambda_c", cfg.lambda_content);
    cfg.lambda_style = kv.get_double("lambda_s", cfg.lambda_style);
    cfg.lambda_contextual = kv.get_double("lambda_cx", cfg.lambda_contextual);
    cfg.lambda_identity1 = kv.get_double("lambda_id1", cfg.lambda_identity1);
    cfg.lambda_identity2 = kv.get_double("lambda_id2", cfg.lambda_identity2);
    cfg.bandwidth = kv.get_double("cx_bandwidth", cfg.bandwidth);
    cfg.eps = kv.get_double("loss_eps", cfg.eps);
    cfg.validate();
    return cfg;
}

VggEncoder resolve_encoder(const std::string& spec) {
    constexpr std::string_view kRandom = "random:";
    if (spec.rfind(kRandom, 0) == 0) {
        try {
            return random_encoder(std::stoull(spec.substr(kRandom.size())));
        } catch (const std::invalid_argument&) {
            throw Error("bad encoder spec: " + spec);
        }
    }
    return load_encoder(spec.empty() ? default_encoder_path() : std::filesystem::path(spec));
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Batch prepare_batch(const std::vector<std::filesystem::path>& content_paths,
                    const std::vector<std::filesystem::path>& style_paths, const TrainConfig& cfg,
                    std::mt19937_64& rng) {
    if (content_paths.empty() || style_paths.empty()) throw Error("dataset is empty");
    std::vector<torch::Tensor> content, style;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
        content.push_back(sample_image(content_paths, cfg, rng, "content"));
        style.push_back(sample_image(style_paths, cfg, rng, "style"));
    }
    return {torch::stack(content), torch::stack(style)};
}

TrainState make_train_state(const ModelConfig& model_cfg, VggEncoder encoder, double lr, uint64_t seed) {
    TrainState state;
    state.model = make_model(model_cfg, std::move(encoder), seed);
    state.optimizer =
        std::make_unique<torch::optim::Adam>(state.model->parameters(), torch::optim::AdamOptions(lr));
    state.rng.seed(seed);
    return state;
}

LossBreakdown train_step(TrainState& state, const Batch& batch, const LossConfig& loss_cfg) {
    // Self-attention in the identity branch is nearly one-hot, and its
    // backward pass multiplies long runs of subnormal floats, which is
    // several times slower on x86. Flush them for the duration of the step.
    struct FlushDenormals {
        FlushDenormals() { at::globalContext().setFlushDenormal(true); }
        ~FlushDenormals() { at::globalContext().setFlushDenormal(false); }
    } flush_guard;

    auto& model = state.model;
    auto& encoder = model->encoder();
    model->train();

    MultiLevelFeatures content_feats, style_feats;
    {
        torch::NoGradGuard no_grad;
        content_feats = encoder->forward(batch.content);
        style_feats = encoder->forward(batch.style);
    }

    // The stylization and identity graphs are built and released one after
    // the other; gradients accumulate, so the update equals a single
    // backward pass over the summed objective.
    state.optimizer->zero_grad();
    LossParts parts;
    torch::Tensor stylization_total;
    {
        auto result = model->stylize(content_feats, style_feats);
        auto synth_feats = encoder->forward(result.image);
        parts.content = content_loss(synth_feats, content_feats, loss_cfg);
        parts.style = style_loss(synth_feats, style_feats, loss_cfg);
        parts.contextual = contextual_loss(synth_feats, style_feats, loss_cfg);
        const std::pair<const char*, torch::Tensor*> terms[] = {
            {"content", &parts.content}, {"style", &parts.style}, {"contextual", &parts.contextual}};
        for (const auto& [name, t] : terms) {
            const double v = t->item<double>();
            if (!std::isfinite(v)) throw NonFiniteLoss(name, v);
        }
        stylization_total = loss_cfg.lambda_content * parts.content + loss_cfg.lambda_style * parts.style +
                            loss_cfg.lambda_contextual * parts.contextual;
        stylization_total.backward();
    }
    {
        auto i_cc = model->reconstruct(content_feats);
        auto i_ss = model->reconstruct(style_feats);
        std::tie(parts.identity1, parts.identity2) =
            identity_loss(i_cc, batch.content, content_feats, i_ss, batch.style, style_feats, encoder);
        for (const auto& [name, t] :
             {std::pair{"identity1", parts.identity1}, std::pair{"identity2", parts.identity2}}) {
            const double v = t.item<double>();
            if (!std::isfinite(v)) {
                state.optimizer->zero_grad();
                throw NonFiniteLoss(name, v);
            }
        }
        auto identity_total =
            loss_cfg.lambda_identity1 * parts.identity1 + loss_cfg.lambda_identity2 * parts.identity2;
        identity_total.backward();
    }

    LossBreakdown breakdown;
    breakdown.content = parts.content.item<double>();
    breakdown.style = parts.style.item<double>();
    breakdown.contextual = parts.contextual.item<double>();
    breakdown.identity1 = parts.identity1.item<double>();
    breakdown.identity2 = parts.identity2.item<double>();
    breakdown = total_loss(breakdown, loss_cfg);

    state.optimizer->step();
    ++state.step;
    return breakdown;
}

void save_train_state(const std::filesystem::path& path, TrainState& state) {
    Archive archive;
    archive.config = model_config_block(state.model);
    archive.config["train.step"] = std::to_string(state.step);
    archive.config["train.rng"] = rng_to_string(state.rng);
    for (const auto& item : state.model->named_parameters()) archive.add(item.key(), item.value());

    auto& opt_state = state.optimizer->state();
    for (const auto& item : state.model->named_parameters()) {
        auto it = opt_state.find(item.value().unsafeGetTensorImpl());
        if (it == opt_state.end()) continue;
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        archive.add(std::string(kOptimPrefix) + "exp_avg." + item.key(), s.exp_avg());
        archive.add(std::string(kOptimPrefix) + "exp_avg_sq." + item.key(), s.exp_avg_sq());
        archive.add(std::string(kOptimPrefix) + "step." + item.key(), torch::tensor({s.step()}, torch::kInt64));
    }
    write_archive(path, archive);
}

TrainState load_train_state(const std::filesystem::path& path, VggEncoder encoder, double lr) {
    TrainState state;
    state.model = load_checkpoint(path, std::move(encoder));
    state.optimizer =
        std::make_unique<torch::optim::Adam>(state.model->parameters(), torch::optim::AdamOptions(lr));

    const Archive archive = read_archive(path);
    auto cfg_value = [&](const std::string& key) {
        auto it = archive.config.find(key);
        if (it == archive.config.end()) throw Error(path.string() + ": not a training checkpoint (missing " + key + ")");
        return it->second;
    };
    state.step = std::stoll(cfg_value("train.step"));
    std::istringstream rng_in(cfg_value("train.rng"));
    rng_in >> state.rng;
    if (!rng_in) throw Error(path.string() + ": malformed RNG state");

    auto& opt_state = state.optimizer->state();
    for (const auto& item : state.model->named_parameters()) {
        const auto* m = archive.find(std::string(kOptimPrefix) + "exp_avg." + item.key());
        const auto* v = archive.find(std::string(kOptimPrefix) + "exp_avg_sq." + item.key());
        const auto* s = archive.find(std::string(kOptimPrefix) + "step." + item.key());
        if (!m && !v && !s) continue;
        if (!m || !v || !s || m->data.sizes() != item.value().sizes() || v->data.sizes() != item.value().sizes())
            throw ShapeError(path.string() + ": optimizer state for " + item.key() + " is malformed");
        auto ps = std::make_unique<torch::optim::AdamParamState>();
        ps->step(s->data.item<int64_t>());
        ps->exp_avg(m->data.clone());
        ps->exp_avg_sq(v->data.clone());
        opt_state[item.value().unsafeGetTensorImpl()] = std::move(ps);
    }
    return state;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int64_t step) {
    std::ostringstream name;
    name << "checkpoint_" << std::setw(8) << std::setfill('0') << step << ".smx";
    return dir / name.str();
}

std::filesystem::path train(const TrainConfig& cfg, const LossConfig& loss_cfg, const StepCallback& on_step) {
    cfg.validate();
    loss_cfg.validate();
    const auto content_paths = list_images(cfg.content_dir);
    const auto style_paths = list_images(cfg.style_dir);
    if (content_paths.empty()) throw Error("content dataset is empty: " + cfg.content_dir.string());
    if (style_paths.empty()) throw Error("style dataset is empty: " + cfg.style_dir.string());

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw Error("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());

    auto encoder = resolve_encoder(cfg.encoder);
    const bool resuming = !cfg.resume.empty();
    TrainState state = resuming ? load_train_state(cfg.resume, encoder, cfg.lr)
                                : make_train_state(cfg.model, encoder, cfg.lr, cfg.seed);

    std::filesystem::path last;
    if (!resuming) {
        last = checkpoint_path(cfg.output_dir, state.step);
        save_train_state(last, state);
    }

    const auto log_path = cfg.output_dir / "loss.csv";
    const bool fresh_log = !resuming || !std::filesystem::exists(log_path);
    std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
    if (!log) throw Error("cannot write loss log: " + log_path.string());
    if (fresh_log) log << "step,total,content,style,contextual,identity1,identity2\n";
    log << std::setprecision(9);

    while (state.step < cfg.max_steps) {
        auto batch = prepare_batch(content_paths, style_paths, cfg, state.rng);
        const auto losses = train_step(state, batch, loss_cfg);
        log << state.step << ',' << losses.total << ',' << losses.content << ',' << losses.style << ','
            << losses.contextual << ',' << losses.identity1 << ',' << losses.identity2 << '\n';
        log.flush();
        if (!log) throw Error("disk write failed: " + log_path.string());
        if (on_step) on_step(state.step, losses);
        if (state.step % cfg.checkpoint_every == 0 || state.step == cfg.max_steps) {
            last = checkpoint_path(cfg.output_dir, state.step);
            save_train_state(last, state);
        }
    }
    if (last.empty()) {
        last = checkpoint_path(cfg.output_dir, state.step);
        save_train_state(last, state);
    }
    return last;
}

}  // namespace style_mixer
