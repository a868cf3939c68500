#include "style_mixer/model.hpp"

#include <limits>
#include <sstream>

#include "style_mixer/archive.hpp"

namespace style_mixer {
namespace {

std::string exact_string(double v) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << v;
    return os.str();
}

ModelConfig config_from_block(const std::map<std::string, std::string>& block, const std::string& source) {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = block.find(key);
        if (it == block.end()) throw Error(source + ": checkpoint config is missing '" + key + "'");
        return it->second;
    };
    ModelConfig cfg;
    try {
        cfg.mff.layers = parse_layer_list(get("mff.layers"));
        cfg.mff.se_ratio = std::stoll(get("mff.se_ratio"));
        cfg.mff.recalib_channels = std::stoll(get("mff.recalib_channels"));
        cfg.mff.out_channels = std::stoll(get("mff.out_channels"));
        cfg.pa.patch_size = std::stoll(get("pa.patch_size"));
        cfg.pa.norm_eps = std::stod(get("pa.norm_eps"));
        cfg.pa.channels = cfg.mff.out_channels;
    } catch (const std::invalid_argument&) {
        throw Error(source + ": malformed checkpoint config value");
    }
    return cfg;
}

}  // namespace

StyleMixerImpl::StyleMixerImpl(ModelConfig config, VggEncoder encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
    if (config_.pa.channels != vgg_channels(Layer::Relu4_1))
        throw Error("patch attention operates on relu4_1 features and needs 512 channels");
    mff = register_module("mff", Mff(config_.mff));
    pa = register_module("pa", PatchAttention(config_.pa));
    decoder = register_module("decoder", Decoder(config_.mff.out_channels));
    amplifier = register_module("amplifier", Amplifier(config_.amplifier_init));
}

std::pair<torch::Tensor, Correspondence> StyleMixerImpl::reassemble_style(const torch::Tensor& content_relu4,
                                                                          const MultiLevelFeatures& style_feats) {
    auto style_fused = mff->forward(style_feats);
    auto corr = pa->scores(content_relu4, style_feats.at(Layer::Relu4_1));
    auto out = pa->reassemble(corr.attention, style_fused, content_relu4.size(-2), content_relu4.size(-1));
    return {out, corr};
}

StylizeResult StyleMixerImpl::stylize(const MultiLevelFeatures& content_feats, const MultiLevelFeatures& style_feats) {
    StylizeResult r;
    r.content_fused = mff->forward(content_feats);
    std::tie(r.reassembled, r.correspondence) = reassemble_style(content_feats.at(Layer::Relu4_1), style_feats);
    r.image = decoder->forward(merge(r.content_fused, r.reassembled));
    return r;
}

torch::Tensor StyleMixerImpl::reconstruct(const MultiLevelFeatures& feats) {
    auto [reassembled, corr] = reassemble_style(feats.at(Layer::Relu4_1), feats);
    return decoder->forward(amplifier->forward(reassembled));
}

StyleMixer make_model(const ModelConfig& config, VggEncoder encoder, uint64_t seed) {
    torch::manual_seed(seed);
    return StyleMixer(config, std::move(encoder));
}

std::map<std::string, std::string> model_config_block(StyleMixer& model) {
    const auto& cfg = model->config();
    return {
        {"kind", "style_mixer"},
        {"mff.layers", format_layer_list(cfg.mff.layers)},
        {"mff.se_ratio", std::to_string(cfg.mff.se_ratio)},
        {"mff.recalib_channels", std::to_string(cfg.mff.recalib_channels)},
        {"mff.out_channels", std::to_string(cfg.mff.out_channels)},
        {"pa.patch_size", std::to_string(cfg.pa.patch_size)},
        {"pa.norm_eps", exact_string(cfg.pa.norm_eps)},
        {"encoder.checksum", std::to_string(parameter_checksum(*model->encoder()))},
    };
}

void save_checkpoint(const std::filesystem::path& path, StyleMixer& model,
                     const std::map<std::string, std::string>& extra_config) {
    Archive archive;
    archive.config = model_config_block(model);
    for (const auto& [k, v] : extra_config) archive.config[k] = v;
    for (const auto& item : model->named_parameters()) archive.add(item.key(), item.value());
    write_archive(path, archive);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    const Archive archive = read_archive(path);
    return config_from_block(archive.config, path.string());
}

StyleMixer load_checkpoint(const std::filesystem::path& path, VggEncoder encoder) {
    const Archive archive = read_archive(path);
    const ModelConfig cfg = config_from_block(archive.config, path.string());
    if (auto it = archive.config.find("encoder.checksum"); it != archive.config.end()) {
        const auto actual = std::to_string(parameter_checksum(*encoder));
        if (it->second != actual)
            throw Error(path.string() + ": checkpoint was trained with a different encoder (checksum " + it->second +
                        ", loaded encoder " + actual + ")");
    }
    StyleMixer model(cfg, std::move(encoder));
    torch::NoGradGuard no_grad;
    for (auto& item : model->named_parameters()) {
        const NamedArray* found = archive.find(item.key());
        if (!found) {
            throw ShapeError(path.string() + ": array " + item.key() + " expected shape " +
                             shape_string(item.value().sizes()) + ", actual " +
                             (archive.truncated_at ? "missing (file truncated)" : "missing"));
        }
        if (found->data.sizes() != item.value().sizes()) {
            throw ShapeError(path.string() + ": array " + item.key() + " expected shape " +
                             shape_string(item.value().sizes()) + ", actual " + shape_string(found->data.sizes()));
        }
        if (!torch::isfinite(found->data).all().item<bool>())
            throw ShapeError(path.string() + ": array " + item.key() + " contains non-finite values");
        item.value().copy_(found->data.to(item.value().scalar_type()));
    }
    return model;
}

}  // namespace style_mixer
