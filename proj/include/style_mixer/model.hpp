#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

#include "style_mixer/decoder.hpp"
#include "style_mixer/encoder.hpp"
#include "style_mixer/mff.hpp"
#include "style_mixer/patch_attention.hpp"

namespace style_mixer {

struct ModelConfig {
    MffOptions mff;
    PaOptions pa;
    double amplifier_init = 1.0;
};

/// Intermediate tensors of one single-style pass.
struct StylizeResult {
    torch::Tensor image;            ///< unclamped decoder output
    torch::Tensor content_fused;    ///< F_c^fused
    torch::Tensor reassembled;      ///< F_s^fused'
    Correspondence correspondence;  ///< S, M between relu4_1 features
};

/// Trainable part of the network: fusion, patch attention, decoder and the
/// amplifier. The frozen encoder is held separately and never registered,
/// so parameters() lists trainable tensors only.
class StyleMixerImpl : public torch::nn::Module {
public:
    StyleMixerImpl(ModelConfig config, VggEncoder encoder);

    /// Style-side half of the pipeline: returns (F_s^fused', S, M) for a
    /// content relu4_1 map and a style feature set.
    std::pair<torch::Tensor, Correspondence> reassemble_style(const torch::Tensor& content_relu4,
                                                              const MultiLevelFeatures& style_feats);

    /// SST forward on pre-extracted features; merge is addition.
    StylizeResult stylize(const MultiLevelFeatures& content_feats, const MultiLevelFeatures& style_feats);

    /// Identity branch: the image is used as both content and style and the
    /// decoder sees amplifier(F^fused') only. Returns the unclamped output.
    torch::Tensor reconstruct(const MultiLevelFeatures& feats);

    const ModelConfig& config() const { return config_; }
    VggEncoder& encoder() { return encoder_; }

    Mff mff{nullptr};
    PatchAttention pa{nullptr};
    Decoder decoder{nullptr};
    Amplifier amplifier{nullptr};

private:
    ModelConfig config_;
    VggEncoder encoder_;
};
TORCH_MODULE(StyleMixer);

/// Builds a model with parameters drawn from `seed`.
StyleMixer make_model(const ModelConfig& config, VggEncoder encoder, uint64_t seed);

/// Config block stored with checkpoints (patch size, MFF layers, widths,
/// encoder checksum).
std::map<std::string, std::string> model_config_block(StyleMixer& model);

/// Writes every trainable parameter plus the config block.
void save_checkpoint(const std::filesystem::path& path, StyleMixer& model,
                     const std::map<std::string, std::string>& extra_config = {});

/// Rebuilds a model from a checkpoint. Throws ShapeError naming the first
/// missing or malformed array, and Error when the checkpoint was trained
/// with a different encoder.
StyleMixer load_checkpoint(const std::filesystem::path& path, VggEncoder encoder);

/// Reads just the model configuration from a checkpoint header.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace style_mixer
