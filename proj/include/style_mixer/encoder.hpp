#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

struct VggConvSpec {
    const char* name;
    int in_channels;
    int out_channels;
};

/// VGG-19 convolutions up to conv5_1, in forward order.
inline constexpr std::array<VggConvSpec, 13> kVggConvs = {{
    {"conv1_1", 3, 64},    {"conv1_2", 64, 64},   {"conv2_1", 64, 128},  {"conv2_2", 128, 128},
    {"conv3_1", 128, 256}, {"conv3_2", 256, 256}, {"conv3_3", 256, 256}, {"conv3_4", 256, 256},
    {"conv4_1", 256, 512}, {"conv4_2", 512, 512}, {"conv4_3", 512, 512}, {"conv4_4", 512, 512},
    {"conv5_1", 512, 512},
}};

/// Frozen VGG-19 feature extractor (zero-padded 3x3 convs, ReLU, 2x2 max-pool).
///
/// Inputs are RGB images in [0, 1]; ImageNet mean/std normalization happens
/// inside forward(). All parameters have requires_grad == false.
class VggEncoderImpl : public torch::nn::Module {
public:
    VggEncoderImpl();

    /// Runs the network up to `deepest` and returns every relu*_1 activation
    /// on the way. Performs no input validation; see encode().
    MultiLevelFeatures forward(const torch::Tensor& images, Layer deepest = Layer::Relu5_1);

    torch::nn::Conv2d conv(std::size_t index) const { return convs_.at(index); }

private:
    std::vector<torch::nn::Conv2d> convs_;
    torch::Tensor mean_;
    torch::Tensor std_;
};
TORCH_MODULE(VggEncoder);

/// Loads weights stored as `convX_Y.weight` (out x in x 3 x 3) and
/// `convX_Y.bias` (out) arrays. Throws ArchiveError for a missing file and
/// ShapeError naming the first missing or mis-shaped array.
VggEncoder load_encoder(const std::filesystem::path& weights_path);

void save_encoder(const std::filesystem::path& path, VggEncoder& encoder);

/// He-initialized encoder with a fixed seed. Used where pretrained weights
/// are unavailable (tests, smoke runs); produces the same tensors every call.
VggEncoder random_encoder(uint64_t seed = 0);

/// Validates the image batch (Nx3xHxW or 3xHxW) and extracts all five
/// relu*_1 features. Output spatial sizes are floor(H / 2^k), floor(W / 2^k).
MultiLevelFeatures encode(const torch::Tensor& images, VggEncoder& encoder);

/// Order-sensitive 64-bit FNV-1a hash over every parameter byte.
uint64_t parameter_checksum(const torch::nn::Module& module);

/// Looks for the default encoder weights: $STYLE_MIXER_CACHE/vgg19_encoder.smx,
/// else ~/.cache/style_mixer/vgg19_encoder.smx.
std::filesystem::path default_encoder_path();

}  // namespace style_mixer
