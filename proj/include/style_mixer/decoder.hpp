#pragma once

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

/// Mirror of VGG-19 from relu4_1 back to RGB: reflection-padded 3x3 convs,
/// nearest-neighbour 2x upsampling between blocks, linear 3-channel output.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(int64_t in_channels = 512);

    /// Unclamped output, N x 3 x 8H x 8W. Training losses consume this.
    torch::Tensor forward(const torch::Tensor& features);

    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Decoder);

/// Learnable scalar k used to merge features in the identity branch.
class AmplifierImpl : public torch::nn::Module {
public:
    explicit AmplifierImpl(double initial = 1.0);
    torch::Tensor forward(const torch::Tensor& reassembled) { return k * reassembled; }

    torch::Tensor k;
};
TORCH_MODULE(Amplifier);

/// Inference merge: content_fused + reassembled_style.
torch::Tensor merge(const torch::Tensor& content_fused, const torch::Tensor& reassembled_style);

/// Identity-branch merge: k * reassembled_style (no content term).
torch::Tensor amplify(const torch::Tensor& reassembled_style, const torch::Tensor& k);

/// Decodes to an image clamped to [0, 1]. Throws on non-finite input or
/// inputs smaller than 2x2.
torch::Tensor decode(const torch::Tensor& features, Decoder& params);

}  // namespace style_mixer
