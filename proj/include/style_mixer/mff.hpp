#pragma once

#include <vector>

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

/// Squeeze-and-excitation gate: spatial mean -> FC -> ReLU -> FC -> sigmoid.
class ChannelAttentionImpl : public torch::nn::Module {
public:
    ChannelAttentionImpl(int64_t channels, int64_t reduction);

    /// N x C gate values in (0, 1).
    torch::Tensor gate(const torch::Tensor& features);
    /// features * gate, broadcast over space.
    torch::Tensor forward(const torch::Tensor& features);

    torch::nn::Linear reduce{nullptr};
    torch::nn::Linear expand{nullptr};
};
TORCH_MODULE(ChannelAttention);

struct MffOptions {
    /// Layers that feed the fusion, in concat order. Must contain at least one
    /// of relu3_1, relu4_1, relu5_1.
    std::vector<Layer> layers = {Layer::Relu3_1, Layer::Relu4_1, Layer::Relu5_1};
    int64_t recalib_channels = 256;
    int64_t out_channels = 512;
    int64_t se_ratio = 16;
    /// Input widths override; zero means "use the VGG-19 channel count".
    std::vector<int64_t> in_channels;
};

/// Multi-level feature fusion:
///   1x1 recalibration per layer -> bilinear resize to relu4_1 size ->
///   concat -> channel attention -> reflection-padded 3x3 smoothing.
class MffImpl : public torch::nn::Module {
public:
    explicit MffImpl(MffOptions options = {});

    /// Returns N x out_channels x H4 x W4 where H4 x W4 is the relu4_1 size.
    torch::Tensor forward(const MultiLevelFeatures& features);

    const MffOptions& options() const { return options_; }

    std::vector<torch::nn::Conv2d> recalib;
    ChannelAttention se{nullptr};
    torch::nn::Conv2d smooth{nullptr};

private:
    MffOptions options_;
};
TORCH_MODULE(Mff);

/// Per-channel gate from the fusion module's channel attention.
torch::Tensor se_gate(const torch::Tensor& features, Mff& params);

/// Convenience wrapper over Mff::forward.
torch::Tensor mff_fuse(const MultiLevelFeatures& features, Mff& params);

}  // namespace style_mixer
