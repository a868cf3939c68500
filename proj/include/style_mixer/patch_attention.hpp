#pragma once

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

struct PaOptions {
    int64_t channels = 512;
    /// Width of the square neighbourhood compared at each position. Odd.
    int64_t patch_size = 3;
    double norm_eps = 1e-5;
};

/// Per-sample, per-channel standardization over spatial positions:
/// (x - mean) / sqrt(var + eps), population variance. Input N x C x H x W
/// (or C x H x W); output has the input's shape.
torch::Tensor channel_normalize(const torch::Tensor& features, double eps = 1e-5);

/// Patch matrix of a feature map: N x (H*W) x (C*p*p). Row i holds the
/// zero-padded p x p neighbourhood of position i (row-major positions),
/// laid out channel-major then row-major inside the window. p must be odd.
torch::Tensor unfold_patches(const torch::Tensor& features, int64_t patch_size);

/// Raw scores S (N x Nc x Ns) and their row-softmax M.
struct Correspondence {
    torch::Tensor scores;
    torch::Tensor attention;
};

/// Learned similarity kernels (1x1 convs) for content, style and the fused
/// style feature that gets reassembled.
class PatchAttentionImpl : public torch::nn::Module {
public:
    explicit PatchAttentionImpl(PaOptions options = {});

    /// S_ij = <unfold(theta_c(norm(Fc)))_i, unfold(theta_s(norm(Fs)))_j>,
    /// M = softmax over j. Inputs are relu4_1 features.
    Correspondence scores(const torch::Tensor& content, const torch::Tensor& style);

    /// Output position i = sum_j M_ij * theta_fused(style_fused)_j, reshaped
    /// to content_height x content_width.
    torch::Tensor reassemble(const torch::Tensor& attention, const torch::Tensor& style_fused, int64_t content_height,
                             int64_t content_width);

    const PaOptions& options() const { return options_; }

    torch::nn::Conv2d theta_content{nullptr};
    torch::nn::Conv2d theta_style{nullptr};
    torch::nn::Conv2d theta_fused{nullptr};

private:
    PaOptions options_;
};
TORCH_MODULE(PatchAttention);

/// Free-function form of PatchAttention::scores.
Correspondence attention_scores(const torch::Tensor& content, const torch::Tensor& style, PatchAttention& params);

torch::Tensor reassemble(const torch::Tensor& attention, const torch::Tensor& style_fused, int64_t content_height,
                         int64_t content_width, PatchAttention& params);

/// conf_i = sum_j S_ij * M_ij. Returns N x Nc.
torch::Tensor confidence(const torch::Tensor& scores, const torch::Tensor& attention);

}  // namespace style_mixer
