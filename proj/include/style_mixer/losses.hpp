#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "style_mixer/common.hpp"
#include "style_mixer/encoder.hpp"

namespace style_mixer {

/// Raised when a loss term is NaN or infinite. `term` names the offender.
class NonFiniteLoss : public NonFiniteError {
public:
    NonFiniteLoss(std::string term, double value);
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

struct LossConfig {
    double lambda_content = 3.0;
    double lambda_style = 3.0;
    double lambda_contextual = 3.0;
    double lambda_identity1 = 1.0;
    double lambda_identity2 = 50.0;
    /// Contextual-loss bandwidth.
    double bandwidth = 0.1;
    /// Guard for channel normalization, std, and the min-distance ratio.
    double eps = 1e-5;
    std::vector<Layer> content_layers = {Layer::Relu3_1, Layer::Relu4_1, Layer::Relu5_1};
    std::vector<Layer> contextual_layers = {Layer::Relu2_1, Layer::Relu3_1, Layer::Relu4_1};
    std::vector<Layer> style_layers = {Layer::Relu1_1, Layer::Relu2_1, Layer::Relu3_1, Layer::Relu4_1,
                                       Layer::Relu5_1};

    /// Throws Error if a weight is negative or the bandwidth is not positive.
    void validate() const;
};

// Reduction convention for every squared-error term below: mean over all
// elements (batch, channels and positions) of one layer, then sum over layers.

/// Sum over content layers of MSE between channel-standardized features:
/// (x - mean) / max(std, eps) per channel over positions, so the loss is exactly
/// invariant to positive per-channel affine maps of either argument.
torch::Tensor content_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& content, const LossConfig& cfg);

/// Sum over style layers of MSE(mean) + MSE(std), statistics per channel over
/// positions; std = sqrt(population variance + eps).
torch::Tensor style_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& style, const LossConfig& cfg);

/// One layer of the contextual loss, averaged over the batch:
///   d_ij    = 1 - cos(x_i, y_j)
///   dbar_ij = d_ij / (min_k d_ik + eps)
///   A_ij    = softmax_j((1 - dbar_ij) / bandwidth)
///   loss    = -log(mean_i max_j A_ij)
/// x, y are N x C x H x W (positions may differ between x and y).
torch::Tensor contextual_loss_layer(const torch::Tensor& synth, const torch::Tensor& style, double bandwidth,
                                    double eps);

/// Sum of contextual_loss_layer over the configured layers.
torch::Tensor contextual_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& style, const LossConfig& cfg);

/// (identity1, identity2):
///   identity1 = MSE(I_cc, I_c) + MSE(I_ss, I_s) over pixels
///   identity2 = sum over relu1_1..relu5_1 of MSE of features for both pairs
std::pair<torch::Tensor, torch::Tensor> identity_loss(const torch::Tensor& i_cc, const torch::Tensor& i_c,
                                                      const torch::Tensor& i_ss, const torch::Tensor& i_s,
                                                      VggEncoder& encoder, const LossConfig& cfg);

/// Same as above with the reference images' features already extracted.
std::pair<torch::Tensor, torch::Tensor> identity_loss(const torch::Tensor& i_cc, const torch::Tensor& i_c,
                                                      const MultiLevelFeatures& feats_c, const torch::Tensor& i_ss,
                                                      const torch::Tensor& i_s, const MultiLevelFeatures& feats_s,
                                                      VggEncoder& encoder);

/// Unweighted loss terms (scalar tensors, possibly carrying autograd history).
struct LossParts {
    torch::Tensor content;
    torch::Tensor style;
    torch::Tensor contextual;
    torch::Tensor identity1;
    torch::Tensor identity2;
};

struct LossBreakdown {
    double total = 0.0;
    double content = 0.0;
    double style = 0.0;
    double contextual = 0.0;
    double identity1 = 0.0;
    double identity2 = 0.0;
};

/// total = l_c*content + l_s*style + (l_id1*identity1 + l_id2*identity2) + l_cx*contextual.
/// Throws NonFiniteLoss naming the first non-finite term.
LossBreakdown total_loss(const LossBreakdown& parts, const LossConfig& cfg);

/// Differentiable weighted total. Checks finiteness of each term first and
/// throws NonFiniteLoss naming the offender.
torch::Tensor weighted_total(const LossParts& parts, const LossConfig& cfg, LossBreakdown* breakdown = nullptr);

}  // namespace style_mixer
