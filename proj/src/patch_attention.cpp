#include "style_mixer/patch_attention.hpp"

namespace style_mixer {
namespace {

namespace F = torch::nn::functional;

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

}  // namespace

torch::Tensor channel_normalize(const torch::Tensor& features, double eps) {
    auto x = as_batch(features);
    auto mean = x.mean({2, 3}, /*keepdim=*/true);
    auto var = (x - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
    auto y = (x - mean) / torch::sqrt(var + eps);
    return features.dim() == 3 ? y.squeeze(0) : y;
}

torch::Tensor unfold_patches(const torch::Tensor& features, int64_t patch_size) {
    if (patch_size < 1 || patch_size % 2 == 0)
        throw Error("patch size must be a positive odd integer, got " + std::to_string(patch_size));
    auto x = as_batch(features);
    if (patch_size == 1) return x.flatten(2).transpose(1, 2);
    // N x (C*p*p) x L
    auto cols = F::unfold(x, F::UnfoldFuncOptions(patch_size).padding(patch_size / 2));
    return cols.transpose(1, 2);
}

PatchAttentionImpl::PatchAttentionImpl(PaOptions options) : options_(options) {
    if (options_.patch_size < 1 || options_.patch_size % 2 == 0)
        throw Error("pa.patch_size must be a positive odd integer, got " + std::to_string(options_.patch_size));
    const auto c = options_.channels;
    theta_content = register_module("theta_c", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
    theta_style = register_module("theta_s", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
    theta_fused = register_module("theta_fused", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
}

Correspondence PatchAttentionImpl::scores(const torch::Tensor& content, const torch::Tensor& style) {
    auto fc = as_batch(content);
    auto fs = as_batch(style);
    if (fc.size(1) != options_.channels || fs.size(1) != options_.channels)
        throw ShapeError("patch attention expects " + std::to_string(options_.channels) + " channels, got content " +
                         shape_string(fc.sizes()) + " and style " + shape_string(fs.sizes()));
    if (fc.size(0) != fs.size(0)) throw ShapeError("content and style batch sizes differ");

    auto pc = unfold_patches(theta_content->forward(channel_normalize(fc, options_.norm_eps)), options_.patch_size);
    auto ps = unfold_patches(theta_style->forward(channel_normalize(fs, options_.norm_eps)), options_.patch_size);
    if (pc.size(2) != ps.size(2)) throw ShapeError("projected content and style patch widths differ");

    auto s = torch::bmm(pc, ps.transpose(1, 2));
    return {s, torch::softmax(s, -1)};
}

torch::Tensor PatchAttentionImpl::reassemble(const torch::Tensor& attention, const torch::Tensor& style_fused,
                                             int64_t content_height, int64_t content_width) {
    auto fs = as_batch(style_fused);
    auto m = attention.dim() == 2 ? attention.unsqueeze(0) : attention;
    const auto ns = fs.size(2) * fs.size(3);
    if (m.size(2) != ns)
        throw ShapeError("attention has " + std::to_string(m.size(2)) + " style columns but fused style feature has " +
                         std::to_string(ns) + " positions");
    if (m.size(1) != content_height * content_width)
        throw ShapeError("attention rows do not match content size " + std::to_string(content_height) + "x" +
                         std::to_string(content_width));
    if (m.size(0) != fs.size(0)) throw ShapeError("attention and fused style batch sizes differ");

    // N x Ns x C
    auto values = theta_fused->forward(fs).flatten(2).transpose(1, 2);
    auto out = torch::bmm(m, values);  // N x Nc x C
    return out.transpose(1, 2).reshape({fs.size(0), fs.size(1), content_height, content_width});
}

Correspondence attention_scores(const torch::Tensor& content, const torch::Tensor& style, PatchAttention& params) {
    return params->scores(content, style);
}

torch::Tensor reassemble(const torch::Tensor& attention, const torch::Tensor& style_fused, int64_t content_height,
                         int64_t content_width, PatchAttention& params) {
    return params->reassemble(attention, style_fused, content_height, content_width);
}

torch::Tensor confidence(const torch::Tensor& scores, const torch::Tensor& attention) {
    if (scores.sizes() != attention.sizes())
        throw ShapeError("score matrix " + shape_string(scores.sizes()) + " and attention map " +
                         shape_string(attention.sizes()) + " differ in shape");
    return (scores * attention).sum(-1);
}

}  // namespace style_mixer
