#include "style_mixer/mff.hpp"

#include <algorithm>

namespace style_mixer {
namespace {
namespace F = torch::nn::functional;
}

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction) {
    const int64_t hidden = std::max<int64_t>(1, channels / std::max<int64_t>(1, reduction));
    reduce = register_module("reduce", torch::nn::Linear(channels, hidden));
    expand = register_module("expand", torch::nn::Linear(hidden, channels));
}

torch::Tensor ChannelAttentionImpl::gate(const torch::Tensor& features) {
    auto x = features.dim() == 3 ? features.unsqueeze(0) : features;
    auto squeezed = x.mean({2, 3});
    return torch::sigmoid(expand->forward(torch::relu(reduce->forward(squeezed))));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& features) {
    auto g = gate(features);
    return features * g.unsqueeze(-1).unsqueeze(-1);
}

MffImpl::MffImpl(MffOptions options) : options_(std::move(options)) {
    if (options_.layers.empty()) throw Error("mff.layers must name at least one layer");
    for (auto l : options_.layers) {
        if (l != Layer::Relu3_1 && l != Layer::Relu4_1 && l != Layer::Relu5_1)
            throw Error("mff.layers accepts only relu3_1, relu4_1, relu5_1; got " + std::string(layer_name(l)));
    }
    if (!options_.in_channels.empty() && options_.in_channels.size() != options_.layers.size())
        throw Error("mff in_channels must match the number of layers");

    for (std::size_t i = 0; i < options_.layers.size(); ++i) {
        const auto in = options_.in_channels.empty() || options_.in_channels[i] == 0
                            ? vgg_channels(options_.layers[i])
                            : options_.in_channels[i];
        auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, options_.recalib_channels, 1));
        recalib.push_back(register_module("recalib_" + std::string(layer_name(options_.layers[i])), conv));
    }
    const auto concat = options_.recalib_channels * static_cast<int64_t>(options_.layers.size());
    se = register_module("se", ChannelAttention(concat, options_.se_ratio));
    smooth = register_module(
        "smooth", torch::nn::Conv2d(
                      torch::nn::Conv2dOptions(concat, options_.out_channels, 3).padding(1).padding_mode(torch::kReflect)));
}

torch::Tensor MffImpl::forward(const MultiLevelFeatures& features) {
    const auto& anchor = features.at(Layer::Relu4_1);
    const std::vector<int64_t> size = {anchor.size(-2), anchor.size(-1)};
    std::vector<torch::Tensor> parts;
    parts.reserve(options_.layers.size());
    for (std::size_t i = 0; i < options_.layers.size(); ++i) {
        auto x = features.at(options_.layers[i]);
        if (x.dim() == 3) x = x.unsqueeze(0);
        x = recalib[i]->forward(x);
        if (x.size(-2) != size[0] || x.size(-1) != size[1]) {
            x = F::interpolate(
                x, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
        }
        parts.push_back(x);
    }
    auto fused = parts.size() == 1 ? parts.front() : torch::cat(parts, 1);
    fused = se->forward(fused);
    return smooth->forward(fused);
}

torch::Tensor se_gate(const torch::Tensor& features, Mff& params) {
    check_finite(features, "channel attention input");
    return params->se->gate(features);
}

torch::Tensor mff_fuse(const MultiLevelFeatures& features, Mff& params) { return params->forward(features); }

}  // namespace style_mixer
