#include "style_mixer/decoder.hpp"

namespace style_mixer {
namespace {

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).padding_mode(torch::kReflect));
}

torch::nn::Upsample upsample2x() {
    return torch::nn::Upsample(
        torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

DecoderImpl::DecoderImpl(int64_t in_channels) {
    torch::nn::Sequential s;
    s->push_back(conv3x3(in_channels, 256));
    s->push_back(torch::nn::ReLU());
    s->push_back(upsample2x());
    for (int i = 0; i < 3; ++i) {
        s->push_back(conv3x3(256, 256));
        s->push_back(torch::nn::ReLU());
    }
    s->push_back(conv3x3(256, 128));
    s->push_back(torch::nn::ReLU());
    s->push_back(upsample2x());
    s->push_back(conv3x3(128, 128));
    s->push_back(torch::nn::ReLU());
    s->push_back(conv3x3(128, 64));
    s->push_back(torch::nn::ReLU());
    s->push_back(upsample2x());
    s->push_back(conv3x3(64, 64));
    s->push_back(torch::nn::ReLU());
    s->push_back(conv3x3(64, 3));
    body = register_module("body", s);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& features) {
    return body->forward(features.dim() == 3 ? features.unsqueeze(0) : features);
}

AmplifierImpl::AmplifierImpl(double initial) {
    k = register_parameter("k", torch::full({1}, initial, torch::kFloat32));
}

torch::Tensor merge(const torch::Tensor& content_fused, const torch::Tensor& reassembled_style) {
    if (content_fused.sizes() != reassembled_style.sizes())
        throw ShapeError("cannot merge features of shape " + shape_string(content_fused.sizes()) + " and " +
                         shape_string(reassembled_style.sizes()));
    return content_fused + reassembled_style;
}

torch::Tensor amplify(const torch::Tensor& reassembled_style, const torch::Tensor& k) { return k * reassembled_style; }

torch::Tensor decode(const torch::Tensor& features, Decoder& params) {
    if (features.size(-1) < 2 || features.size(-2) < 2)
        throw ShapeError("decoder input must be at least 2x2, got " + shape_string(features.sizes()));
    check_finite(features, "decoder input");
    return params->forward(features).clamp(0.0, 1.0);
}

}  // namespace style_mixer
