#include "style_mixer/common.hpp"

#include <sstream>

namespace style_mixer {

std::string_view layer_name(Layer layer) {
    switch (layer) {
        case Layer::Relu1_1: return "relu1_1";
        case Layer::Relu2_1: return "relu2_1";
        case Layer::Relu3_1: return "relu3_1";
        case Layer::Relu4_1: return "relu4_1";
        case Layer::Relu5_1: return "relu5_1";
    }
    return "?";
}

Layer parse_layer(std::string_view name) {
    for (auto l : kAllLayers) {
        if (layer_name(l) == name) return l;
    }
    throw Error("unknown layer name: " + std::string(name));
}

std::vector<Layer> parse_layer_list(std::string_view list) {
    std::vector<Layer> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        auto end = list.find(',', start);
        if (end == std::string_view::npos) end = list.size();
        auto item = list.substr(start, end - start);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) out.push_back(parse_layer(item));
        start = end + 1;
    }
    return out;
}

std::string format_layer_list(const std::vector<Layer>& layers) {
    std::string out;
    for (auto l : layers) {
        if (!out.empty()) out += ',';
        out += layer_name(l);
    }
    return out;
}

int vgg_channels(Layer layer) {
    switch (layer) {
        case Layer::Relu1_1: return 64;
        case Layer::Relu2_1: return 128;
        case Layer::Relu3_1: return 256;
        case Layer::Relu4_1: return 512;
        case Layer::Relu5_1: return 512;
    }
    return 0;
}

int vgg_stride(Layer layer) { return 1 << static_cast<int>(layer); }

const torch::Tensor& MultiLevelFeatures::at(Layer layer) const {
    const auto& t = slots_[index(layer)];
    if (!t.defined()) throw ShapeError("feature set is missing layer " + std::string(layer_name(layer)));
    return t;
}

void check_finite(const torch::Tensor& t, std::string_view what) {
    if (!torch::isfinite(t).all().item<bool>())
        throw NonFiniteError(std::string(what) + " contains non-finite values");
}

std::string shape_string(c10::IntArrayRef sizes) {
    std::ostringstream os;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (i) os << 'x';
        os << sizes[i];
    }
    return os.str();
}

}  // namespace style_mixer
