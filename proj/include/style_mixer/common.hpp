#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace style_mixer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or counts that disagree with an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or infinity where finite values are required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// The five VGG-19 activations the model consumes.
enum class Layer { Relu1_1 = 0, Relu2_1, Relu3_1, Relu4_1, Relu5_1 };

inline constexpr std::array<Layer, 5> kAllLayers = {
    Layer::Relu1_1, Layer::Relu2_1, Layer::Relu3_1, Layer::Relu4_1, Layer::Relu5_1};

std::string_view layer_name(Layer layer);
/// Parses "relu3_1" style names. Throws Error on unknown names.
Layer parse_layer(std::string_view name);
/// Parses a comma separated list such as "relu3_1,relu4_1".
std::vector<Layer> parse_layer_list(std::string_view list);
std::string format_layer_list(const std::vector<Layer>& layers);

/// Channel count of each layer in stock VGG-19.
int vgg_channels(Layer layer);
/// Spatial downsampling factor of each layer relative to the input image.
int vgg_stride(Layer layer);

/// A batch of activations (N x C x H x W) tagged with the layer it came from.
struct FeatureMap {
    torch::Tensor values;
    Layer layer = Layer::Relu4_1;
};

/// Activations for a subset of the relu*_1 layers of one image batch.
class MultiLevelFeatures {
public:
    bool has(Layer layer) const { return slots_[index(layer)].defined(); }
    /// Throws ShapeError naming the layer when it is absent.
    const torch::Tensor& at(Layer layer) const;
    void set(Layer layer, torch::Tensor values) { slots_[index(layer)] = std::move(values); }
    FeatureMap map(Layer layer) const { return {at(layer), layer}; }

private:
    static std::size_t index(Layer layer) { return static_cast<std::size_t>(layer); }
    std::array<torch::Tensor, 5> slots_;
};

/// Throws NonFiniteError mentioning `what` if `t` holds NaN or infinity.
void check_finite(const torch::Tensor& t, std::string_view what);

std::string shape_string(c10::IntArrayRef sizes);

}  // namespace style_mixer
