#include "style_mixer/encoder.hpp"

#include <cmath>
#include <cstdlib>

#include "style_mixer/archive.hpp"
#include "style_mixer/image.hpp"

namespace style_mixer {
namespace {

namespace F = torch::nn::functional;

// relu*_1 follows conv1_1, conv2_1, conv3_1, conv4_1, conv5_1.
constexpr std::array<std::size_t, 5> kReluIndex = {0, 2, 4, 8, 12};

bool pools_before(std::size_t conv_index) {
    return conv_index == 2 || conv_index == 4 || conv_index == 8 || conv_index == 12;
}

}  // namespace

VggEncoderImpl::VggEncoderImpl() {
    for (const auto& spec : kVggConvs) {
        auto conv = torch::nn::Conv2d(
            torch::nn::Conv2dOptions(spec.in_channels, spec.out_channels, 3).padding(1).padding_mode(torch::kZeros));
        convs_.push_back(register_module(spec.name, conv));
    }
    mean_ = register_buffer("mean", torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1}));
    std_ = register_buffer("std", torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1}));
    for (auto& p : parameters()) p.set_requires_grad(false);
}

MultiLevelFeatures VggEncoderImpl::forward(const torch::Tensor& images, Layer deepest) {
    auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
    x = (x - mean_) / std_;
    MultiLevelFeatures out;
    std::size_t next_relu = 0;
    const auto last = kReluIndex[static_cast<std::size_t>(deepest)];
    for (std::size_t i = 0; i <= last; ++i) {
        if (pools_before(i)) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
        x = torch::relu(convs_[i]->forward(x));
        if (next_relu < kReluIndex.size() && kReluIndex[next_relu] == i) {
            out.set(kAllLayers[next_relu], x);
            ++next_relu;
        }
    }
    return out;
}

VggEncoder load_encoder(const std::filesystem::path& weights_path) {
    const Archive archive = read_archive(weights_path);
    VggEncoder encoder;
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < kVggConvs.size(); ++i) {
        const auto& spec = kVggConvs[i];
        auto conv = encoder->conv(i);
        const std::pair<std::string, torch::Tensor> slots[] = {
            {std::string(spec.name) + ".weight", conv->weight},
            {std::string(spec.name) + ".bias", conv->bias},
        };
        for (const auto& [name, target] : slots) {
            const NamedArray* found = archive.find(name);
            if (!found) {
                const bool cut = archive.truncated_at.has_value();
                throw ShapeError("encoder weights " + weights_path.string() + ": layer " + name + " expected shape " +
                                 shape_string(target.sizes()) + ", actual " +
                                 (cut ? "missing (file truncated)" : "missing"));
            }
            if (found->data.sizes() != target.sizes()) {
                throw ShapeError("encoder weights " + weights_path.string() + ": layer " + name + " expected shape " +
                                 shape_string(target.sizes()) + ", actual " + shape_string(found->data.sizes()));
            }
            target.copy_(found->data.to(torch::kFloat32));
        }
    }
    return encoder;
}

void save_encoder(const std::filesystem::path& path, VggEncoder& encoder) {
    Archive archive;
    archive.config["kind"] = "vgg19_encoder";
    for (std::size_t i = 0; i < kVggConvs.size(); ++i) {
        auto conv = encoder->conv(i);
        archive.add(std::string(kVggConvs[i].name) + ".weight", conv->weight);
        archive.add(std::string(kVggConvs[i].name) + ".bias", conv->bias);
    }
    write_archive(path, archive);
}

VggEncoder random_encoder(uint64_t seed) {
    VggEncoder encoder;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < kVggConvs.size(); ++i) {
        auto conv = encoder->conv(i);
        const double fan_in = kVggConvs[i].in_channels * 9.0;
        conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
        conv->bias.zero_();
    }
    return encoder;
}

MultiLevelFeatures encode(const torch::Tensor& images, VggEncoder& encoder) {
    validate_image(images);
    return encoder->forward(images);
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : module.parameters()) {
        const auto t = p.detach().to(torch::kCPU).contiguous();
        const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
        for (std::size_t i = 0; i < t.nbytes(); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::filesystem::path default_encoder_path() {
    if (const char* cache = std::getenv("STYLE_MIXER_CACHE"); cache && *cache)
        return std::filesystem::path(cache) / "vgg19_encoder.smx";
    const char* home = std::getenv("HOME");
    return std::filesystem::path(home ? home : ".") / ".cache" / "style_mixer" / "vgg19_encoder.smx";
}

}  // namespace style_mixer
