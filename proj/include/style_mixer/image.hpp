#pragma once

#include <filesystem>
#include <random>

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

class ImageError : public Error {
public:
    using Error::Error;
};

inline constexpr int kMinImageSide = 32;

// Images are float32 tensors of shape 3 x H x W (RGB, values in [0, 1]).
// Batched model inputs add a leading N dimension.

/// Decodes a PNG or JPEG file. Throws ImageError if the file is unreadable.
torch::Tensor load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. Values are clamped to [0, 1] and rounded.
void save_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Checks the image invariants: 3 channels, both sides >= 32, all values
/// finite and inside [0, 1]. Accepts 3xHxW or Nx3xHxW.
void validate_image(const torch::Tensor& image);

/// Bilinear (area when shrinking) resize to exactly height x width.
torch::Tensor resize_image(const torch::Tensor& image, int64_t height, int64_t width);

/// Scales so the shorter side equals `short_side`, preserving aspect ratio.
torch::Tensor resize_short_side(const torch::Tensor& image, int64_t short_side);

/// Crops a size x size window at a position drawn from `rng`.
torch::Tensor random_crop(const torch::Tensor& image, int64_t size, std::mt19937_64& rng);

/// Rounds both sides down to a multiple of `stride` and resizes if needed.
torch::Tensor fit_to_stride(const torch::Tensor& image, int64_t stride);

/// Peak signal-to-noise ratio in dB for images in [0, 1].
double psnr(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace style_mixer
