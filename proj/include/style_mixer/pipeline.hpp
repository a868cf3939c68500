#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "style_mixer/model.hpp"
#include "style_mixer/style_fusion.hpp"

namespace style_mixer {

/// Inference resolution rule: both sides rounded down to a multiple of 16.
inline constexpr int64_t kEncoderStride = 16;

struct MstOptions {
    FusionStrategy strategy = FusionStrategy::Region;
    KMeansOptions kmeans;
};

struct MstResult {
    torch::Tensor image;                    ///< 3 x H x W in [0, 1]
    torch::Tensor style_map;                ///< H4 x W4 style index per feature position
    std::vector<torch::Tensor> confidences; ///< per style, H4 x W4
    std::optional<RegionLabeling> regions;  ///< region strategy only
    std::optional<StyleAssignment> assignment;
};

/// Single-style transfer on 3 x H x W images. Both inputs are first resized
/// to stride-aligned sizes. Returns the clamped 3 x H' x W' result.
torch::Tensor run_sst(StyleMixer& model, const torch::Tensor& content, const torch::Tensor& style);

/// Multi-style transfer. The content is encoded once; each style runs its
/// own fusion + patch attention pass; the reassembled features are combined
/// by region (or per-position) argmax of confidence and decoded once.
MstResult run_mst(StyleMixer& model, const torch::Tensor& content, const std::vector<torch::Tensor>& styles,
                  const MstOptions& options);

/// Colour-coded label map (one fixed colour per region id) upscaled with
/// nearest neighbour to height x width; written as PNG.
void save_region_map(const std::filesystem::path& path, const torch::Tensor& labels, int64_t height, int64_t width);

/// Plain-text table: one line per region with its size, assigned style, and
/// per-style confidence sums.
std::string format_assignment_table(const RegionLabeling& regions, const StyleAssignment& assignment,
                                    const std::vector<std::string>& style_names);

}  // namespace style_mixer
