#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "style_mixer/common.hpp"

namespace style_mixer {

enum class FusionStrategy { Region, Discrete };

FusionStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(FusionStrategy strategy);

struct KMeansOptions {
    int64_t k = 6;
    /// Scale of the appended (x / W, y / H) coordinates relative to the
    /// channel-standardized features.
    double pos_weight = 1.0;
    uint64_t seed = 0;
    int max_iterations = 100;
};

/// K-means segmentation of a content feature map.
struct RegionLabeling {
    torch::Tensor labels;     ///< H x W int64 in [0, k)
    int64_t k = 0;
    torch::Tensor centroids;  ///< k x (C + 2) float64, in clustering space
    /// Sum of squared distances to the assigned centroid, recorded after
    /// every assignment step.
    std::vector<double> inertia_history;
    int iterations = 0;

    int64_t height() const { return labels.size(0); }
    int64_t width() const { return labels.size(1); }
};

/// Region id -> style index, plus the per-region confidence sums it came from.
struct StyleAssignment {
    std::vector<int64_t> region_to_style;
    torch::Tensor region_sums;  ///< k x num_styles float64
};

/// Clusters [standardized feature_i ; pos_weight * (x_i / W, y_i / H)] with
/// k-means++ seeding and Lloyd iterations until labels stop changing (or
/// max_iterations). Empty clusters are re-seeded at the point farthest from
/// its centroid. Input is one C x H x W map (a leading batch dim of 1 is
/// accepted). Throws Error when k < 1 or k > H * W.
RegionLabeling cluster_content(const torch::Tensor& content_features, const KMeansOptions& options);

/// I_R = argmax_k sum_{i in R} conf_i^k for every region; ties go to the
/// lowest style index. Each confidence map is H x W.
StyleAssignment assign_styles(const RegionLabeling& regions, const std::vector<torch::Tensor>& confidences);

/// Per-position argmax of confidence across styles, lowest index on ties.
/// Returns H x W int64.
torch::Tensor assign_styles_discrete(const std::vector<torch::Tensor>& confidences);

/// Expands a region assignment to an H x W style-index map.
torch::Tensor style_index_map(const StyleAssignment& assignment, const RegionLabeling& regions);

/// Builds a feature whose position i is copied from reassembled[style_map(i)].
/// Features are C x H x W or 1 x C x H x W; the output matches the input rank.
torch::Tensor compose_by_map(const torch::Tensor& style_map, const std::vector<torch::Tensor>& reassembled);

/// Region-based composition: position i takes the feature of style I_{R(i)}.
torch::Tensor compose_hybrid(const StyleAssignment& assignment, const RegionLabeling& regions,
                             const std::vector<torch::Tensor>& reassembled);

}  // namespace style_mixer
