#include "style_mixer/style_fusion.hpp"

#include <limits>
#include <random>

#include "style_mixer/patch_attention.hpp"

namespace style_mixer {
namespace {

torch::Tensor single_map(const torch::Tensor& t, std::string_view what) {
    auto x = t;
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw ShapeError(std::string(what) + " must hold a single image");
        x = x.squeeze(0);
    }
    if (x.dim() != 3) throw ShapeError(std::string(what) + " must be C x H x W, got " + shape_string(t.sizes()));
    return x;
}

torch::Tensor as_grid(const torch::Tensor& conf, int64_t h, int64_t w) {
    auto c = conf.detach().to(torch::kCPU, torch::kFloat64);
    if (c.numel() != h * w)
        throw ShapeError("confidence map " + shape_string(conf.sizes()) + " does not match a " + std::to_string(h) +
                         "x" + std::to_string(w) + " grid");
    return c.reshape({h, w}).contiguous();
}

double sq_dist(const double* a, const double* b, int64_t d) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

}  // namespace

FusionStrategy parse_strategy(std::string_view name) {
    if (name == "region") return FusionStrategy::Region;
    if (name == "discrete") return FusionStrategy::Discrete;
    throw Error("unknown fusion strategy: " + std::string(name) + " (expected region or discrete)");
}

std::string_view strategy_name(FusionStrategy strategy) {
    return strategy == FusionStrategy::Region ? "region" : "discrete";
}

RegionLabeling cluster_content(const torch::Tensor& content_features, const KMeansOptions& options) {
    const auto f = single_map(content_features, "clustering input").detach().to(torch::kCPU, torch::kFloat64);
    const int64_t c = f.size(0), h = f.size(1), w = f.size(2);
    const int64_t n = h * w;
    const int64_t k = options.k;
    if (k < 1) throw Error("cluster count must be at least 1");
    if (k > n)
        throw Error("cluster count " + std::to_string(k) + " exceeds the number of positions " + std::to_string(n));

    // Clustering space: standardized channels plus weighted coordinates.
    const int64_t d = c + 2;
    auto standardized = channel_normalize(f, 1e-5).reshape({c, n}).t().contiguous();
    auto points_t = torch::empty({n, d}, torch::kFloat64);
    points_t.slice(1, 0, c).copy_(standardized);
    auto acc = points_t.accessor<double, 2>();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            acc[y * w + x][c] = options.pos_weight * static_cast<double>(x) / static_cast<double>(w);
            acc[y * w + x][c + 1] = options.pos_weight * static_cast<double>(y) / static_cast<double>(h);
        }
    }
    const double* pts = points_t.data_ptr<double>();
    auto point = [&](int64_t i) { return pts + i * d; };

    std::mt19937_64 rng(options.seed);
    std::vector<double> centroids(static_cast<std::size_t>(k * d));
    auto centroid = [&](int64_t j) { return centroids.data() + j * d; };

    // k-means++ seeding.
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);
    int64_t first = std::uniform_int_distribution<int64_t>(0, n - 1)(rng);
    for (int64_t j = 0; j < k; ++j) {
        int64_t pick = first;
        if (j > 0) {
            double total = 0.0;
            for (int64_t i = 0; i < n; ++i) total += nearest[i];
            if (total > 0.0) {
                double r = std::uniform_real_distribution<double>(0.0, total)(rng);
                pick = -1;
                for (int64_t i = 0; i < n; ++i) {
                    if (nearest[i] <= 0.0) continue;
                    pick = i;
                    r -= nearest[i];
                    if (r < 0.0) break;
                }
            } else {
                // Every remaining point duplicates a chosen centroid.
                pick = -1;
                for (int64_t i = 0; i < n && pick < 0; ++i)
                    if (!chosen[i]) pick = i;
            }
        }
        chosen[pick] = true;
        std::copy(point(pick), point(pick) + d, centroid(j));
        for (int64_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(point(i), centroid(j), d));
    }

    RegionLabeling result;
    result.k = k;
    std::vector<int64_t> labels(static_cast<std::size_t>(n), -1);
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    std::vector<int64_t> counts(static_cast<std::size_t>(k));

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            int64_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < k; ++j) {
                const double dd = sq_dist(point(i), centroid(j), d);
                if (dd < best_d) {
                    best_d = dd;
                    best = j;
                }
            }
            changed = changed || labels[i] != best;
            labels[i] = best;
            dist[i] = best_d;
            inertia += best_d;
        }
        result.inertia_history.push_back(inertia);
        result.iterations = iter + 1;
        if (!changed && iter > 0) break;

        std::fill(centroids.begin(), centroids.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int64_t i = 0; i < n; ++i) {
            const auto j = labels[i];
            ++counts[j];
            for (int64_t e = 0; e < d; ++e) centroid(j)[e] += point(i)[e];
        }
        std::vector<bool> taken(static_cast<std::size_t>(n), false);
        for (int64_t j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                for (int64_t e = 0; e < d; ++e) centroid(j)[e] /= static_cast<double>(counts[j]);
                continue;
            }
            // Empty cluster: move it onto the point worst served by its centroid.
            int64_t far = -1;
            double far_d = -1.0;
            for (int64_t i = 0; i < n; ++i) {
                if (!taken[i] && counts[labels[i]] > 1 && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            if (far < 0) continue;
            taken[far] = true;
            std::copy(point(far), point(far) + d, centroid(j));
        }
    }

    result.labels = torch::from_blob(labels.data(), {h, w}, torch::kInt64).clone();
    result.centroids = torch::from_blob(centroids.data(), {k, d}, torch::kFloat64).clone();
    return result;
}

StyleAssignment assign_styles(const RegionLabeling& regions, const std::vector<torch::Tensor>& confidences) {
    if (confidences.empty()) throw Error("style assignment needs at least one style");
    const auto h = regions.height(), w = regions.width();
    const auto num_styles = static_cast<int64_t>(confidences.size());
    auto labels = regions.labels.to(torch::kInt64).contiguous();
    const auto* lab = labels.data_ptr<int64_t>();

    StyleAssignment out;
    out.region_sums = torch::zeros({regions.k, num_styles}, torch::kFloat64);
    auto sums = out.region_sums.accessor<double, 2>();
    for (int64_t s = 0; s < num_styles; ++s) {
        auto conf = as_grid(confidences[s], h, w);
        const auto* cv = conf.data_ptr<double>();
        for (int64_t i = 0; i < h * w; ++i) sums[lab[i]][s] += cv[i];
    }
    out.region_to_style.resize(static_cast<std::size_t>(regions.k));
    for (int64_t r = 0; r < regions.k; ++r) {
        int64_t best = 0;
        for (int64_t s = 1; s < num_styles; ++s)
            if (sums[r][s] > sums[r][best]) best = s;
        out.region_to_style[r] = best;
    }
    return out;
}

torch::Tensor assign_styles_discrete(const std::vector<torch::Tensor>& confidences) {
    if (confidences.empty()) throw Error("style assignment needs at least one style");
    auto first = confidences.front();
    const auto h = first.size(-2), w = first.size(-1);
    std::vector<torch::Tensor> grids;
    for (const auto& c : confidences) grids.push_back(as_grid(c, h, w));
    auto out = torch::zeros({h, w}, torch::kInt64);
    auto* o = out.data_ptr<int64_t>();
    for (int64_t i = 0; i < h * w; ++i) {
        int64_t best = 0;
        double best_v = grids[0].data_ptr<double>()[i];
        for (std::size_t s = 1; s < grids.size(); ++s) {
            const double v = grids[s].data_ptr<double>()[i];
            if (v > best_v) {
                best_v = v;
                best = static_cast<int64_t>(s);
            }
        }
        o[i] = best;
    }
    return out;
}

torch::Tensor style_index_map(const StyleAssignment& assignment, const RegionLabeling& regions) {
    auto lut = torch::tensor(assignment.region_to_style, torch::kInt64);
    if (lut.size(0) != regions.k) throw ShapeError("assignment does not cover every region");
    return lut.index({regions.labels.to(torch::kInt64)});
}

torch::Tensor compose_by_map(const torch::Tensor& style_map, const std::vector<torch::Tensor>& reassembled) {
    if (reassembled.empty()) throw Error("composition needs at least one reassembled feature");
    const auto& ref = reassembled.front();
    for (const auto& r : reassembled) {
        if (r.sizes() != ref.sizes()) throw ShapeError("reassembled features differ in shape");
    }
    const auto num_styles = static_cast<int64_t>(reassembled.size());
    const auto lo = style_map.min().item<int64_t>();
    const auto hi = style_map.max().item<int64_t>();
    if (lo < 0 || hi >= num_styles)
        throw Error("assignment references style " + std::to_string(lo < 0 ? lo : hi) + " but only " +
                    std::to_string(num_styles) + " styles were given");

    auto stacked = torch::stack(reassembled, 0);  // S x [1 x] C x H x W
    const bool batched = ref.dim() == 4;
    if (batched) stacked = stacked.squeeze(1);
    if (style_map.size(0) != stacked.size(2) || style_map.size(1) != stacked.size(3))
        throw ShapeError("style map " + shape_string(style_map.sizes()) + " does not match features " +
                         shape_string(ref.sizes()));
    auto index = style_map.to(torch::kInt64).unsqueeze(0).unsqueeze(0).expand(
        {1, stacked.size(1), stacked.size(2), stacked.size(3)});
    auto out = stacked.gather(0, index).squeeze(0);
    return batched ? out.unsqueeze(0) : out;
}

torch::Tensor compose_hybrid(const StyleAssignment& assignment, const RegionLabeling& regions,
                             const std::vector<torch::Tensor>& reassembled) {
    return compose_by_map(style_index_map(assignment, regions), reassembled);
}

}  // namespace style_mixer
