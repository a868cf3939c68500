#include "style_mixer/pipeline.hpp"

#include <iomanip>
#include <sstream>

#include "style_mixer/image.hpp"

namespace style_mixer {

torch::Tensor run_sst(StyleMixer& model, const torch::Tensor& content, const torch::Tensor& style) {
    torch::NoGradGuard no_grad;
    auto c = fit_to_stride(content, kEncoderStride);
    auto s = fit_to_stride(style, kEncoderStride);
    auto& encoder = model->encoder();
    auto content_feats = encode(c, encoder);
    auto style_feats = encode(s, encoder);
    auto content_fused = model->mff->forward(content_feats);
    auto [reassembled, corr] = model->reassemble_style(content_feats.at(Layer::Relu4_1), style_feats);
    return decode(merge(content_fused, reassembled), model->decoder).squeeze(0);
}

MstResult run_mst(StyleMixer& model, const torch::Tensor& content, const std::vector<torch::Tensor>& styles,
                  const MstOptions& options) {
    if (styles.empty()) throw Error("multi-style transfer needs at least one style image");
    torch::NoGradGuard no_grad;
    auto& encoder = model->encoder();
    auto c = fit_to_stride(content, kEncoderStride);
    auto content_feats = encode(c, encoder);
    const auto& content_relu4 = content_feats.at(Layer::Relu4_1);
    const auto h4 = content_relu4.size(-2), w4 = content_relu4.size(-1);
    auto content_fused = model->mff->forward(content_feats);

    MstResult result;
    std::vector<torch::Tensor> reassembled;
    for (const auto& style : styles) {
        auto style_feats = encode(fit_to_stride(style, kEncoderStride), encoder);
        auto [feature, corr] = model->reassemble_style(content_relu4, style_feats);
        reassembled.push_back(feature);
        result.confidences.push_back(confidence(corr.scores, corr.attention).reshape({h4, w4}));
    }

    if (options.strategy == FusionStrategy::Region) {
        result.regions = cluster_content(content_relu4, options.kmeans);
        result.assignment = assign_styles(*result.regions, result.confidences);
        result.style_map = style_index_map(*result.assignment, *result.regions);
    } else {
        result.style_map = assign_styles_discrete(result.confidences);
    }
    auto hybrid = compose_by_map(result.style_map, reassembled);
    result.image = decode(merge(content_fused, hybrid), model->decoder).squeeze(0);
    return result;
}

void save_region_map(const std::filesystem::path& path, const torch::Tensor& labels, int64_t height, int64_t width) {
    static const float palette[][3] = {
        {0.902f, 0.098f, 0.294f}, {0.235f, 0.706f, 0.294f}, {1.000f, 0.882f, 0.098f}, {0.263f, 0.388f, 0.847f},
        {0.961f, 0.510f, 0.192f}, {0.569f, 0.118f, 0.706f}, {0.259f, 0.831f, 0.957f}, {0.941f, 0.196f, 0.902f},
        {0.749f, 0.937f, 0.271f}, {0.980f, 0.745f, 0.831f}, {0.275f, 0.600f, 0.565f}, {0.863f, 0.745f, 1.000f},
        {0.604f, 0.388f, 0.141f}, {1.000f, 0.980f, 0.784f}, {0.502f, 0.000f, 0.000f}, {0.667f, 1.000f, 0.765f},
    };
    constexpr int64_t kPalette = sizeof(palette) / sizeof(palette[0]);
    auto lab = labels.to(torch::kInt64).contiguous();
    const auto lh = lab.size(0), lw = lab.size(1);
    auto img = torch::empty({3, height, width}, torch::kFloat32);
    auto acc = img.accessor<float, 3>();
    auto la = lab.accessor<int64_t, 2>();
    for (int64_t y = 0; y < height; ++y) {
        const auto sy = std::min(lh - 1, y * lh / height);
        for (int64_t x = 0; x < width; ++x) {
            const auto sx = std::min(lw - 1, x * lw / width);
            const auto id = la[sy][sx];
            // Past the fixed palette, derive distinct grey-ish colours from the id.
            for (int ch = 0; ch < 3; ++ch) {
                acc[ch][y][x] = id < kPalette ? palette[id][ch]
                                              : static_cast<float>(((id * (37 + 61 * ch)) % 251) / 255.0);
            }
        }
    }
    save_png(path, img);
}

std::string format_assignment_table(const RegionLabeling& regions, const StyleAssignment& assignment,
                                    const std::vector<std::string>& style_names) {
    std::ostringstream os;
    os << "# region\tpositions\tstyle\tstyle_name";
    const auto num_styles = assignment.region_sums.size(1);
    for (int64_t s = 0; s < num_styles; ++s) os << "\tconf_sum_" << s;
    os << '\n';
    auto counts = torch::bincount(regions.labels.flatten(), {}, regions.k);
    auto sums = assignment.region_sums.accessor<double, 2>();
    for (int64_t r = 0; r < regions.k; ++r) {
        const auto style = assignment.region_to_style[r];
        os << r << '\t' << counts[r].item<int64_t>() << '\t' << style << '\t'
           << (style < static_cast<int64_t>(style_names.size()) ? style_names[style] : std::string("-"));
        for (int64_t s = 0; s < num_styles; ++s) os << '\t' << std::setprecision(9) << sums[r][s];
        os << '\n';
    }
    return os.str();
}

}  // namespace style_mixer
