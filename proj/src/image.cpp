#include "style_mixer/image.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace style_mixer {
namespace {

torch::Tensor mat_to_tensor(const cv::Mat& bgr8) {
    cv::Mat rgb;
    cv::cvtColor(bgr8, rgb, cv::COLOR_BGR2RGB);
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
    return hwc.permute({2, 0, 1}).contiguous();
}

cv::Mat tensor_to_mat_f32(const torch::Tensor& chw) {
    auto hwc = chw.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
    cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr<float>());
    return m.clone();
}

void require_chw(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3)
        throw ShapeError("expected a 3xHxW image, got " + shape_string(image.sizes()));
}

}  // namespace

torch::Tensor load_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw ImageError("cannot decode image: " + path.string());
    return mat_to_tensor(m);
}

void save_png(const std::filesystem::path& path, const torch::Tensor& image) {
    require_chw(image);
    auto u8 = (image.detach().to(torch::kCPU, torch::kFloat32).clamp(0.0, 1.0) * 255.0)
                  .round()
                  .to(torch::kUInt8)
                  .permute({1, 2, 0})
                  .contiguous();
    cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw ImageError("cannot write image: " + path.string());
}

void validate_image(const torch::Tensor& image) {
    const bool batched = image.dim() == 4;
    if (!(image.dim() == 3 || batched) || image.size(batched ? 1 : 0) != 3)
        throw ShapeError("expected a 3-channel image, got " + shape_string(image.sizes()));
    const auto h = image.size(-2);
    const auto w = image.size(-1);
    if (h < kMinImageSide || w < kMinImageSide)
        throw ShapeError("image sides must be at least 32 pixels, got " + std::to_string(h) + "x" + std::to_string(w));
    check_finite(image, "input image");
    if (image.min().item<double>() < 0.0 || image.max().item<double>() > 1.0)
        throw ImageError("image values must lie in [0, 1]");
}

torch::Tensor resize_image(const torch::Tensor& image, int64_t height, int64_t width) {
    require_chw(image);
    if (image.size(1) == height && image.size(2) == width) return image;
    const bool shrinking = height < image.size(1) && width < image.size(2);
    cv::Mat src = tensor_to_mat_f32(image);
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
               shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    auto hwc = torch::from_blob(dst.data, {dst.rows, dst.cols, 3}, torch::kFloat32).clone();
    return hwc.permute({2, 0, 1}).clamp(0.0, 1.0).contiguous();
}

torch::Tensor resize_short_side(const torch::Tensor& image, int64_t short_side) {
    require_chw(image);
    const auto h = image.size(1);
    const auto w = image.size(2);
    if (std::min(h, w) == short_side) return image;
    int64_t nh, nw;
    if (h <= w) {
        nh = short_side;
        nw = static_cast<int64_t>(std::llround(static_cast<double>(w) * short_side / h));
    } else {
        nw = short_side;
        nh = static_cast<int64_t>(std::llround(static_cast<double>(h) * short_side / w));
    }
    return resize_image(image, nh, nw);
}

torch::Tensor random_crop(const torch::Tensor& image, int64_t size, std::mt19937_64& rng) {
    require_chw(image);
    const auto h = image.size(1);
    const auto w = image.size(2);
    if (h < size || w < size)
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than crop " +
                         std::to_string(size));
    const auto y = std::uniform_int_distribution<int64_t>(0, h - size)(rng);
    const auto x = std::uniform_int_distribution<int64_t>(0, w - size)(rng);
    return image.slice(1, y, y + size).slice(2, x, x + size).contiguous();
}

torch::Tensor fit_to_stride(const torch::Tensor& image, int64_t stride) {
    require_chw(image);
    const auto h = image.size(1) / stride * stride;
    const auto w = image.size(2) / stride * stride;
    if (h < kMinImageSide || w < kMinImageSide)
        throw ShapeError("image too small after rounding to stride " + std::to_string(stride));
    return resize_image(image, h, w);
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace style_mixer
