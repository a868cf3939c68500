#include "style_mixer/losses.hpp"

#include <cmath>
#include <sstream>

#include "style_mixer/patch_attention.hpp"

namespace style_mixer {
namespace {

namespace F = torch::nn::functional;

torch::Tensor batch4(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, std::string_view what) {
    if (a.sizes() != b.sizes())
        throw ShapeError(std::string(what) + ": shapes " + shape_string(a.sizes()) + " and " +
                         shape_string(b.sizes()) + " differ");
}

std::pair<torch::Tensor, torch::Tensor> mean_std(const torch::Tensor& x, double eps) {
    auto t = batch4(x);
    auto mean = t.mean({2, 3});
    auto var = (t - mean.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3});
    return {mean, torch::sqrt(var + eps)};
}

// log max_j A_ij for a batch of cosine-similarity matrices (N x P x Q).
//
// With d = 1 - min(cos, 1), m_i = max_j cos_ij and c_i = 1 / (bw (1 - m_i + eps))
// the softmax logits are z_ij = 1/bw - c_i + c_i cos_ij, hence
//   log max_j A_ij = -log sum_j exp(u_ij),   u_ij = c_i (cos_ij - m_i).
// Forward and backward each make one pass over a row; autograd over the
// unfused expression needs a dozen full-matrix temporaries.
//
// Gradient, with p = softmax_j(u) and j* the row argmax:
//   dL_i/dcos_ij = -c_i p_ij + [j == j*] (c_i - c_i^2 bw sum_k p_ik (cos_ik - m_i))
// and zero where cos_ij > 1 (clamped).
class ContextualRowMax : public torch::autograd::Function<ContextualRowMax> {
public:
    static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& cos_in, double bandwidth,
                                 double eps) {
        auto cos = cos_in.contiguous();
        const int64_t rows = cos.size(0) * cos.size(1);
        const int64_t cols = cos.size(2);
        auto out = torch::empty({cos.size(0), cos.size(1)}, cos.options());
        auto stats = torch::empty({rows, 4}, cos.options().dtype(torch::kFloat64));  // m, c, log Z, argmax
        AT_DISPATCH_FLOATING_TYPES(cos.scalar_type(), "contextual_row_forward", [&] {
            const scalar_t* data = cos.data_ptr<scalar_t>();
            scalar_t* o = out.data_ptr<scalar_t>();
            double* st = stats.data_ptr<double>();
            at::parallel_for(0, rows, 16, [&](int64_t begin, int64_t end) {
                for (int64_t r = begin; r < end; ++r) {
                    const scalar_t* row = data + r * cols;
                    int64_t arg = 0;
                    double m = std::min<double>(row[0], 1.0);
                    for (int64_t j = 1; j < cols; ++j) {
                        const double v = std::min<double>(row[j], 1.0);
                        if (v > m) {
                            m = v;
                            arg = j;
                        }
                    }
                    const double c = 1.0 / (bandwidth * ((1.0 - m) + eps));
                    double z = 0.0;
                    for (int64_t j = 0; j < cols; ++j) z += std::exp(c * (std::min<double>(row[j], 1.0) - m));
                    const double log_z = std::log(z);
                    o[r] = static_cast<scalar_t>(-log_z);
                    st[r * 4 + 0] = m;
                    st[r * 4 + 1] = c;
                    st[r * 4 + 2] = log_z;
                    st[r * 4 + 3] = static_cast<double>(arg);
                }
            });
        });
        ctx->save_for_backward({cos, stats});
        ctx->saved_data["bandwidth"] = bandwidth;
        return out;
    }

    static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::tensor_list grads) {
        auto saved = ctx->get_saved_variables();
        const auto& cos = saved[0];
        const auto& stats = saved[1];
        const double bandwidth = ctx->saved_data["bandwidth"].toDouble();
        auto g_out = grads[0].contiguous();
        const int64_t rows = cos.size(0) * cos.size(1);
        const int64_t cols = cos.size(2);
        auto g_cos = torch::empty_like(cos);
        AT_DISPATCH_FLOATING_TYPES(cos.scalar_type(), "contextual_row_backward", [&] {
            const scalar_t* data = cos.data_ptr<scalar_t>();
            const scalar_t* g = g_out.data_ptr<scalar_t>();
            const double* st = stats.data_ptr<double>();
            scalar_t* gc = g_cos.data_ptr<scalar_t>();
            at::parallel_for(0, rows, 16, [&](int64_t begin, int64_t end) {
                for (int64_t r = begin; r < end; ++r) {
                    const scalar_t* row = data + r * cols;
                    scalar_t* grow = gc + r * cols;
                    const double m = st[r * 4 + 0], c = st[r * 4 + 1], log_z = st[r * 4 + 2];
                    const auto arg = static_cast<int64_t>(st[r * 4 + 3]);
                    const double gr = static_cast<double>(g[r]);
                    double spread = 0.0;  // sum_k p_ik (cos_ik - m)
                    for (int64_t j = 0; j < cols; ++j) {
                        const double v = std::min<double>(row[j], 1.0);
                        const double p = std::exp(c * (v - m) - log_z);
                        spread += p * (v - m);
                        grow[j] = row[j] > 1.0 ? scalar_t(0) : static_cast<scalar_t>(-gr * c * p);
                    }
                    if (row[arg] <= 1.0)
                        grow[arg] += static_cast<scalar_t>(gr * (c - c * c * bandwidth * spread));
                }
            });
        });
        return {g_cos, torch::Tensor(), torch::Tensor()};
    }
};

std::string format_value(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

NonFiniteLoss::NonFiniteLoss(std::string term, double value)
    : NonFiniteError("loss term '" + term + "' is not finite (" + format_value(value) + ")"), term_(std::move(term)) {}

void LossConfig::validate() const {
    for (double w : {lambda_content, lambda_style, lambda_contextual, lambda_identity1, lambda_identity2}) {
        if (!(w >= 0.0)) throw Error("loss weights must be non-negative");
    }
    if (!(bandwidth > 0.0)) throw Error("contextual bandwidth must be positive");
    if (!(eps > 0.0)) throw Error("loss eps must be positive");
}

namespace {

// eps floors the standard deviation instead of being added to the variance, so
// any positive per-channel rescaling of a non-constant channel cancels exactly.
// Clamping before the sqrt keeps constant channels away from its infinite slope.
torch::Tensor standardize_channels(const torch::Tensor& x, double eps) {
    auto centred = x - x.mean({2, 3}, true);
    auto var = centred.pow(2).mean({2, 3}, true).clamp_min(eps * eps);
    return centred / var.sqrt();
}

}  // namespace

torch::Tensor content_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& content, const LossConfig& cfg) {
    torch::Tensor total;
    for (auto layer : cfg.content_layers) {
        const auto& a = synth.at(layer);
        const auto& b = content.at(layer);
        require_same_shape(a, b, "content loss");
        auto term = F::mse_loss(standardize_channels(a, cfg.eps), standardize_channels(b, cfg.eps));
        total = total.defined() ? total + term : term;
    }
    return total.defined() ? total : torch::zeros({});
}

torch::Tensor style_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& style, const LossConfig& cfg) {
    torch::Tensor total;
    for (auto layer : cfg.style_layers) {
        auto [ma, sa] = mean_std(synth.at(layer), cfg.eps);
        auto [mb, sb] = mean_std(style.at(layer), cfg.eps);
        require_same_shape(ma, mb, "style loss");
        auto term = F::mse_loss(ma, mb) + F::mse_loss(sa, sb);
        total = total.defined() ? total + term : term;
    }
    return total.defined() ? total : torch::zeros({});
}

torch::Tensor contextual_loss_layer(const torch::Tensor& synth, const torch::Tensor& style, double bandwidth,
                                    double eps) {
    auto x = batch4(synth);
    auto y = batch4(style);
    if (x.size(0) != y.size(0) || x.size(1) != y.size(1))
        throw ShapeError("contextual loss: batch/channel mismatch " + shape_string(x.sizes()) + " vs " +
                         shape_string(y.sizes()));
    // N x P x C, unit length (zero vectors stay zero).
    auto xv = F::normalize(x.flatten(2).transpose(1, 2), F::NormalizeFuncOptions().dim(2).eps(1e-12));
    auto yv = F::normalize(y.flatten(2).transpose(1, 2), F::NormalizeFuncOptions().dim(2).eps(1e-12));
    auto cos = torch::bmm(xv, yv.transpose(1, 2));
    auto log_best = ContextualRowMax::apply(cos, bandwidth, eps);
    return (-torch::log(torch::exp(log_best).mean(1))).mean();
}

torch::Tensor contextual_loss(const MultiLevelFeatures& synth, const MultiLevelFeatures& style, const LossConfig& cfg) {
    torch::Tensor total;
    for (auto layer : cfg.contextual_layers) {
        auto term = contextual_loss_layer(synth.at(layer), style.at(layer), cfg.bandwidth, cfg.eps);
        total = total.defined() ? total + term : term;
    }
    return total.defined() ? total : torch::zeros({});
}

std::pair<torch::Tensor, torch::Tensor> identity_loss(const torch::Tensor& i_cc, const torch::Tensor& i_c,
                                                      const MultiLevelFeatures& feats_c, const torch::Tensor& i_ss,
                                                      const torch::Tensor& i_s, const MultiLevelFeatures& feats_s,
                                                      VggEncoder& encoder) {
    require_same_shape(batch4(i_cc), batch4(i_c), "identity loss (content pair)");
    require_same_shape(batch4(i_ss), batch4(i_s), "identity loss (style pair)");
    auto pixel = F::mse_loss(batch4(i_cc), batch4(i_c)) + F::mse_loss(batch4(i_ss), batch4(i_s));

    auto f_cc = encoder->forward(i_cc);
    auto f_ss = encoder->forward(i_ss);
    torch::Tensor feature;
    for (auto layer : kAllLayers) {
        auto term = F::mse_loss(f_cc.at(layer), feats_c.at(layer)) + F::mse_loss(f_ss.at(layer), feats_s.at(layer));
        feature = feature.defined() ? feature + term : term;
    }
    return {pixel, feature};
}

std::pair<torch::Tensor, torch::Tensor> identity_loss(const torch::Tensor& i_cc, const torch::Tensor& i_c,
                                                      const torch::Tensor& i_ss, const torch::Tensor& i_s,
                                                      VggEncoder& encoder, const LossConfig&) {
    MultiLevelFeatures feats_c, feats_s;
    {
        torch::NoGradGuard no_grad;
        feats_c = encoder->forward(i_c);
        feats_s = encoder->forward(i_s);
    }
    return identity_loss(i_cc, i_c, feats_c, i_ss, i_s, feats_s, encoder);
}

LossBreakdown total_loss(const LossBreakdown& parts, const LossConfig& cfg) {
    const std::pair<const char*, double> terms[] = {{"content", parts.content},
                                                    {"style", parts.style},
                                                    {"contextual", parts.contextual},
                                                    {"identity1", parts.identity1},
                                                    {"identity2", parts.identity2}};
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) throw NonFiniteLoss(name, v);
    }
    LossBreakdown out = parts;
    const double identity = cfg.lambda_identity1 * parts.identity1 + cfg.lambda_identity2 * parts.identity2;
    out.total = cfg.lambda_content * parts.content + cfg.lambda_style * parts.style + identity +
                cfg.lambda_contextual * parts.contextual;
    return out;
}

torch::Tensor weighted_total(const LossParts& parts, const LossConfig& cfg, LossBreakdown* breakdown) {
    LossBreakdown values;
    values.content = parts.content.item<double>();
    values.style = parts.style.item<double>();
    values.contextual = parts.contextual.item<double>();
    values.identity1 = parts.identity1.item<double>();
    values.identity2 = parts.identity2.item<double>();
    values = total_loss(values, cfg);  // throws on non-finite terms
    if (breakdown) *breakdown = values;
    auto identity = cfg.lambda_identity1 * parts.identity1 + cfg.lambda_identity2 * parts.identity2;
    return cfg.lambda_content * parts.content + cfg.lambda_style * parts.style + identity +
           cfg.lambda_contextual * parts.contextual;
}

}  // namespace style_mixer
