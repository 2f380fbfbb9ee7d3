#pragma once

#include <torch/torch.h>

#include <cmath>
#include <string>
#include <vector>

#include "gjscc/common.hpp"
#include "gjscc/lpips.hpp"

// Distortion and perception measures. Inputs are model-range (H, W, C)
// images; reported MSE/PSNR/MS-SSIM live on the 255 pixel scale, while the
// training objectives (weighted_distortion) keep the squared-error term in
// model range.
namespace gjscc::metrics {

constexpr double kPsnrCapDb = 100.0;  // reported value when MSE is exactly 0

inline void check_pair(const torch::Tensor& x, const torch::Tensor& y, const char* where) {
    require(x.defined() && y.defined(), std::string(where) + ": undefined tensor");
    require(x.sizes() == y.sizes(), std::string(where) + ": shape mismatch");
    require(x.dim() == 3, std::string(where) + ": expected (H, W, C)");
}

inline torch::Tensor hwc_to_nchw(const torch::Tensor& img) {
    return img.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

// Mean squared error on the 255 pixel scale.
inline double mse(const torch::Tensor& x, const torch::Tensor& y) {
    check_pair(x, y, "mse");
    auto d = (x.to(torch::kFloat64) - y.to(torch::kFloat64)) * 127.5;
    return d.square().mean().item<double>();
}

inline double psnr_from_mse(double mse_value) {
    if (mse_value <= 0.0) return kPsnrCapDb;
    return 10.0 * std::log10(255.0 * 255.0 / mse_value);
}

inline double psnr(const torch::Tensor& x, const torch::Tensor& y) {
    return psnr_from_mse(mse(x, y));
}

// ---------------------------------------------------------------------------
// MS-SSIM

struct MsSsimConfig {
    int levels = 5;
    // per-scale contrast/structure exponents; the last entry doubles as the
    // luminance exponent at the coarsest scale
    std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double c1 = (0.01 * 255) * (0.01 * 255);
    double c2 = (0.03 * 255) * (0.03 * 255);
    double c3 = (0.03 * 255) * (0.03 * 255) / 2.0;
    int window_size = 11;
    double window_sigma = 1.5;

    // Standard 5-level defaults, or fewer levels with renormalized weights
    // for small images (64x64 supports 3 dyadic levels under an 11-tap window).
    static MsSsimConfig make(int levels_) {
        MsSsimConfig cfg;
        require(levels_ >= 1 && levels_ <= 5, "MsSsimConfig: levels must be in 1..5");
        if (levels_ != 5) {
            double sum = 0;
            cfg.weights.resize(levels_);
            for (auto w : cfg.weights) sum += w;
            for (auto& w : cfg.weights) w /= sum;
            cfg.levels = levels_;
        }
        return cfg;
    }

    void validate() const {
        require(static_cast<int>(weights.size()) == levels,
                "MsSsimConfig: weight sequence length must equal levels");
        for (auto w : weights) require(w > 0, "MsSsimConfig: weights must be positive");
        require(c1 > 0 && c2 > 0 && c3 > 0, "MsSsimConfig: stability constants must be positive");
        require(window_size >= 3 && window_size % 2 == 1, "MsSsimConfig: odd window size >= 3");
        require(window_sigma > 0, "MsSsimConfig: window sigma must be positive");
    }
};

namespace detail {

inline torch::Tensor gaussian_window(int size, double sigma, torch::Dtype dtype) {
    auto idx = torch::arange(size, dtype) - (size - 1) / 2.0;
    auto g = torch::exp(-idx.square() / (2 * sigma * sigma));
    g /= g.sum();
    return torch::outer(g, g);
}

struct ScaleStats {
    double luminance, contrast, structure;  // spatial means of l, c, s maps
};

// Windowed Gaussian statistics for one scale; x, y are (C, H, W) on the 255
// scale. Valid convolution: only fully covered windows contribute.
inline ScaleStats scale_stats(const torch::Tensor& x, const torch::Tensor& y,
                              const MsSsimConfig& cfg) {
    auto win = gaussian_window(cfg.window_size, cfg.window_sigma, torch::kFloat64);
    const int64_t c = x.size(0);
    auto kernel = win.unsqueeze(0).unsqueeze(0).expand({c, 1, -1, -1}).contiguous();
    auto conv = [&](const torch::Tensor& t) {
        namespace F = torch::nn::functional;
        return F::conv2d(t.unsqueeze(0), kernel, F::Conv2dFuncOptions().groups(c)).squeeze(0);
    };
    auto mu_x = conv(x), mu_y = conv(y);
    auto var_x = conv(x * x) - mu_x * mu_x;
    auto var_y = conv(y * y) - mu_y * mu_y;
    auto cov = conv(x * y) - mu_x * mu_y;
    var_x = var_x.clamp_min(0);
    var_y = var_y.clamp_min(0);
    auto sd_x = var_x.sqrt(), sd_y = var_y.sqrt();

    auto l = (2 * mu_x * mu_y + cfg.c1) / (mu_x.square() + mu_y.square() + cfg.c1);
    auto con = (2 * sd_x * sd_y + cfg.c2) / (var_x + var_y + cfg.c2);
    auto s = (cov + cfg.c3) / (sd_x * sd_y + cfg.c3);
    return {l.mean().item<double>(), con.mean().item<double>(), s.mean().item<double>()};
}

}  // namespace detail

// Multi-scale structural similarity: the weighted product
// [l_M]^{a_M} * prod_j [c_j]^{b_j} [s_j]^{g_j} over `levels` dyadic scales.
// Per-scale scalars are the spatial means of the windowed component maps.
inline double ms_ssim(const torch::Tensor& x_in, const torch::Tensor& y_in,
                      const MsSsimConfig& cfg = MsSsimConfig::make(5)) {
    check_pair(x_in, y_in, "ms_ssim");
    cfg.validate();
    torch::NoGradGuard ng;
    // 255 scale, (C, H, W)
    auto x = ((x_in.to(torch::kFloat64) + 1) * 127.5).permute({2, 0, 1}).contiguous();
    auto y = ((y_in.to(torch::kFloat64) + 1) * 127.5).permute({2, 0, 1}).contiguous();

    const int64_t coarse_h = x.size(1) >> (cfg.levels - 1);
    const int64_t coarse_w = x.size(2) >> (cfg.levels - 1);
    require(coarse_h >= cfg.window_size && coarse_w >= cfg.window_size,
            "ms_ssim: image smaller than the window at the coarsest scale");

    double value = 1.0;
    for (int j = 0; j < cfg.levels; ++j) {
        auto stats = detail::scale_stats(x, y, cfg);
        // negative component means fall outside the nominal nonnegative
        // domain; floor them so fractional exponents stay real
        double c = std::max(stats.contrast, 0.0);
        double s = std::max(stats.structure, 0.0);
        value *= std::pow(c, cfg.weights[j]) * std::pow(s, cfg.weights[j]);
        if (j == cfg.levels - 1) value *= std::pow(std::max(stats.luminance, 0.0), cfg.weights[j]);
        if (j + 1 < cfg.levels) {
            x = torch::avg_pool2d(x.unsqueeze(0), 2).squeeze(0);
            y = torch::avg_pool2d(y.unsqueeze(0), 2).squeeze(0);
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// Composite objectives

// gamma1 * mean squared error (model range) + gamma2 * LPIPS, per batch
// element; differentiable in both inputs. Batched NCHW core used by the
// training loops.
inline torch::Tensor weighted_distortion_nchw(const torch::Tensor& x, const torch::Tensor& xhat,
                                              double gamma1, double gamma2,
                                              lpips::Extractor* extractor) {
    require(gamma1 >= 0 && gamma2 >= 0, "weighted_distortion: weights must be nonnegative");
    require(gamma1 > 0 || gamma2 > 0, "weighted_distortion: weights must not both be zero");
    require(x.sizes() == xhat.sizes(), "weighted_distortion: shape mismatch");
    auto total = torch::zeros({x.size(0)}, x.options());
    if (gamma1 > 0) total = total + gamma1 * (x - xhat).square().mean({1, 2, 3});
    if (gamma2 > 0) {
        if (!extractor) throw ConfigError("weighted_distortion: LPIPS extractor not loaded");
        total = total + gamma2 * (*extractor)->distance(x, xhat);
    }
    return total;
}

inline torch::Tensor weighted_distortion(const torch::Tensor& x, const torch::Tensor& xhat,
                                         double gamma1, double gamma2,
                                         lpips::Extractor* extractor = nullptr) {
    check_pair(x, xhat, "weighted_distortion");
    return weighted_distortion_nchw(hwc_to_nchw(x), hwc_to_nchw(xhat), gamma1, gamma2, extractor)
        .squeeze(0);
}

inline double lpips_distance(const torch::Tensor& x, const torch::Tensor& y,
                             lpips::Extractor& extractor) {
    check_pair(x, y, "lpips");
    torch::NoGradGuard ng;
    return extractor->distance(hwc_to_nchw(x), hwc_to_nchw(y)).item<double>();
}

// ---------------------------------------------------------------------------
// Reports

struct PerImageMetrics {
    std::string image_id;
    double mse = 0, psnr = 0, ms_ssim = 0, lpips = 0;
};

struct ReportMeta {
    std::string scheme;
    double snr_db = 0;
    double rho = 0;
    uint64_t seed = 0;
    std::string model_fingerprint;
};

struct MetricReport {
    ReportMeta meta;
    std::vector<PerImageMetrics> per_image;

    size_t count() const { return per_image.size(); }

    double mean(double PerImageMetrics::* field) const {
        require(!per_image.empty(), "MetricReport: empty report has no aggregates");
        double sum = 0;
        for (const auto& r : per_image) sum += r.*field;
        return sum / static_cast<double>(per_image.size());
    }
    double mean_mse() const { return mean(&PerImageMetrics::mse); }
    double mean_psnr() const { return mean(&PerImageMetrics::psnr); }
    double mean_ms_ssim() const { return mean(&PerImageMetrics::ms_ssim); }
    double mean_lpips() const { return mean(&PerImageMetrics::lpips); }
};

// Full per-image metric row against a reference.
inline PerImageMetrics score_pair(const std::string& image_id, const torch::Tensor& x,
                                  const torch::Tensor& xhat, lpips::Extractor& extractor,
                                  const MsSsimConfig& ms_cfg) {
    PerImageMetrics row;
    row.image_id = image_id;
    row.mse = mse(x, xhat);
    row.psnr = psnr_from_mse(row.mse);
    row.ms_ssim = ms_ssim(x, xhat, ms_cfg);
    row.lpips = lpips_distance(x, xhat, extractor);
    return row;
}

}  // namespace gjscc::metrics
