#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "gjscc/common.hpp"

namespace gjscc::lpips {

// Perceptual distance between deep-feature activations: features are
// unit-normalized per spatial location and compared by a nonnegative
// per-channel weighted squared distance, averaged over space and summed over
// stages. The extractor is fixed at use; two providers exist — calibration
// weights loaded from a file, or a fixed-seed randomly initialized stack for
// hermetic runs. Both satisfy the metric axioms (zero at identity, symmetry,
// nonnegativity).

struct ExtractorImpl : torch::nn::Module {
    std::vector<int64_t> widths;
    int64_t convs_per_stage = 2;
    std::string identifier = "hermetic-v1";
    std::vector<torch::nn::Conv2d> convs;
    std::vector<torch::Tensor> calibration;  // (C) per stage, nonnegative

    ExtractorImpl(std::vector<int64_t> widths_, int64_t convs_per_stage_, std::string ident)
        : widths(std::move(widths_)), convs_per_stage(convs_per_stage_), identifier(std::move(ident)) {
        int64_t in = 3;
        int idx = 0;
        for (auto w : widths) {
            for (int64_t c = 0; c < convs_per_stage; ++c) {
                auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, w, 3).padding(1));
                convs.push_back(register_module("conv" + std::to_string(idx++), conv));
                in = w;
            }
            auto cal = torch::ones({w});
            calibration.push_back(
                register_buffer("calibration" + std::to_string(calibration.size()), cal));
        }
        for (auto& p : parameters()) p.set_requires_grad(false);
    }

    // Stage activations for a model-range NCHW batch.
    std::vector<torch::Tensor> features(const torch::Tensor& nchw) {
        require(nchw.dim() == 4 && nchw.size(1) == 3, "extractor: expected (B, 3, H, W)");
        std::vector<torch::Tensor> out;
        auto h = nchw;
        size_t conv_idx = 0;
        for (size_t s = 0; s < widths.size(); ++s) {
            for (int64_t c = 0; c < convs_per_stage; ++c)
                h = torch::leaky_relu(convs[conv_idx++]->forward(h), 0.2);
            out.push_back(h);
            if (s + 1 < widths.size()) h = torch::avg_pool2d(h, 2);
        }
        return out;
    }

    // Perceptual distance per batch element, differentiable in both inputs.
    torch::Tensor distance(const torch::Tensor& x, const torch::Tensor& y) {
        require(x.sizes() == y.sizes(), "lpips: shape mismatch");
        auto fx = features(x);
        auto fy = features(y);
        torch::Tensor total;
        for (size_t s = 0; s < fx.size(); ++s) {
            auto nx = fx[s] / (fx[s].square().sum(1, true).sqrt() + 1e-10);
            auto ny = fy[s] / (fy[s].square().sum(1, true).sqrt() + 1e-10);
            auto d2 = (nx - ny).square();
            auto w = calibration[s].to(d2.dtype()).view({1, -1, 1, 1});
            auto stage = (d2 * w).sum(1).mean({1, 2});  // (B)
            total = total.defined() ? total + stage : stage;
        }
        return total;
    }
};
TORCH_MODULE(Extractor);

// Fixed-seed random extractor; hermetic across machines and runs.
inline Extractor make_hermetic_extractor(uint64_t seed = 0x1b9,
                                         std::vector<int64_t> widths = {16, 32, 64, 96}) {
    Extractor ex(std::move(widths), 2, "hermetic-v1");
    auto rng = make_rng(seed);
    torch::NoGradGuard ng;
    for (auto& conv : ex->convs) {
        auto w = conv->weight;
        double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
        w.copy_(torch::randn(w.sizes(), rng) * std::sqrt(2.0 / fan_in));
        conv->bias.zero_();
    }
    // calibration scale anchored to the published-metric feel: visually
    // distinct pairs land near 0.4-0.8, heavy blur well above 0.1, and only
    // near-identical pairs fall under a few hundredths
    for (auto& cal : ex->calibration) cal.fill_(0.5);
    return ex;
}

// Published / externally calibrated weights, stored as a torch archive with a
// JSON sidecar describing the topology and weight-set identifier.
inline void save_extractor(const Extractor& ex, const std::filesystem::path& path) {
    torch::save(std::static_pointer_cast<torch::nn::Module>(ex.ptr()), path.string());
    std::string meta = "{\n  \"identifier\": \"" + ex->identifier + "\",\n  \"widths\": [";
    for (size_t i = 0; i < ex->widths.size(); ++i)
        meta += (i ? ", " : "") + std::to_string(ex->widths[i]);
    meta += "],\n  \"convs_per_stage\": " + std::to_string(ex->convs_per_stage) + "\n}\n";
    atomic_write_file(path.string() + ".json", meta);
}

inline Extractor load_extractor(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw ConfigError("extractor weights not found: " + path.string());
    auto meta_path = path.string() + ".json";
    if (!fs::exists(meta_path)) throw ConfigError("extractor metadata not found: " + meta_path);
    auto meta = read_text_file(meta_path);
    auto grab = [&](const std::string& key) {
        auto pos = meta.find("\"" + key + "\"");
        if (pos == std::string::npos) throw ConfigError("extractor metadata missing " + key);
        return meta.substr(meta.find(':', pos) + 1);
    };
    std::string ident = grab("identifier");
    ident = ident.substr(ident.find('"') + 1);
    ident = ident.substr(0, ident.find('"'));
    std::vector<int64_t> widths;
    {
        auto lst = grab("widths");
        auto open = lst.find('['), close = lst.find(']');
        std::istringstream ss(lst.substr(open + 1, close - open - 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) widths.push_back(std::stoll(tok));
    }
    int64_t cps = std::stoll(grab("convs_per_stage"));
    Extractor ex(widths, cps, ident);
    auto holder = std::static_pointer_cast<torch::nn::Module>(ex.ptr());
    torch::load(holder, path.string());
    return ex;
}

}  // namespace gjscc::lpips
