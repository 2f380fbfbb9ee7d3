#pragma once

#include <torch/torch.h>

#include "gjscc/common.hpp"

// Shared network blocks: residual blocks with optional resampling, a
// lightweight spatial attention module, and the SNR-conditioned
// attention-feature (AF) module that lets one model serve a range of SNRs.
namespace gjscc::nn {

enum class Resample { kNone, kDown, kUp };

struct ResidualBlockImpl : torch::nn::Module {
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    Resample resample;

    ResidualBlockImpl(int64_t in, int64_t out, Resample resample_ = Resample::kNone)
        : resample(resample_) {
        const int64_t stride = resample == Resample::kDown ? 2 : 1;
        conv1 = register_module(
            "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
        conv2 = register_module("conv2",
                                torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
        skip = register_module(
            "skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride)));
    }

    torch::Tensor forward(torch::Tensor x) {
        if (resample == Resample::kUp) x = torch::upsample_nearest2d(x, c10::nullopt, {{2.0, 2.0}});
        auto h = torch::leaky_relu(conv1->forward(x), 0.2);
        h = conv2->forward(h);
        return torch::leaky_relu(h + skip->forward(x), 0.2);
    }
};
TORCH_MODULE(ResidualBlock);

// Trunk scaled by a learned sigmoid mask, added back to the input.
struct AttentionBlockImpl : torch::nn::Module {
    torch::nn::Conv2d trunk{nullptr}, mask1{nullptr}, mask2{nullptr};

    explicit AttentionBlockImpl(int64_t channels) {
        trunk = register_module(
            "trunk", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
        mask1 = register_module("mask1", torch::nn::Conv2d(channels, channels, 1));
        mask2 = register_module("mask2", torch::nn::Conv2d(channels, channels, 1));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto mask = torch::sigmoid(mask2->forward(torch::relu(mask1->forward(x))));
        return x + trunk->forward(x) * mask;
    }
};
TORCH_MODULE(AttentionBlock);

// Channel-wise reweighting from (pooled features, normalized SNR).
struct AFModuleImpl : torch::nn::Module {
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};

    explicit AFModuleImpl(int64_t channels) {
        fc1 = register_module("fc1", torch::nn::Linear(channels + 1, channels));
        fc2 = register_module("fc2", torch::nn::Linear(channels, channels));
    }

    // snr_norm: (B, 1) scalar feature in [-1, 1] over the trained SNR range.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& snr_norm) {
        auto ctx = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
        auto h = torch::relu(fc1->forward(torch::cat({ctx, snr_norm.to(x.dtype())}, 1)));
        auto scale = torch::sigmoid(fc2->forward(h));
        return x * scale.unsqueeze(-1).unsqueeze(-1);
    }
};
TORCH_MODULE(AFModule);

inline torch::Tensor normalize_snr(const torch::Tensor& snr_db, double lo, double hi) {
    require(hi > lo, "normalize_snr: empty SNR range");
    return ((snr_db - lo) / (hi - lo) * 2 - 1).clamp(-1, 1).view({-1, 1});
}

// Output clamp: hard limits with identity gradient everywhere inside the
// range (no tanh-style squashing near the rails).
inline torch::Tensor clamp_range(const torch::Tensor& x, double lo = -1.0, double hi = 1.0) {
    return x.clamp(lo, hi);
}

// Simple best-so-far plateau tracker: lowers the rate by `factor` after
// `patience` consecutive non-improving validations.
struct PlateauScheduler {
    double factor = 0.8;
    int patience = 4;
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;

    // returns true when the learning rate should be multiplied by `factor`
    bool step(double validation_loss) {
        if (validation_loss < best) {
            best = validation_loss;
            bad = 0;
            return false;
        }
        if (++bad >= patience) {
            bad = 0;
            return true;
        }
        return false;
    }
};

inline void set_adam_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

inline double adam_lr(const torch::optim::Adam& opt) {
    return static_cast<const torch::optim::AdamOptions&>(opt.param_groups().front().options()).lr();
}

// Bit-exact parameter checksum used by freeze contracts.
inline uint64_t parameter_checksum(const torch::nn::Module& module) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : module.parameters()) {
        auto flat = p.detach().to(torch::kFloat64).contiguous().flatten();
        auto acc = flat.accessor<double, 1>();
        for (int64_t i = 0; i < flat.size(0); ++i) {
            uint64_t bits;
            double v = acc[i];
            std::memcpy(&bits, &v, sizeof(bits));
            h ^= bits;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace gjscc::nn
