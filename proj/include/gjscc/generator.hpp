#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "gjscc/checkpoint.hpp"
#include "gjscc/common.hpp"
#include "gjscc/data.hpp"
#include "gjscc/metrics.hpp"
#include "gjscc/nn_blocks.hpp"

// Decomposable style-based generator G = G4 ∘ G3 ∘ G2 ∘ G1. Each stage holds
// two style-modulated convolutions with per-site noise injection and doubles
// the resolution. Intermediate latents carry the (flattened feature map,
// style vector) pair, so later stages are pure functions of the previous
// stage's output and their own noise slice.
namespace gjscc::gen {

constexpr int kStages = 4;
constexpr int kConvsPerStage = 2;
constexpr int kNoiseSites = kStages * kConvsPerStage;

struct GeneratorSpec {
    int64_t latent_dim = 128;  // q
    int64_t image_size = 64;
    // channels at resolutions [start, 2*start, 4*start, 8*start, 16*start]
    std::vector<int64_t> res_channels{64, 64, 48, 32, 24};

    int64_t start_res() const { return image_size / 16; }
    int64_t source_dim() const { return image_size * image_size * 3; }

    void validate() const {
        require(latent_dim >= 1, "GeneratorSpec: latent_dim must be >= 1");
        require(image_size >= 16 && image_size % 16 == 0,
                "GeneratorSpec: image_size must be a positive multiple of 16");
        require(res_channels.size() == kStages + 1, "GeneratorSpec: need 5 channel entries");
        for (auto c : res_channels) require(c >= 1, "GeneratorSpec: channels must be positive");
    }

    // conv site resolutions: [s, 2s, 2s, 4s, 4s, 8s, 8s, 16s]
    std::vector<int64_t> noise_resolutions() const {
        std::vector<int64_t> out;
        int64_t r = start_res();
        for (int stage = 0; stage < kStages; ++stage) {
            out.push_back(r);
            out.push_back(2 * r);
            r *= 2;
        }
        return out;
    }

    int64_t channels_after_stage(int stage) const { return res_channels[stage + 1]; }
    int64_t resolution_after_stage(int stage) const { return start_res() << (stage + 1); }

    // Dimension of the packed intermediate latent leaving stage i (1-based
    // stages 1..3); stage 4 emits the image of dimension source_dim().
    int64_t intermediate_dim(int stage) const {
        auto r = resolution_after_stage(stage - 1);
        return channels_after_stage(stage - 1) * r * r + latent_dim;
    }

    std::string canonical() const {
        nlohmann::ordered_json j;
        j["latent_dim"] = latent_dim;
        j["image_size"] = image_size;
        j["res_channels"] = res_channels;
        return j.dump();
    }
    std::string fingerprint() const { return checkpoint::fingerprint("generator:" + canonical()); }
};

// Modulate-convolve-demodulate with a learned per-site noise strength.
struct StyleConvImpl : torch::nn::Module {
    torch::nn::Linear affine{nullptr};
    torch::Tensor weight, bias, noise_strength;

    StyleConvImpl(int64_t latent_dim, int64_t in, int64_t out) {
        affine = register_module("affine", torch::nn::Linear(latent_dim, in));
        {
            torch::NoGradGuard ng;
            affine->bias.fill_(1.0);  // styles start near identity
        }
        weight = register_parameter("weight", torch::randn({out, in, 3, 3}) /
                                                  std::sqrt(static_cast<double>(in) * 9));
        bias = register_parameter("bias", torch::zeros({out}));
        noise_strength = register_parameter("noise_strength", torch::zeros({1}));
    }

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w,
                          const torch::Tensor& noise) {
        auto style = affine->forward(w.to(x.dtype()));  // (B, in)
        auto xs = x * style.unsqueeze(-1).unsqueeze(-1);
        auto h = torch::conv2d(xs, weight.to(x.dtype()), {}, 1, 1);
        // per-sample demodulation from the modulated kernel norm
        auto w2 = weight.to(x.dtype()).square().sum({2, 3});             // (out, in)
        auto demod = (style.square().matmul(w2.t()) + 1e-8).rsqrt();     // (B, out)
        h = h * demod.unsqueeze(-1).unsqueeze(-1);
        h = h + noise_strength.to(x.dtype()) * noise.to(x.dtype());
        return torch::leaky_relu(h + bias.to(x.dtype()).view({1, -1, 1, 1}), 0.2);
    }
};
TORCH_MODULE(StyleConv);

using NoiseMaps = std::vector<torch::Tensor>;  // one (B, 1, r, r) map per site

struct GeneratorImpl : torch::nn::Module {
    GeneratorSpec spec;
    torch::Tensor const_input;  // (C0, s, s) learned start block
    std::vector<StyleConv> convs;
    torch::nn::Conv2d to_rgb{nullptr};

    explicit GeneratorImpl(GeneratorSpec spec_) : spec(std::move(spec_)) {
        spec.validate();
        const_input = register_parameter(
            "const_input", torch::randn({spec.res_channels[0], spec.start_res(), spec.start_res()}));
        for (int stage = 0; stage < kStages; ++stage) {
            auto c_in = spec.res_channels[stage];
            auto c_out = spec.res_channels[stage + 1];
            convs.push_back(register_module("conv" + std::to_string(2 * stage),
                                            StyleConv(spec.latent_dim, c_in, c_in)));
            convs.push_back(register_module("conv" + std::to_string(2 * stage + 1),
                                            StyleConv(spec.latent_dim, c_in, c_out)));
        }
        to_rgb = register_module("to_rgb", torch::nn::Conv2d(spec.res_channels.back(), 3, 1));
        {
            torch::NoGradGuard ng;
            to_rgb->weight.mul_(0.25);  // start inside the output clamp
            to_rgb->bias.zero_();
        }
    }

    void check_noise(const NoiseMaps& noise, int64_t batch) const {
        auto res = spec.noise_resolutions();
        require(noise.size() == res.size(), "generator: expected one noise map per site");
        for (size_t i = 0; i < res.size(); ++i)
            require(noise[i].dim() == 4 && noise[i].size(0) == batch && noise[i].size(1) == 1 &&
                        noise[i].size(2) == res[i] && noise[i].size(3) == res[i],
                    "generator: noise map " + std::to_string(i) + " has wrong shape");
    }

    // One stage: two modulated convs around an x2 upsample.
    torch::Tensor stage_features(int stage, const torch::Tensor& features, const torch::Tensor& w,
                                 const torch::Tensor& noise_a, const torch::Tensor& noise_b) {
        auto h = convs[2 * stage]->forward(features, w, noise_a);
        h = torch::upsample_nearest2d(h, c10::nullopt, {{2.0, 2.0}});
        return convs[2 * stage + 1]->forward(h, w, noise_b);
    }

    // (B, q) latents + per-site noise -> (B, 3, H, W) model-range images.
    torch::Tensor forward(const torch::Tensor& w, const NoiseMaps& noise) {
        require(w.dim() == 2 && w.size(1) == spec.latent_dim,
                "generator: latent dimension mismatch");
        check_noise(noise, w.size(0));
        auto h = const_input.unsqueeze(0).expand({w.size(0), -1, -1, -1}).to(w.dtype());
        for (int stage = 0; stage < kStages; ++stage)
            h = stage_features(stage, h, w, noise[2 * stage], noise[2 * stage + 1]);
        return nn::clamp_range(to_rgb->forward(h));
    }

    // ------------------------------------------------------------------
    // Decomposed interface: packed intermediate latents carry the feature
    // map and the style vector driving the remaining stages.

    torch::Tensor pack(const torch::Tensor& features, const torch::Tensor& w) const {
        return torch::cat({features.flatten(1), w}, 1);
    }

    std::pair<torch::Tensor, torch::Tensor> unpack(int stage_in, const torch::Tensor& packed) const {
        const int64_t q = spec.latent_dim;
        require(packed.dim() == 2, "generator: packed latent must be (B, t)");
        const int64_t c = spec.res_channels[stage_in];
        const int64_t r = spec.start_res() << stage_in;
        require(packed.size(1) == c * r * r + q,
                "generator: packed latent dimension mismatch for stage " +
                    std::to_string(stage_in + 1));
        auto features = packed.slice(1, 0, c * r * r).view({packed.size(0), c, r, r});
        auto w = packed.slice(1, c * r * r, c * r * r + q);
        return {features, w};
    }

    // stage in 1..4: stage 1 consumes the raw latent, stages 2..4 consume the
    // previous stage's packed output; stage 4 emits the image.
    torch::Tensor run_stage(int stage, const torch::Tensor& input, const torch::Tensor& noise_a,
                            const torch::Tensor& noise_b) {
        require(stage >= 1 && stage <= kStages, "generator: stage index out of range");
        torch::Tensor features, w;
        if (stage == 1) {
            require(input.dim() == 2 && input.size(1) == spec.latent_dim,
                    "generator: stage 1 expects (B, q) latents");
            w = input;
            features = const_input.unsqueeze(0).expand({input.size(0), -1, -1, -1}).to(w.dtype());
        } else {
            std::tie(features, w) = unpack(stage - 1, input);
        }
        auto h = stage_features(stage - 1, features, w, noise_a, noise_b);
        if (stage == kStages) return nn::clamp_range(to_rgb->forward(h));
        return pack(h, w);
    }
};
TORCH_MODULE(Generator);

inline torch::Tensor sample_latent(const GeneratorSpec& spec, torch::Generator& rng,
                                   int64_t batch = 1) {
    return torch::randn({batch, spec.latent_dim}, rng);
}

inline NoiseMaps sample_noise(const GeneratorSpec& spec, torch::Generator& rng, int64_t batch = 1) {
    NoiseMaps maps;
    for (auto r : spec.noise_resolutions()) maps.push_back(torch::randn({batch, 1, r, r}, rng));
    return maps;
}

inline NoiseMaps zero_noise(const GeneratorSpec& spec, int64_t batch = 1) {
    NoiseMaps maps;
    for (auto r : spec.noise_resolutions()) maps.push_back(torch::zeros({batch, 1, r, r}));
    return maps;
}

inline void freeze(Generator& g) {
    for (auto& p : g->parameters()) p.set_requires_grad(false);
}

// ---------------------------------------------------------------------------
// Desk-scale adversarial pretraining (non-saturating loss, R1 penalty).

struct CriticImpl : torch::nn::Module {
    std::vector<torch::nn::Conv2d> convs;
    torch::nn::Linear head{nullptr};

    CriticImpl(int64_t image_size, std::vector<int64_t> widths) {
        int64_t in = 3, res = image_size;
        int idx = 0;
        for (auto w : widths) {
            convs.push_back(register_module(
                "conv" + std::to_string(idx++),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, w, 3).stride(2).padding(1))));
            in = w;
            res /= 2;
        }
        head = register_module("head", torch::nn::Linear(in * res * res, 1));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto h = x;
        for (auto& c : convs) h = torch::leaky_relu(c->forward(h), 0.2);
        return head->forward(h.flatten(1));
    }
};
TORCH_MODULE(Critic);

struct GanSchedule {
    int64_t steps = 600;
    int64_t batch_size = 8;
    double lr_g = 2e-3, lr_d = 2e-3;
    double r1_gamma = 1.0;
    std::vector<int64_t> critic_widths{24, 32, 48, 64};
    uint64_t seed = 1;
};

struct GanTrace {
    std::vector<double> d_losses, g_losses;
};

struct PretrainResult {
    Generator generator{nullptr};
    GanTrace trace;
    checkpoint::Meta meta;
};

inline PretrainResult pretrain_generator(const data::DatasetManifest& manifest,
                                         const GeneratorSpec& spec, const GanSchedule& schedule) {
    spec.validate();
    auto train = data::load_split_images(manifest, data::Split::kTrain)
                     .permute({0, 3, 1, 2})
                     .contiguous();
    require(train.size(2) == spec.image_size, "pretrain_generator: dataset size mismatch");

    torch::manual_seed(schedule.seed);
    Generator g(spec);
    Critic d(spec.image_size, schedule.critic_widths);
    torch::optim::Adam opt_g(g->parameters(), torch::optim::AdamOptions(schedule.lr_g).betas({0.0, 0.99}));
    torch::optim::Adam opt_d(d->parameters(), torch::optim::AdamOptions(schedule.lr_d).betas({0.0, 0.99}));

    auto rng = make_rng(mix_seed(schedule.seed, 0x6a11));
    std::mt19937_64 order(mix_seed(schedule.seed, 0x0d0d));
    GanTrace trace;

    for (int64_t step = 0; step < schedule.steps; ++step) {
        // critic step
        std::vector<int64_t> picks(schedule.batch_size);
        for (auto& p : picks) p = order() % train.size(0);
        auto real = train.index_select(0, torch::tensor(picks)).set_requires_grad(true);
        auto fake = g->forward(sample_latent(spec, rng, schedule.batch_size),
                               sample_noise(spec, rng, schedule.batch_size));

        auto d_real = d->forward(real);
        auto d_fake = d->forward(fake.detach());
        auto d_loss = torch::softplus(d_fake).mean() + torch::softplus(-d_real).mean();
        auto r1_grad = torch::autograd::grad({d_real.sum()}, {real}, {}, true, true)[0];
        auto r1 = r1_grad.square().sum({1, 2, 3}).mean();
        auto d_total = d_loss + 0.5 * schedule.r1_gamma * r1;
        opt_d.zero_grad();
        d_total.backward();
        opt_d.step();

        // generator step
        auto fake2 = g->forward(sample_latent(spec, rng, schedule.batch_size),
                                sample_noise(spec, rng, schedule.batch_size));
        auto g_loss = torch::softplus(-d->forward(fake2)).mean();
        opt_g.zero_grad();
        g_loss.backward();
        opt_g.step();

        const double dv = d_total.item<double>(), gv = g_loss.item<double>();
        if (!std::isfinite(dv) || !std::isfinite(gv))
            throw TrainingFailure("pretrain_generator diverged at step " + std::to_string(step));
        trace.d_losses.push_back(dv);
        trace.g_losses.push_back(gv);
    }

    freeze(g);
    PretrainResult out;
    out.generator = g;
    out.trace = trace;
    out.meta = {"generator", spec.fingerprint(),
                manifest.root.filename().string() + "#s" + std::to_string(manifest.seed), 0, 0};
    return out;
}

inline void save_generator(const std::filesystem::path& path, const PretrainResult& result) {
    checkpoint::save(path, *result.generator, result.meta);
}

// External-weight import path: any parameter set for the declared topology.
inline Generator load_generator(const std::filesystem::path& path, const GeneratorSpec& spec) {
    Generator g(spec);
    checkpoint::load(path, *g, "generator", spec.fingerprint());
    freeze(g);
    return g;
}

}  // namespace gjscc::gen
