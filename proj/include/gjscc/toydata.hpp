#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "gjscc/common.hpp"
#include "gjscc/image_io.hpp"

// Procedural desk-scale image families. "faces": a smooth low-dimensional
// family of cartoon portraits (background gradient, skin oval, eyes, mouth).
// "textures": oriented stripe/checker fields, used as the disjoint domain in
// mismatch experiments. Every image is a pure function of (seed, index).
namespace gjscc::toydata {

namespace detail {

inline torch::Tensor soft_mask(const torch::Tensor& signed_dist, double softness) {
    return torch::sigmoid(signed_dist / softness);
}

struct Grid {
    torch::Tensor x, y;  // (H, W) in [0, 1]
};

inline Grid make_grid(int64_t size) {
    auto lin = torch::linspace(0.0, 1.0, size, torch::kFloat32);
    auto mesh = torch::meshgrid({lin, lin}, "ij");
    return {mesh[1], mesh[0]};
}

inline torch::Tensor solid(const torch::Tensor& r, const torch::Tensor& g, const torch::Tensor& b) {
    return torch::stack({r, g, b}, -1);
}

// paint color where mask ~ 1
inline torch::Tensor blend(const torch::Tensor& base, const torch::Tensor& mask, float cr, float cg,
                           float cb) {
    auto m = mask.unsqueeze(-1);
    auto color = torch::tensor({cr, cg, cb}).view({1, 1, 3});
    return base * (1 - m) + color * m;
}

}  // namespace detail

// One cartoon portrait in [0, 1], (H, W, 3).
inline torch::Tensor render_face(uint64_t seed, int64_t size = 64) {
    std::mt19937_64 rng(mix_seed(seed));
    auto uni = [&](double lo, double hi) {
        return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
    };

    auto [gx, gy] = detail::make_grid(size);

    // background: vertical two-color gradient, cool hues
    float top_r = uni(0.1, 0.5), top_g = uni(0.2, 0.6), top_b = uni(0.5, 0.9);
    float bot_r = uni(0.3, 0.7), bot_g = uni(0.4, 0.8), bot_b = uni(0.6, 1.0);
    auto img = detail::solid(top_r + (bot_r - top_r) * gy, top_g + (bot_g - top_g) * gy,
                             top_b + (bot_b - top_b) * gy);

    // face oval
    float cx = uni(0.42, 0.58), cy = uni(0.44, 0.56);
    float rx = uni(0.20, 0.30), ry = uni(0.26, 0.36);
    float skin_r = uni(0.75, 0.95), skin_g = uni(0.55, 0.75), skin_b = uni(0.45, 0.62);
    auto face_d = 1.0 - ((gx - cx) / rx).square() - ((gy - cy) / ry).square();
    auto face_mask = detail::soft_mask(face_d, 0.04);
    img = detail::blend(img, face_mask, skin_r, skin_g, skin_b);

    // eyes
    float eye_dy = uni(0.08, 0.14), eye_dx = uni(0.09, 0.14), eye_r = uni(0.025, 0.040);
    float eye_shade = uni(0.05, 0.25);
    for (float sgn : {-1.0f, 1.0f}) {
        auto d = 1.0 - (((gx - (cx + sgn * eye_dx)) / eye_r).square() +
                        ((gy - (cy - eye_dy)) / eye_r).square());
        img = detail::blend(img, detail::soft_mask(d, 0.15) * face_mask, eye_shade, eye_shade,
                            eye_shade + 0.1f);
    }

    // mouth
    float mouth_dy = uni(0.12, 0.20), mouth_w = uni(0.06, 0.13), mouth_h = uni(0.015, 0.035);
    float mouth_r = uni(0.55, 0.85);
    auto mouth_d = 1.0 - ((gx - cx) / mouth_w).square() - ((gy - (cy + mouth_dy)) / mouth_h).square();
    img = detail::blend(img, detail::soft_mask(mouth_d, 0.2) * face_mask, mouth_r, 0.15f, 0.2f);

    return img.clamp(0, 1);
}

// One stripe/checker texture field in [0, 1], (H, W, 3).
inline torch::Tensor render_texture(uint64_t seed, int64_t size = 64) {
    std::mt19937_64 rng(mix_seed(seed ^ 0x7e37a2u));
    auto uni = [&](double lo, double hi) {
        return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
    };
    auto [gx, gy] = detail::make_grid(size);

    float theta = uni(0.0, M_PI);
    float freq = uni(3.0, 9.0), phase = uni(0.0, 2 * M_PI);
    auto u = gx * std::cos(theta) + gy * std::sin(theta);
    auto v = -gx * std::sin(theta) + gy * std::cos(theta);

    torch::Tensor field;
    if (rng() % 2 == 0) {
        field = 0.5f * (1.0f + torch::sin(u * (2 * M_PI * freq) + phase));
    } else {
        float freq2 = uni(3.0, 9.0);
        field = 0.5f * (1.0f + torch::sin(u * (2 * M_PI * freq) + phase) *
                                   torch::sin(v * (2 * M_PI * freq2)));
    }

    float ar = uni(0.0, 1.0), ag = uni(0.0, 1.0), ab = uni(0.0, 1.0);
    float br = uni(0.0, 1.0), bg = uni(0.0, 1.0), bb = uni(0.0, 1.0);
    auto img = detail::solid(ar + (br - ar) * field, ag + (bg - ag) * field, ab + (bb - ab) * field);
    return img.clamp(0, 1);
}

// Write `count` PNGs of the requested family under `root`.
inline void write_dataset(const std::filesystem::path& root, const std::string& family,
                          int64_t count, uint64_t seed, int64_t size = 64) {
    require(family == "faces" || family == "textures", "write_dataset: unknown family " + family);
    std::filesystem::create_directories(root);
    for (int64_t i = 0; i < count; ++i) {
        uint64_t s = mix_seed(seed, static_cast<uint64_t>(i));
        auto img = family == "faces" ? render_face(s, size) : render_texture(s, size);
        auto u8 = (img * 255.0f).round().to(torch::kUInt8);
        char name[40];
        std::snprintf(name, sizeof(name), "%s_%04lld.png", family.c_str(),
                      static_cast<long long>(i));
        data::save_image_u8(root / name, u8);
    }
}

}  // namespace gjscc::toydata
