#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <filesystem>

#include "gjscc/common.hpp"

// Raster file <-> tensor bridging. Stored-domain images are uint8 (H, W, C)
// RGB tensors; see data.hpp for the model-range conversion.
namespace gjscc::data {

inline torch::Tensor mat_to_tensor_u8(const cv::Mat& bgr) {
    require(bgr.type() == CV_8UC3, "mat_to_tensor_u8: expected 8-bit 3-channel image");
    auto t = torch::empty({bgr.rows, bgr.cols, 3}, torch::kUInt8);
    auto acc = t.accessor<uint8_t, 3>();
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            acc[y][x][0] = row[x][2];
            acc[y][x][1] = row[x][1];
            acc[y][x][2] = row[x][0];
        }
    }
    return t;
}

inline cv::Mat tensor_to_mat_u8(const torch::Tensor& rgb) {
    require(rgb.dtype() == torch::kUInt8 && rgb.dim() == 3 && rgb.size(2) == 3,
            "tensor_to_mat_u8: expected uint8 (H, W, 3) tensor");
    auto t = rgb.contiguous();
    cv::Mat out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3);
    auto acc = t.accessor<uint8_t, 3>();
    for (int y = 0; y < out.rows; ++y) {
        auto* row = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < out.cols; ++x) {
            row[x][2] = acc[y][x][0];
            row[x][1] = acc[y][x][1];
            row[x][0] = acc[y][x][2];
        }
    }
    return out;
}

// Area-averaging resize in the stored domain (used only when shrinking
// high-resolution sources to desk scale).
inline torch::Tensor resize_u8(const torch::Tensor& img, int64_t height, int64_t width) {
    if (img.size(0) == height && img.size(1) == width) return img;
    auto f = img.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
    auto r = torch::adaptive_avg_pool2d(f, {height, width});
    return r.squeeze(0).permute({1, 2, 0}).round().clamp(0, 255).to(torch::kUInt8);
}

inline torch::Tensor load_image_u8(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot decode image: " + path.string());
    return mat_to_tensor_u8(m);
}

inline void save_image_u8(const std::filesystem::path& path, const torch::Tensor& rgb) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), tensor_to_mat_u8(rgb)))
        throw DataError("cannot write image: " + path.string());
}

}  // namespace gjscc::data
