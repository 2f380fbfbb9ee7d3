#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "gjscc/common.hpp"
#include "gjscc/image_io.hpp"

// Dataset ingestion and the storage <-> model range conversions. Model-range
// images ("ImageTensor") are float32 (H, W, C) tensors in [-1, 1].
namespace gjscc::data {

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        default: return "test";
    }
}

inline std::ostream& operator<<(std::ostream& os, Split s) { return os << split_name(s); }

// [-1, 1] <- [0, 255]: f = 2 p / 255 - 1, so both endpoints map exactly.
inline torch::Tensor to_model_range(const torch::Tensor& stored) {
    require(stored.dim() == 3, "to_model_range: expected (H, W, C)");
    require(stored.size(2) == 3, "to_model_range: expected 3 channels");
    require(stored.dtype() == torch::kUInt8, "to_model_range: expected 8-bit storage");
    return stored.to(torch::kFloat32) * (2.0f / 255.0f) - 1.0f;
}

inline torch::Tensor from_model_range(const torch::Tensor& img) {
    require(img.dim() == 3 && img.size(2) == 3, "from_model_range: expected (H, W, 3)");
    return ((img.clamp(-1, 1) + 1.0f) * (255.0f / 2.0f)).round().to(torch::kUInt8);
}

struct DatasetManifest {
    static constexpr const char* kFormatVersion = "gjscc-manifest v1";

    std::filesystem::path root;
    std::vector<std::string> ids;   // shuffle order
    std::vector<Split> assignment;  // aligned with ids
    int64_t height = 0, width = 0, channels = 3;
    uint64_t seed = 0;

    std::vector<std::string> split_ids(Split s) const {
        std::vector<std::string> out;
        for (size_t i = 0; i < ids.size(); ++i)
            if (assignment[i] == s) out.push_back(ids[i]);
        return out;
    }

    size_t count(Split s) const { return split_ids(s).size(); }

    std::string serialize() const {
        std::string out = std::string(kFormatVersion) + "\n";
        out += "seed " + std::to_string(seed) + "\n";
        out += "size " + std::to_string(height) + " " + std::to_string(width) + " " +
               std::to_string(channels) + "\n";
        for (size_t i = 0; i < ids.size(); ++i)
            out += ids[i] + "\t" + split_name(assignment[i]) + "\n";
        return out;
    }
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    static const char* kKnown[] = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif"};
    return std::any_of(std::begin(kKnown), std::end(kKnown),
                       [&](const char* k) { return ext == k; });
}

inline std::filesystem::path manifest_path(const std::filesystem::path& root, uint64_t seed,
                                           int64_t h, int64_t w) {
    return root / ("gjscc_manifest_s" + std::to_string(seed) + "_" + std::to_string(h) + "x" +
                   std::to_string(w) + ".tsv");
}

inline bool parse_manifest(const std::filesystem::path& file, DatasetManifest* out) {
    std::ifstream in(file);
    if (!in) return false;
    std::string line;
    if (!std::getline(in, line) || line != DatasetManifest::kFormatVersion) return false;
    if (!std::getline(in, line) || line.rfind("seed ", 0) != 0) return false;
    out->seed = std::stoull(line.substr(5));
    if (!std::getline(in, line) || line.rfind("size ", 0) != 0) return false;
    std::istringstream sz(line.substr(5));
    sz >> out->height >> out->width >> out->channels;
    out->ids.clear();
    out->assignment.clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) return false;
        out->ids.push_back(line.substr(0, tab));
        auto s = line.substr(tab + 1);
        if (s == "train")
            out->assignment.push_back(Split::kTrain);
        else if (s == "val")
            out->assignment.push_back(Split::kVal);
        else if (s == "test")
            out->assignment.push_back(Split::kTest);
        else
            return false;
    }
    return !out->ids.empty();
}

}  // namespace detail

// Deterministic 8:1:1 split of the images under `root`. The shuffle is a
// pure function of `seed`; the result is persisted next to the data so later
// runs (and other processes) reuse the identical assignment.
inline DatasetManifest load_and_split(const std::filesystem::path& root, uint64_t seed,
                                      std::pair<int64_t, int64_t> image_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());

    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file() && detail::is_image_file(e.path()))
            ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.size() < 10)
        throw DataError("insufficient data: need at least 10 images, found " +
                        std::to_string(ids.size()) + " in " + root.string());

    DatasetManifest manifest;
    manifest.root = root;
    manifest.height = image_size.first;
    manifest.width = image_size.second;
    manifest.seed = seed;

    const auto file = detail::manifest_path(root, seed, image_size.first, image_size.second);
    DatasetManifest cached;
    if (detail::parse_manifest(file, &cached)) {
        auto sorted = cached.ids;
        std::sort(sorted.begin(), sorted.end());
        if (sorted == ids) {
            cached.root = root;
            return cached;
        }
    }

    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    const size_t n = ids.size();
    const size_t n_val = static_cast<size_t>(std::llround(n / 10.0));
    const size_t n_test = n_val;
    const size_t n_train = n - n_val - n_test;
    manifest.ids = ids;
    manifest.assignment.resize(n);
    for (size_t i = 0; i < n; ++i) {
        manifest.assignment[i] = i < n_train                ? Split::kTrain
                                 : (i < n_train + n_val) ? Split::kVal
                                                         : Split::kTest;
    }

    atomic_write_file(file, manifest.serialize());
    return manifest;
}

// Model-range image stack (N, H, W, C) for one split, load order = manifest order.
inline torch::Tensor load_split_images(const DatasetManifest& manifest, Split split) {
    std::vector<torch::Tensor> images;
    for (const auto& id : manifest.split_ids(split)) {
        auto u8 = load_image_u8(manifest.root / id);
        u8 = resize_u8(u8, manifest.height, manifest.width);
        images.push_back(to_model_range(u8));
    }
    if (images.empty()) throw DataError("empty split requested from manifest");
    return torch::stack(images);
}

}  // namespace gjscc::data
