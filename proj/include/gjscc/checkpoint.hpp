#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <string>

#include "gjscc/common.hpp"

// Model checkpoints: a torch parameter archive plus a JSON sidecar carrying
// the format version, a fingerprint of the architecture spec, the training
// dataset identifier and the trained SNR range. Loading against a mismatched
// spec fingerprint is rejected.
namespace gjscc::checkpoint {

constexpr int kFormatVersion = 1;

struct Meta {
    std::string kind;              // "deepjscc" | "generator" | "generative" | ...
    std::string spec_fingerprint;  // hex64 over the canonical spec material
    std::string dataset_id;
    double snr_min_db = 0, snr_max_db = 0;
    int format_version = kFormatVersion;
};

inline std::string fingerprint(const std::string& canonical_material) {
    return hex64(fnv1a64(canonical_material));
}

inline void save(const std::filesystem::path& path, const torch::nn::Module& module,
                 const Meta& meta) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    module.save(archive);
    archive.save_to(path.string());

    nlohmann::ordered_json j;
    j["format_version"] = meta.format_version;
    j["kind"] = meta.kind;
    j["spec_fingerprint"] = meta.spec_fingerprint;
    j["dataset_id"] = meta.dataset_id;
    j["snr_min_db"] = meta.snr_min_db;
    j["snr_max_db"] = meta.snr_max_db;
    atomic_write_file(path.string() + ".json", j.dump(2) + "\n");
}

inline Meta read_meta(const std::filesystem::path& path) {
    auto meta_path = path.string() + ".json";
    if (!std::filesystem::exists(meta_path))
        throw ConfigError("checkpoint metadata not found: " + meta_path);
    auto j = nlohmann::json::parse(read_text_file(meta_path));
    Meta meta;
    meta.format_version = j.at("format_version").get<int>();
    if (meta.format_version != kFormatVersion)
        throw ConfigError("unsupported checkpoint format version " +
                          std::to_string(meta.format_version));
    meta.kind = j.at("kind").get<std::string>();
    meta.spec_fingerprint = j.at("spec_fingerprint").get<std::string>();
    meta.dataset_id = j.at("dataset_id").get<std::string>();
    meta.snr_min_db = j.at("snr_min_db").get<double>();
    meta.snr_max_db = j.at("snr_max_db").get<double>();
    return meta;
}

// Load parameters into a freshly built module after verifying kind and spec.
inline Meta load(const std::filesystem::path& path, torch::nn::Module& module,
                 const std::string& expected_kind, const std::string& expected_fingerprint) {
    if (!std::filesystem::exists(path))
        throw ConfigError("checkpoint not found: " + path.string());
    auto meta = read_meta(path);
    if (meta.kind != expected_kind)
        throw ConfigError("checkpoint kind mismatch: have " + meta.kind + ", want " +
                          expected_kind);
    if (meta.spec_fingerprint != expected_fingerprint)
        throw ConfigError("checkpoint spec fingerprint mismatch: have " + meta.spec_fingerprint +
                          ", want " + expected_fingerprint);
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    module.load(archive);
    return meta;
}

}  // namespace gjscc::checkpoint
