#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>

#include "gjscc/common.hpp"

// Complex AWGN channel: bandwidth compression ratio, average-power
// normalization, SNR <-> noise-power conversion and the additive-noise
// transfer function. Symbol vectors are complex tensors of shape (k) or
// (batch, k); all operations act on the last dimension per codeword and are
// differentiable with respect to the symbols (noise enters additively).
namespace gjscc::channel {

struct ChannelConfig {
    double snr_db = 0.0;
    double avg_power = 1.0;  // per-symbol average power
    uint64_t seed = 0;

    double noise_power() const;
};

// Bandwidth compression ratio k/m.
inline double bcr(int64_t m, int64_t k) {
    require(m >= 1, "bcr: source dimension m must be >= 1");
    require(k >= 1, "bcr: channel bandwidth k must be >= 1");
    return static_cast<double>(k) / static_cast<double>(m);
}

// Integer bandwidth whose k/m is closest to the target ratio, ties broken
// downward. Never returns less than 1.
inline int64_t bandwidth_for_bcr(double rho_target, int64_t m) {
    require(m >= 1, "bandwidth_for_bcr: m must be >= 1");
    require(rho_target > 0.0, "bandwidth_for_bcr: rho must be positive");
    const double exact = rho_target * static_cast<double>(m);
    const int64_t lo = std::max<int64_t>(1, static_cast<int64_t>(std::floor(exact)));
    const int64_t hi = lo + 1;
    const double err_lo = std::abs(bcr(m, lo) - rho_target);
    const double err_hi = std::abs(bcr(m, hi) - rho_target);
    return err_lo <= err_hi ? lo : hi;
}

// Noise power sigma^2 from SNR = 10 log10(P/sigma^2).
inline double snr_to_noise_power(double snr_db, double avg_power) {
    require(avg_power > 0.0, "snr_to_noise_power: avg_power must be positive");
    return avg_power * std::pow(10.0, -snr_db / 10.0);
}

inline double ChannelConfig::noise_power() const { return snr_to_noise_power(snr_db, avg_power); }

inline void check_symbols(const torch::Tensor& z, const char* where) {
    require(z.defined() && z.is_complex(), std::string(where) + ": expected a complex tensor");
    require(z.dim() == 1 || z.dim() == 2, std::string(where) + ": expected shape (k) or (batch, k)");
    require(z.size(-1) >= 1, std::string(where) + ": bandwidth k must be >= 1");
}

// Rescale each codeword to average power exactly avg_power:
//   z = sqrt(k * P) * z~ / ||z~||.
// Direction is preserved. An all-zero codeword has no direction and is
// rejected.
inline torch::Tensor normalize_power(const torch::Tensor& z_tilde, double avg_power) {
    check_symbols(z_tilde, "normalize_power");
    require(avg_power > 0.0, "normalize_power: avg_power must be positive");
    const auto k = z_tilde.size(-1);
    auto norm = z_tilde.abs().square().sum(-1, /*keepdim=*/true).sqrt();
    if ((norm.detach() == 0).any().item<bool>())
        throw std::domain_error("normalize_power: all-zero codeword has undefined direction");
    auto scale = std::sqrt(static_cast<double>(k) * avg_power) / norm;
    return z_tilde * scale.to(z_tilde.dtype());
}

// AWGN transfer function z + n, n ~ CN(0, sigma^2 I): each complex component
// carries total variance sigma^2, split evenly between real and imaginary
// parts. Deterministic for a fixed generator state.
inline torch::Tensor awgn(const torch::Tensor& z, double noise_power, torch::Generator& rng) {
    check_symbols(z, "awgn");
    require(noise_power >= 0.0, "awgn: noise_power must be nonnegative");
    if (noise_power == 0.0) return z;
    auto real_dtype = z.dtype() == torch::kComplexDouble ? torch::kFloat64 : torch::kFloat32;
    auto shape = z.sizes().vec();
    shape.push_back(2);  // (…, k, re/im)
    auto parts = torch::randn(shape, rng, torch::TensorOptions().dtype(real_dtype));
    auto noise = torch::view_as_complex(parts * std::sqrt(noise_power / 2.0));
    return z + noise;
}

// Full channel pass under one configuration.
inline torch::Tensor transmit(const torch::Tensor& z_tilde, const ChannelConfig& cfg,
                              torch::Generator& rng) {
    return awgn(normalize_power(z_tilde, cfg.avg_power), cfg.noise_power(), rng);
}

// Encoder outputs arrive as real tensors of even length 2k; consecutive
// value pairs form one complex symbol.
inline torch::Tensor pack_complex(const torch::Tensor& reals) {
    require(reals.defined() && !reals.is_complex(), "pack_complex: expected a real tensor");
    require(reals.size(-1) % 2 == 0, "pack_complex: last dimension must be even");
    auto shape = reals.sizes().vec();
    shape.back() /= 2;
    shape.push_back(2);
    return torch::view_as_complex(reals.reshape(shape).contiguous());
}

inline torch::Tensor unpack_complex(const torch::Tensor& z) {
    check_symbols(z, "unpack_complex");
    auto parts = torch::view_as_real(z);
    auto shape = z.sizes().vec();
    shape.back() *= 2;
    return parts.reshape(shape);
}

}  // namespace gjscc::channel
