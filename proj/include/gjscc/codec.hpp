#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gjscc/channel.hpp"
#include "gjscc/checkpoint.hpp"
#include "gjscc/common.hpp"
#include "gjscc/data.hpp"
#include "gjscc/metrics.hpp"
#include "gjscc/nn_blocks.hpp"

// DeepJSCC forward operator: encoder f (image -> power-normalized complex
// symbols) and decoder g (noisy symbols -> image), both conditioned on the
// current SNR through AF modules, with residual downsampling stages and one
// attention module mid-network.
namespace gjscc::codec {

struct CodecSpec {
    int64_t height = 64, width = 64, channels = 3;
    int64_t bandwidth_k = 16;
    std::vector<int64_t> stage_widths{32, 64, 128, 256};  // one per x2 stage
    int attention_stage = 1;  // attention module after this stage; -1 disables
    double snr_min_db = -5, snr_max_db = 5;
    double avg_power = 1.0;

    int64_t source_dim() const { return height * width * channels; }
    int64_t stage_count() const { return static_cast<int64_t>(stage_widths.size()); }
    int64_t feat_h() const { return height >> stage_count(); }
    int64_t feat_w() const { return width >> stage_count(); }
    int64_t head_channels() const {
        const int64_t cells = feat_h() * feat_w();
        return (2 * bandwidth_k + cells - 1) / cells;
    }

    void validate() const {
        require(channels == 3, "CodecSpec: expected 3 source channels");
        require(!stage_widths.empty(), "CodecSpec: at least one stage required");
        require(height % (1 << stage_count()) == 0 && width % (1 << stage_count()) == 0,
                "CodecSpec: image size must be divisible by 2^stages");
        require(feat_h() >= 1 && feat_w() >= 1, "CodecSpec: too many stages for image size");
        require(bandwidth_k >= 1, "CodecSpec: bandwidth k must be >= 1");
        require(attention_stage < stage_count(), "CodecSpec: attention stage out of range");
        require(snr_max_db > snr_min_db, "CodecSpec: empty SNR range");
        require(avg_power > 0, "CodecSpec: avg_power must be positive");
    }

    std::string canonical() const {
        nlohmann::ordered_json j;
        j["height"] = height;
        j["width"] = width;
        j["channels"] = channels;
        j["bandwidth_k"] = bandwidth_k;
        j["stage_widths"] = stage_widths;
        j["attention_stage"] = attention_stage;
        j["snr_min_db"] = snr_min_db;
        j["snr_max_db"] = snr_max_db;
        j["avg_power"] = avg_power;
        return j.dump();
    }
    std::string fingerprint() const { return checkpoint::fingerprint("codec:" + canonical()); }

    // Desk-scale default for a BCR target: k chosen so |k/m - rho| is minimal.
    static CodecSpec for_bcr(double rho, int64_t size = 64) {
        CodecSpec spec;
        spec.height = spec.width = size;
        spec.bandwidth_k = channel::bandwidth_for_bcr(rho, size * size * 3);
        return spec;
    }
};

struct EncoderImpl : torch::nn::Module {
    CodecSpec spec;
    std::vector<nn::ResidualBlock> blocks;
    std::vector<nn::AFModule> afs;
    nn::AttentionBlock attention{nullptr};
    torch::nn::Conv2d out{nullptr};

    explicit EncoderImpl(CodecSpec spec_) : spec(std::move(spec_)) {
        spec.validate();
        int64_t in = spec.channels;
        for (int64_t i = 0; i < spec.stage_count(); ++i) {
            blocks.push_back(register_module(
                "block" + std::to_string(i),
                nn::ResidualBlock(in, spec.stage_widths[i], nn::Resample::kDown)));
            afs.push_back(
                register_module("af" + std::to_string(i), nn::AFModule(spec.stage_widths[i])));
            in = spec.stage_widths[i];
        }
        if (spec.attention_stage >= 0)
            attention = register_module("attention",
                                        nn::AttentionBlock(spec.stage_widths[spec.attention_stage]));
        out = register_module("out", torch::nn::Conv2d(in, spec.head_channels(), 1));
    }

    // (B, C, H, W) model-range images -> (B, k) power-normalized symbols.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& snr_db) {
        require(x.dim() == 4 && x.size(1) == spec.channels && x.size(2) == spec.height &&
                    x.size(3) == spec.width,
                "encode: input shape does not match codec spec");
        auto snr_norm = nn::normalize_snr(snr_db, spec.snr_min_db, spec.snr_max_db);
        auto h = x;
        for (int64_t i = 0; i < spec.stage_count(); ++i) {
            h = blocks[i]->forward(h);
            h = afs[i]->forward(h, snr_norm);
            if (i == spec.attention_stage) h = attention->forward(h);
        }
        auto flat = out->forward(h).flatten(1).slice(1, 0, 2 * spec.bandwidth_k);
        return channel::normalize_power(channel::pack_complex(flat), spec.avg_power);
    }
};
TORCH_MODULE(Encoder);

struct DecoderImpl : torch::nn::Module {
    CodecSpec spec;
    torch::nn::Conv2d stem{nullptr}, out{nullptr};
    std::vector<nn::ResidualBlock> blocks;
    std::vector<nn::AFModule> afs;
    nn::AttentionBlock attention{nullptr};

    explicit DecoderImpl(CodecSpec spec_) : spec(std::move(spec_)) {
        spec.validate();
        stem = register_module(
            "stem", torch::nn::Conv2d(spec.head_channels(), spec.stage_widths.back(), 1));
        for (int64_t i = spec.stage_count() - 1; i >= 0; --i) {
            int64_t src = spec.stage_widths[i];
            int64_t dst = i > 0 ? spec.stage_widths[i - 1] : spec.stage_widths[0];
            auto tag = std::to_string(spec.stage_count() - 1 - i);
            blocks.push_back(
                register_module("block" + tag, nn::ResidualBlock(src, dst, nn::Resample::kUp)));
            afs.push_back(register_module("af" + tag, nn::AFModule(dst)));
        }
        if (spec.attention_stage >= 0)
            attention = register_module("attention",
                                        nn::AttentionBlock(spec.stage_widths[spec.attention_stage]));
        out = register_module(
            "out", torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.stage_widths[0], spec.channels, 3)
                                         .padding(1)));
        {
            // start near mid-gray so the output clamp is not saturated at init
            torch::NoGradGuard ng;
            out->weight.mul_(0.1);
            out->bias.zero_();
        }
    }

    // (B, k) noisy symbols -> (B, C, H, W) model-range images.
    torch::Tensor forward(const torch::Tensor& zhat, const torch::Tensor& snr_db) {
        require(zhat.dim() == 2 && zhat.size(1) == spec.bandwidth_k,
                "decode: symbol length does not match codec spec");
        auto snr_norm = nn::normalize_snr(snr_db, spec.snr_min_db, spec.snr_max_db);
        auto flat = channel::unpack_complex(zhat);
        const int64_t cells = spec.head_channels() * spec.feat_h() * spec.feat_w();
        if (flat.size(1) < cells) {
            auto pad = torch::zeros({flat.size(0), cells - flat.size(1)}, flat.options());
            flat = torch::cat({flat, pad}, 1);
        }
        auto h = stem->forward(
            flat.view({flat.size(0), spec.head_channels(), spec.feat_h(), spec.feat_w()}));
        for (int64_t j = 0; j < spec.stage_count(); ++j) {
            const int64_t mirrored = spec.stage_count() - 1 - j;  // encoder stage index
            h = blocks[j]->forward(h);
            h = afs[j]->forward(h, snr_norm);
            if (mirrored == spec.attention_stage + 1 && attention) h = attention->forward(h);
        }
        return nn::clamp_range(out->forward(h));
    }
};
TORCH_MODULE(Decoder);

// A = g(eta(f(x))): the trainable encoder/decoder pair around the AWGN
// channel, differentiable end to end in x.
struct ForwardOperatorImpl : torch::nn::Module {
    CodecSpec spec;
    Encoder encoder{nullptr};
    Decoder decoder{nullptr};

    explicit ForwardOperatorImpl(CodecSpec spec_) : spec(std::move(spec_)) {
        encoder = register_module("encoder", Encoder(spec));
        decoder = register_module("decoder", Decoder(spec));
    }

    // One transmission: encoder and decoder see the same SNR.
    torch::Tensor run(const torch::Tensor& x, const torch::Tensor& snr_db, double noise_power,
                      torch::Generator& rng) {
        auto z = encoder->forward(x, snr_db);
        auto zhat = channel::awgn(z, noise_power, rng);
        return decoder->forward(zhat, snr_db);
    }
};
TORCH_MODULE(ForwardOperator);

// ---------------------------------------------------------------------------
// Single-image convenience wrappers (model-range (H, W, C) in, same out).

inline torch::Tensor encode(Encoder& enc, const torch::Tensor& image_hwc, double snr_db) {
    require(image_hwc.dim() == 3, "encode: expected (H, W, C) image");
    auto z = enc->forward(metrics::hwc_to_nchw(image_hwc),
                          torch::tensor({snr_db}, torch::kFloat32));
    return z.squeeze(0);
}

inline torch::Tensor decode(Decoder& dec, const torch::Tensor& zhat, double snr_db) {
    require(zhat.dim() == 1, "decode: expected (k) symbol vector");
    auto x = dec->forward(zhat.unsqueeze(0), torch::tensor({snr_db}, torch::kFloat32));
    return x.squeeze(0).permute({1, 2, 0});
}

inline torch::Tensor apply_operator(ForwardOperator& op, const torch::Tensor& image_hwc,
                                    const channel::ChannelConfig& cfg, torch::Generator& rng) {
    auto snr = torch::tensor({cfg.snr_db}, torch::kFloat32);
    auto out = op->run(metrics::hwc_to_nchw(image_hwc), snr, cfg.noise_power(), rng);
    return out.squeeze(0).permute({1, 2, 0});
}

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
    int epochs = 2;
    int64_t batch_size = 8;
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.99;
    double plateau_factor = 0.8;
    int plateau_patience = 4;
    double gamma1 = 1.0, gamma2 = 1.0;  // MSE / LPIPS weights of the objective
    std::vector<double> train_snrs_db{-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5};
    uint64_t seed = 1;
};

struct TrainLogRow {
    int64_t step;
    double loss, lr, snr_db;
};

struct TrainTrace {
    std::vector<TrainLogRow> rows;
    std::vector<double> val_losses;      // one per validation
    std::vector<double> best_val_trace;  // best-so-far after each validation
    double initial_val = 0;

    std::string to_csv() const {
        std::string out = "step,loss,lr,snr_db\n";
        for (const auto& r : rows)
            out += std::to_string(r.step) + "," + format_double(r.loss) + "," +
                   format_double(r.lr) + "," + format_double(r.snr_db) + "\n";
        return out;
    }
};

struct TrainResult {
    ForwardOperator op{nullptr};
    TrainTrace trace;
    checkpoint::Meta meta;
};

namespace detail {

// (N, 3, H, W) stack of one split at spec resolution.
inline torch::Tensor split_nchw(const data::DatasetManifest& manifest, data::Split split) {
    return data::load_split_images(manifest, split).permute({0, 3, 1, 2}).contiguous();
}

inline double validation_loss(ForwardOperator& op, const torch::Tensor& val, double gamma1,
                              double gamma2, lpips::Extractor& extractor, uint64_t seed,
                              const CodecSpec& spec) {
    torch::NoGradGuard ng;
    double total = 0;
    int64_t count = 0;
    for (double snr : {spec.snr_min_db, (spec.snr_min_db + spec.snr_max_db) / 2, spec.snr_max_db}) {
        auto rng = make_rng(mix_seed(seed, static_cast<uint64_t>(snr * 1000 + 50000)));
        const double sigma2 = channel::snr_to_noise_power(snr, spec.avg_power);
        for (int64_t i = 0; i < val.size(0); i += 16) {
            auto batch = val.slice(0, i, std::min(i + 16, val.size(0)));
            auto snr_t = torch::full({batch.size(0)}, snr, torch::kFloat32);
            auto xhat = op->run(batch, snr_t, sigma2, rng);
            total += metrics::weighted_distortion_nchw(batch, xhat, gamma1, gamma2, &extractor)
                         .sum()
                         .item<double>();
            count += batch.size(0);
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace detail

// End-to-end training of the forward operator on MSE+LPIPS with the SNR drawn
// uniformly per batch. Returns the parameters that achieved the best
// validation loss.
inline TrainResult train_deepjscc(const data::DatasetManifest& manifest, const CodecSpec& spec,
                                  const TrainSchedule& schedule, lpips::Extractor& extractor) {
    spec.validate();
    require(!schedule.train_snrs_db.empty(), "train_deepjscc: empty SNR set");
    auto train = detail::split_nchw(manifest, data::Split::kTrain);
    auto val = detail::split_nchw(manifest, data::Split::kVal);
    require(train.size(0) > 0 && val.size(0) > 0, "train_deepjscc: empty train or val split");

    torch::manual_seed(schedule.seed);
    ForwardOperator op(spec);
    torch::optim::Adam optimizer(
        op->parameters(),
        torch::optim::AdamOptions(schedule.lr).betas({schedule.beta1, schedule.beta2}));

    std::mt19937_64 order_rng(mix_seed(schedule.seed, 0xba7c1));
    auto noise_rng = make_rng(mix_seed(schedule.seed, 0x015e));
    nn::PlateauScheduler plateau{schedule.plateau_factor, schedule.plateau_patience};

    TrainTrace trace;
    trace.initial_val = detail::validation_loss(op, val, schedule.gamma1, schedule.gamma2,
                                                extractor, schedule.seed, spec);
    trace.val_losses.push_back(trace.initial_val);
    trace.best_val_trace.push_back(trace.initial_val);
    double best_val = trace.initial_val;

    // keep the best parameters seen so the returned model never regresses
    // below its initialization
    std::vector<torch::Tensor> best_params;
    auto snapshot = [&] {
        best_params.clear();
        for (const auto& p : op->parameters()) best_params.push_back(p.detach().clone());
    };
    snapshot();

    int64_t step = 0;
    const int64_t n = train.size(0);
    std::vector<int64_t> indices(n);
    std::iota(indices.begin(), indices.end(), 0);

    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        std::shuffle(indices.begin(), indices.end(), order_rng);
        for (int64_t at = 0; at < n; at += schedule.batch_size) {
            auto idx = torch::tensor(std::vector<int64_t>(
                indices.begin() + at,
                indices.begin() + std::min<int64_t>(at + schedule.batch_size, n)));
            auto batch = train.index_select(0, idx);

            const double snr =
                schedule.train_snrs_db[order_rng() % schedule.train_snrs_db.size()];
            auto snr_t = torch::full({batch.size(0)}, snr, torch::kFloat32);
            const double sigma2 = channel::snr_to_noise_power(snr, spec.avg_power);

            optimizer.zero_grad();
            auto xhat = op->run(batch, snr_t, sigma2, noise_rng);
            auto loss = metrics::weighted_distortion_nchw(batch, xhat, schedule.gamma1,
                                                          schedule.gamma2, &extractor)
                            .mean();
            const double loss_v = loss.item<double>();
            if (!std::isfinite(loss_v))
                throw TrainingFailure("train_deepjscc diverged at step " + std::to_string(step) +
                                      " (lr=" + format_double(nn::adam_lr(optimizer)) +
                                      ", snr=" + format_double(snr) + " dB)");
            loss.backward();
            optimizer.step();
            trace.rows.push_back({step, loss_v, nn::adam_lr(optimizer), snr});
            ++step;
        }

        double v = detail::validation_loss(op, val, schedule.gamma1, schedule.gamma2, extractor,
                                           schedule.seed, spec);
        trace.val_losses.push_back(v);
        if (v < best_val) {
            best_val = v;
            snapshot();
        }
        trace.best_val_trace.push_back(best_val);
        if (plateau.step(v)) nn::set_adam_lr(optimizer, nn::adam_lr(optimizer) * plateau.factor);
    }

    {
        torch::NoGradGuard ng;
        auto params = op->parameters();
        for (size_t i = 0; i < params.size(); ++i) params[i].copy_(best_params[i]);
    }

    TrainResult result;
    result.op = op;
    result.trace = trace;
    result.meta = {"deepjscc", spec.fingerprint(),
                   manifest.root.filename().string() + "#s" + std::to_string(manifest.seed),
                   spec.snr_min_db, spec.snr_max_db};
    return result;
}

inline void save_operator(const std::filesystem::path& path, const TrainResult& result) {
    checkpoint::save(path, *result.op, result.meta);
}

inline ForwardOperator load_operator(const std::filesystem::path& path, const CodecSpec& spec) {
    ForwardOperator op(spec);
    checkpoint::load(path, *op, "deepjscc", spec.fingerprint());
    return op;
}

}  // namespace gjscc::codec
