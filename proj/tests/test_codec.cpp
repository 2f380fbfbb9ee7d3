#include "test_prelude.hpp"

#include <filesystem>

#include "gjscc/codec.hpp"
#include "gjscc/toydata.hpp"

using namespace gjscc;
namespace fs = std::filesystem;

namespace {

codec::CodecSpec tiny_spec() {
    codec::CodecSpec spec;
    spec.height = spec.width = 16;
    spec.bandwidth_k = 8;
    spec.stage_widths = {8, 12, 16, 24};
    return spec;
}

torch::Tensor faces_nchw(int count, int64_t size, uint64_t seed = 0) {
    std::vector<torch::Tensor> xs;
    for (int i = 0; i < count; ++i)
        xs.push_back(toydata::render_face(mix_seed(seed, i), size) * 2 - 1);
    return torch::stack(xs).permute({0, 3, 1, 2}).contiguous();
}

struct TempDataset {
    fs::path root;
    TempDataset(const std::string& tag, int count, int64_t size) {
        root = fs::temp_directory_path() / ("gjscc_codec_" + tag + std::to_string(::getpid()));
        fs::remove_all(root);
        toydata::write_dataset(root, "faces", count, 5, size);
    }
    ~TempDataset() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("codec spec geometry") {
    auto spec = codec::CodecSpec::for_bcr(0.0013);
    CHECK(spec.bandwidth_k == 16);
    CHECK(spec.head_channels() == 2);
    CHECK(codec::CodecSpec::for_bcr(0.0052).bandwidth_k == 64);

    auto bad = tiny_spec();
    bad.height = 20;  // not divisible by 2^4
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    CHECK(spec.fingerprint() != tiny_spec().fingerprint());
}

TEST_CASE("encode meets the power constraint and shape contract") {
    torch::manual_seed(1);
    auto spec = tiny_spec();
    codec::Encoder enc(spec);
    auto x = faces_nchw(50, 16);
    auto z = enc->forward(x, torch::zeros({50}));
    CHECK(z.size(1) == spec.bandwidth_k);
    CHECK(z.is_complex());

    auto avg = z.abs().square().sum(-1) / static_cast<double>(spec.bandwidth_k);
    CHECK(((avg - spec.avg_power).abs() / spec.avg_power < 1e-5).all().item<bool>());

    SECTION("single-image wrapper") {
        auto img = toydata::render_face(3, 16) * 2 - 1;
        auto zi = codec::encode(enc, img, 0.0);
        CHECK(zi.sizes() == torch::IntArrayRef({spec.bandwidth_k}));
        double p = zi.abs().square().sum().item<double>() / spec.bandwidth_k;
        CHECK(std::abs(p - 1.0) < 1e-5);
    }
    SECTION("shape mismatch rejected") {
        CHECK_THROWS_AS(enc->forward(torch::zeros({1, 3, 8, 8}), torch::zeros({1})),
                        std::invalid_argument);
    }
}

TEST_CASE("AF conditioning is live in encoder and decoder") {
    torch::manual_seed(2);
    auto spec = tiny_spec();
    codec::Encoder enc(spec);
    codec::Decoder dec(spec);
    auto x = faces_nchw(1, 16);

    auto z_lo = enc->forward(x, torch::full({1}, -5.0));
    auto z_hi = enc->forward(x, torch::full({1}, 5.0));
    CHECK((z_lo - z_hi).abs().sum().item<double>() > 1e-6);

    auto zhat = z_lo.detach();
    auto y_lo = dec->forward(zhat, torch::full({1}, -5.0));
    auto y_hi = dec->forward(zhat, torch::full({1}, 5.0));
    CHECK((y_lo - y_hi).abs().mean().item<double>() > 0.0);
}

TEST_CASE("decode shape and range, and noiseless composition") {
    torch::manual_seed(3);
    auto spec = tiny_spec();
    codec::ForwardOperator op(spec);
    auto x = faces_nchw(2, 16);
    auto snr = torch::zeros({2});

    auto rng = make_rng(7);
    auto out = op->run(x, snr, 0.0, rng);
    CHECK(out.sizes() == x.sizes());
    CHECK(out.min().item<float>() >= -1.0f);
    CHECK(out.max().item<float>() <= 1.0f);

    // sigma^2 = 0 equals decode(encode(x)) exactly
    auto manual = op->decoder->forward(op->encoder->forward(x, snr), snr);
    CHECK(torch::equal(out, manual));

    SECTION("deterministic under a fixed seed") {
        auto r1 = make_rng(9), r2 = make_rng(9);
        auto a = op->run(x, snr, 0.5, r1);
        auto b = op->run(x, snr, 0.5, r2);
        CHECK(torch::equal(a, b));
    }
    SECTION("symbol length mismatch rejected") {
        auto bad = torch::zeros({1, spec.bandwidth_k + 1},
                                torch::TensorOptions().dtype(torch::kComplexFloat));
        CHECK_THROWS_AS(op->decoder->forward(bad, torch::zeros({1})), std::invalid_argument);
    }
}

TEST_CASE("forward operator gradient w.r.t. input matches finite differences") {
    torch::manual_seed(4);
    auto spec = tiny_spec();
    codec::ForwardOperator op(spec);
    auto target = faces_nchw(1, 16, 101);
    auto x = faces_nchw(1, 16, 55).set_requires_grad(true);
    auto snr = torch::zeros({1});

    {
        // float32 pipeline: nothing in the forward path blocks gradients
        auto rng = make_rng(3);
        auto loss32 = (op->run(x, snr, 0.2, rng) - target).square().mean();
        loss32.backward();
        CHECK(x.grad().abs().sum().item<double>() > 0.0);
        CHECK(x.grad().isfinite().all().item<bool>());
    }

    // the FD comparison itself runs in double: with an untrained operator the
    // input gradient is ~1e-10, far below float32 FD resolution
    op->to(torch::kFloat64);
    target = target.to(torch::kFloat64);
    auto xd = x.detach().to(torch::kFloat64).set_requires_grad(true);
    auto f = [&](const torch::Tensor& t) {
        auto rng = make_rng(3);  // fixed realization
        return (op->run(t, snr, 0.2, rng) - target).square().mean();
    };
    auto loss = f(xd);
    loss.backward();
    auto grad = xd.grad().clone();

    std::mt19937_64 pick(13);
    const double eps = 1e-3;
    double num = 0, den = 0;
    for (int s = 0; s < 16; ++s) {
        int64_t c = pick() % 3, i = pick() % 16, j = pick() % 16;
        auto probe = xd.detach().clone();
        probe.index_put_({0, c, i, j}, probe.index({0, c, i, j}) + eps);
        double up = f(probe).item<double>();
        probe.index_put_({0, c, i, j}, probe.index({0, c, i, j}) - 2 * eps);
        double dn = f(probe).item<double>();
        double fd = (up - dn) / (2 * eps);
        double ad = grad.index({0, c, i, j}).item<double>();
        num += (fd - ad) * (fd - ad);
        den += ad * ad;
    }
    REQUIRE(den > 0);
    CHECK(std::sqrt(num / den) < 1e-2);
}

TEST_CASE("plateau scheduler contract") {
    nn::PlateauScheduler p{0.8, 4};
    CHECK(!p.step(1.0));
    CHECK(!p.step(0.9));   // improvement
    CHECK(!p.step(0.95));  // 1 bad
    CHECK(!p.step(0.95));  // 2
    CHECK(!p.step(0.95));  // 3
    CHECK(p.step(0.95));   // 4 consecutive -> reduce
    CHECK(!p.step(0.95));  // counter reset
}

TEST_CASE("train_deepjscc on a toy set") {
    TempDataset ds("train", 32, 16);
    auto manifest = data::load_and_split(ds.root, 11, {16, 16});
    auto spec = tiny_spec();
    auto extractor = lpips::make_hermetic_extractor();

    codec::TrainSchedule schedule;
    schedule.epochs = 2;
    schedule.batch_size = 8;
    schedule.seed = 21;

    auto result = codec::train_deepjscc(manifest, spec, schedule, extractor);

    SECTION("best-so-far validation trace is non-increasing and ends <= initial") {
        auto& best = result.trace.best_val_trace;
        REQUIRE(best.size() >= 2);
        for (size_t i = 1; i < best.size(); ++i) CHECK(best[i] <= best[i - 1]);
        double final_val = codec::detail::validation_loss(
            result.op, codec::detail::split_nchw(manifest, data::Split::kVal), 1.0, 1.0,
            extractor, schedule.seed, spec);
        CHECK(final_val <= result.trace.initial_val + 1e-9);
    }
    SECTION("training log records step, loss, lr, snr") {
        REQUIRE(!result.trace.rows.empty());
        auto csv = result.trace.to_csv();
        CHECK(csv.rfind("step,loss,lr,snr_db\n", 0) == 0);
        for (const auto& row : result.trace.rows) {
            CHECK(std::isfinite(row.loss));
            CHECK(row.lr > 0);
        }
    }
    SECTION("seeded reruns reproduce the loss trace") {
        auto again = codec::train_deepjscc(manifest, spec, schedule, extractor);
        REQUIRE(again.trace.rows.size() == result.trace.rows.size());
        CHECK(std::abs(again.trace.rows[std::min<size_t>(10, again.trace.rows.size() - 1)].loss -
                       result.trace.rows[std::min<size_t>(10, result.trace.rows.size() - 1)].loss) <
              1e-6);
    }
    SECTION("checkpoint round trip and fingerprint rejection") {
        auto path = fs::temp_directory_path() / "gjscc_ckpt_test.pt";
        codec::save_operator(path, result);
        auto loaded = codec::load_operator(path, spec);
        auto x = faces_nchw(1, 16);
        auto rng1 = make_rng(5), rng2 = make_rng(5);
        CHECK(torch::equal(loaded->run(x, torch::zeros({1}), 0.0, rng1),
                           result.op->run(x, torch::zeros({1}), 0.0, rng2)));

        auto other = tiny_spec();
        other.bandwidth_k = 4;
        CHECK_THROWS_AS(codec::load_operator(path, other), ConfigError);
        fs::remove(path);
        fs::remove(path.string() + ".json");
    }
}

TEST_CASE("trained encoder still satisfies the power constraint") {
    // power normalization is structural, not learned: any parameters satisfy it
    torch::manual_seed(8);
    auto spec = tiny_spec();
    codec::Encoder enc(spec);
    for (auto& p : enc->parameters()) p.data().mul_(3.7);  // arbitrary perturbation
    auto x = faces_nchw(100, 16, 77);
    auto z = enc->forward(x, torch::full({100}, 2.0));
    auto avg = z.abs().square().sum(-1) / static_cast<double>(spec.bandwidth_k);
    CHECK(((avg - spec.avg_power).abs() / spec.avg_power < 1e-5).all().item<bool>());
}
