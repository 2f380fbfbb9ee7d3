#include "test_prelude.hpp"

#include <cmath>
#include <filesystem>

#include "gjscc/metrics.hpp"
#include "gjscc/toydata.hpp"

using namespace gjscc;
namespace mt = gjscc::metrics;

namespace {

torch::Tensor face_model(uint64_t seed, int64_t size = 64) {
    return toydata::render_face(seed, size) * 2 - 1;
}

// ---------------------------------------------------------------------------
// Brute-force oracles (independent of the conv-based implementation path)

double mse_oracle(const torch::Tensor& x, const torch::Tensor& y) {
    auto a = x.to(torch::kFloat64).contiguous(), b = y.to(torch::kFloat64).contiguous();
    auto pa = a.accessor<double, 3>(), pb = b.accessor<double, 3>();
    double sum = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < a.size(0); ++i)
        for (int64_t j = 0; j < a.size(1); ++j)
            for (int64_t c = 0; c < a.size(2); ++c) {
                double d = (pa[i][j][c] - pb[i][j][c]) * 127.5;
                sum += d * d;
                ++n;
            }
    return sum / n;
}

struct OracleScale {
    double l, c, s;
};

// Direct loop evaluation of the windowed similarity components on one scale.
OracleScale oracle_scale(const std::vector<std::vector<std::vector<double>>>& x,
                         const std::vector<std::vector<std::vector<double>>>& y,
                         const mt::MsSsimConfig& cfg) {
    const int K = cfg.window_size;
    std::vector<double> win(K);
    double wsum = 0;
    for (int i = 0; i < K; ++i) {
        double d = i - (K - 1) / 2.0;
        win[i] = std::exp(-d * d / (2 * cfg.window_sigma * cfg.window_sigma));
        wsum += win[i];
    }
    for (auto& w : win) w /= wsum;

    double lsum = 0, csum = 0, ssum = 0;
    int64_t count = 0;
    const int C = static_cast<int>(x.size());
    const int H = static_cast<int>(x[0].size());
    const int W = static_cast<int>(x[0][0].size());
    for (int c = 0; c < C; ++c)
        for (int i = 0; i + K <= H; ++i)
            for (int j = 0; j + K <= W; ++j) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int a = 0; a < K; ++a)
                    for (int b = 0; b < K; ++b) {
                        double w = win[a] * win[b];
                        double xv = x[c][i + a][j + b], yv = y[c][i + a][j + b];
                        mx += w * xv;
                        my += w * yv;
                        xx += w * xv * xv;
                        yy += w * yv * yv;
                        xy += w * xv * yv;
                    }
                double vx = std::max(xx - mx * mx, 0.0), vy = std::max(yy - my * my, 0.0);
                double cov = xy - mx * my;
                lsum += (2 * mx * my + cfg.c1) / (mx * mx + my * my + cfg.c1);
                csum += (2 * std::sqrt(vx) * std::sqrt(vy) + cfg.c2) / (vx + vy + cfg.c2);
                ssum += (cov + cfg.c3) / (std::sqrt(vx) * std::sqrt(vy) + cfg.c3);
                ++count;
            }
    return {lsum / count, csum / count, ssum / count};
}

double ms_ssim_oracle(const torch::Tensor& x_in, const torch::Tensor& y_in,
                      const mt::MsSsimConfig& cfg) {
    auto to_vec = [](const torch::Tensor& t) {
        auto d = ((t.to(torch::kFloat64) + 1) * 127.5).permute({2, 0, 1}).contiguous();
        auto a = d.accessor<double, 3>();
        std::vector<std::vector<std::vector<double>>> out(
            d.size(0), std::vector<std::vector<double>>(d.size(1), std::vector<double>(d.size(2))));
        for (int64_t c = 0; c < d.size(0); ++c)
            for (int64_t i = 0; i < d.size(1); ++i)
                for (int64_t j = 0; j < d.size(2); ++j) out[c][i][j] = a[c][i][j];
        return out;
    };
    auto halve = [](std::vector<std::vector<std::vector<double>>>& img) {
        for (auto& ch : img) {
            std::vector<std::vector<double>> small(ch.size() / 2,
                                                   std::vector<double>(ch[0].size() / 2));
            for (size_t i = 0; i < small.size(); ++i)
                for (size_t j = 0; j < small[0].size(); ++j)
                    small[i][j] = (ch[2 * i][2 * j] + ch[2 * i + 1][2 * j] + ch[2 * i][2 * j + 1] +
                                   ch[2 * i + 1][2 * j + 1]) /
                                  4.0;
            ch = std::move(small);
        }
    };

    auto x = to_vec(x_in), y = to_vec(y_in);
    double value = 1.0;
    for (int j = 0; j < cfg.levels; ++j) {
        auto st = oracle_scale(x, y, cfg);
        value *= std::pow(std::max(st.c, 0.0), cfg.weights[j]) *
                 std::pow(std::max(st.s, 0.0), cfg.weights[j]);
        if (j == cfg.levels - 1) value *= std::pow(std::max(st.l, 0.0), cfg.weights[j]);
        if (j + 1 < cfg.levels) {
            halve(x);
            halve(y);
        }
    }
    return value;
}

}  // namespace

TEST_CASE("mse on the 255 scale") {
    auto x = face_model(1);
    CHECK(mt::mse(x, x) == 0.0);

    auto black = torch::full({8, 8, 3}, -1.0f);
    auto white = torch::full({8, 8, 3}, 1.0f);
    CHECK_THAT(mt::mse(black, white), Catch::Matchers::WithinAbs(65025.0, 1e-9));

    auto y = face_model(2);
    double ours = mt::mse(x, y), brute = mse_oracle(x, y);
    CHECK(std::abs(ours - brute) / brute < 1e-9);

    CHECK_THROWS_AS(mt::mse(x, torch::zeros({4, 4, 3})), std::invalid_argument);
}

TEST_CASE("psnr follows Eq-form and caps at identity") {
    CHECK_THAT(mt::psnr_from_mse(65025.0), Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(mt::psnr_from_mse(650.25), Catch::Matchers::WithinAbs(20.0, 1e-12));
    auto x = face_model(3);
    CHECK(mt::psnr(x, x) == mt::kPsnrCapDb);

    SECTION("algebraic round trip with mse") {
        auto y = face_model(4);
        double m = mt::mse(x, y);
        CHECK(mt::psnr(x, y) == 10.0 * std::log10(255.0 * 255.0 / m));
    }
    SECTION("permutation invariance of mse/psnr") {
        auto y = face_model(5);
        auto perm = torch::randperm(64, make_rng(6));
        auto xp = x.index_select(0, perm), yp = y.index_select(0, perm);
        CHECK_THAT(mt::mse(xp, yp), Catch::Matchers::WithinRel(mt::mse(x, y), 1e-12));
    }
}

TEST_CASE("ms_ssim matches the direct windowed-formula oracle") {
    auto cfg = mt::MsSsimConfig::make(3);
    auto rng = make_rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = face_model(100 + trial);
        auto y = (x + 0.12f * torch::randn(x.sizes(), rng)).clamp(-1, 1);
        double ours = mt::ms_ssim(x, y, cfg);
        double brute = ms_ssim_oracle(x, y, cfg);
        CAPTURE(trial, ours, brute);
        CHECK(std::abs(ours - brute) < 1e-6);
    }
}

TEST_CASE("ms_ssim basic properties") {
    auto cfg = mt::MsSsimConfig::make(3);
    auto x = face_model(7);
    CHECK_THAT(mt::ms_ssim(x, x, cfg), Catch::Matchers::WithinAbs(1.0, 1e-9));

    auto rng = make_rng(8);
    for (int i = 0; i < 4; ++i) {
        auto a = face_model(20 + i);
        auto b = (a + 0.3f * torch::randn(a.sizes(), rng)).clamp(-1, 1);
        double ab = mt::ms_ssim(a, b, cfg), ba = mt::ms_ssim(b, a, cfg);
        CHECK(std::abs(ab - ba) < 1e-9);
        CHECK(ab <= 1.0 + 1e-9);
        CHECK(ab >= 0.0);
        CHECK(ab < 1.0);  // differs from identity
    }

    SECTION("window underflow at the coarsest scale is rejected") {
        auto small = face_model(9, 32);  // 5 levels -> 2x2 at the coarsest
        CHECK_THROWS_AS(mt::ms_ssim(small, small, mt::MsSsimConfig::make(5)),
                        std::invalid_argument);
    }
    SECTION("config invariants") {
        auto bad = mt::MsSsimConfig::make(3);
        bad.weights = {0.5, 0.5};
        CHECK_THROWS_AS(mt::ms_ssim(x, x, bad), std::invalid_argument);
    }
}

TEST_CASE("lpips axioms under the hermetic extractor") {
    auto ex = lpips::make_hermetic_extractor();
    auto x = face_model(11);

    CHECK(mt::lpips_distance(x, x, ex) == 0.0);

    SECTION("symmetry and nonnegativity") {
        for (int i = 0; i < 3; ++i) {
            auto y = face_model(30 + i);
            double ab = mt::lpips_distance(x, y, ex), ba = mt::lpips_distance(y, x, ex);
            CHECK(std::abs(ab - ba) < 1e-9);
            CHECK(ab >= 0.0);
        }
    }
    SECTION("deterministic features") {
        auto y = face_model(31);
        CHECK(mt::lpips_distance(x, y, ex) == mt::lpips_distance(x, y, ex));
    }
    SECTION("noise monotonicity in the mean over 20 draws") {
        auto rng = make_rng(55);
        double prev = -1;
        for (double sigma : {0.01, 0.05, 0.1}) {
            double sum = 0;
            for (int d = 0; d < 20; ++d) {
                auto noisy = (x + sigma * torch::randn(x.sizes(), rng)).clamp(-1, 1);
                sum += mt::lpips_distance(x, noisy, ex);
            }
            double mean = sum / 20;
            CHECK(mean >= prev);
            prev = mean;
        }
    }
    SECTION("save/load reproduces the provider exactly") {
        auto path = std::filesystem::temp_directory_path() / "gjscc_lpips_test.pt";
        lpips::save_extractor(ex, path);
        auto loaded = lpips::load_extractor(path);
        CHECK(loaded->identifier == ex->identifier);
        auto y = face_model(32);
        CHECK(mt::lpips_distance(x, y, *&loaded) == mt::lpips_distance(x, y, ex));
        std::filesystem::remove(path);
        std::filesystem::remove(path.string() + ".json");
        CHECK_THROWS_AS(lpips::load_extractor(path), ConfigError);
    }
}

TEST_CASE("weighted distortion") {
    auto ex = lpips::make_hermetic_extractor();
    auto x = face_model(41), y = face_model(42);

    CHECK(mt::weighted_distortion(x, x, 1.0, 1.0, &ex).item<double>() == 0.0);

    SECTION("gamma2 = 0 reduces to the squared-error term") {
        auto xd = x.to(torch::kFloat64), yd = y.to(torch::kFloat64);
        double got = mt::weighted_distortion(xd, yd, 1.0, 0.0).item<double>();
        double expect = (xd - yd).square().mean().item<double>();
        CHECK(std::abs(got - expect) < 1e-9);
    }
    SECTION("gamma1 = gamma2 = 1 equals mse + lpips") {
        double got = mt::weighted_distortion(x, y, 1.0, 1.0, &ex).item<double>();
        double expect =
            (x - y).square().mean().item<double>() + mt::lpips_distance(x, y, ex);
        CHECK_THAT(got, Catch::Matchers::WithinRel(expect, 1e-6));
    }
    SECTION("invalid weights") {
        CHECK_THROWS_AS(mt::weighted_distortion(x, y, 0.0, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(mt::weighted_distortion(x, y, 1.0, 1.0, nullptr), ConfigError);
    }
}

TEST_CASE("weighted distortion gradient matches central finite differences") {
    auto ex = lpips::make_hermetic_extractor();
    ex->to(torch::kFloat64);
    auto x = face_model(51, 16).to(torch::kFloat64);
    auto xhat = (face_model(52, 16).to(torch::kFloat64) * 0.7).set_requires_grad(true);

    auto f = [&](const torch::Tensor& t) {
        return mt::weighted_distortion(x, t, 1.0, 1.0, &ex);
    };
    auto loss = f(xhat);
    loss.backward();
    auto grad = xhat.grad().clone();

    auto rng = std::mt19937_64(7);
    const double eps = 1e-6;
    double num = 0, den = 0;
    for (int s = 0; s < 24; ++s) {
        int64_t i = rng() % 16, j = rng() % 16, c = rng() % 3;
        auto probe = xhat.detach().clone();
        probe.index_put_({i, j, c}, probe.index({i, j, c}) + eps);
        double up = f(probe).item<double>();
        probe.index_put_({i, j, c}, probe.index({i, j, c}) - 2 * eps);
        double dn = f(probe).item<double>();
        double fd = (up - dn) / (2 * eps);
        double ad = grad.index({i, j, c}).item<double>();
        num += (fd - ad) * (fd - ad);
        den += ad * ad;
    }
    REQUIRE(den > 0);
    CHECK(std::sqrt(num / den) < 1e-3);
}

TEST_CASE("metric report aggregates are arithmetic means") {
    mt::MetricReport rep;
    rep.meta = {"deepjscc", 0.0, 0.0013, 1, "abc"};
    rep.per_image = {{"a", 10, 30, 0.9, 0.2}, {"b", 20, 20, 0.7, 0.4}};
    CHECK(rep.mean_mse() == 15.0);
    CHECK(rep.mean_psnr() == 25.0);
    CHECK(rep.mean_ms_ssim() == Catch::Approx(0.8));
    CHECK(rep.mean_lpips() == Catch::Approx(0.3));
}
