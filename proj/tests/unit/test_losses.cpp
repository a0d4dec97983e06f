#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "novelview/errors.hpp"
#include "novelview/losses.hpp"
#include "test_support.hpp"

namespace nvs {
namespace {

TEST(LatentConsistency, Basics) {
    auto z = torch::rand({2, 8});
    EXPECT_EQ(latent_consistency(z, z).item<double>(), 0.0);
    EXPECT_DOUBLE_EQ(latent_consistency(torch::ones({4}), torch::zeros({4})).item<double>(), 1.0);
    auto y = torch::rand({2, 8});
    EXPECT_EQ(latent_consistency(z, y).item<float>(), latent_consistency(y, z).item<float>());
    EXPECT_THROW(latent_consistency(torch::ones({4}), torch::ones({5})), std::invalid_argument);
}

TEST(PoseConsistency, WrapAroundOnFullCircle) {
    const auto cars = PoseRange::named("shapenet_cars");
    auto p = torch::tensor({{359.0, 27.0, 1.2}}, torch::kFloat64);
    auto q = torch::tensor({{1.0, 27.0, 1.2}}, torch::kFloat64);
    auto terms = pose_consistency_terms_unit(remap_pose_to_unit(p, cars), remap_pose_to_unit(q, cars), cars);
    EXPECT_NEAR(terms[0].item<double>(), std::pow(2.0 / 360.0, 2), 1e-15);
    EXPECT_EQ(terms[1].item<double>(), 0.0);
    EXPECT_EQ(pose_consistency(p, p, cars).item<double>(), 0.0);

    // +360 on both azimuths changes nothing
    auto p2 = p.clone();
    auto q2 = q.clone();
    p2[0][0] += 360.0;
    q2[0][0] += 360.0;
    EXPECT_NEAR(pose_consistency(p2, q2, cars).item<double>(), pose_consistency(p, q, cars).item<double>(), 1e-15);
}

TEST(PoseConsistency, NonWrappingEndpoints) {
    const auto celeba = PoseRange::named("celeba");
    auto p = torch::tensor({{220.0, 90.0, 1.0}}, torch::kFloat64);
    auto q = torch::tensor({{320.0, 90.0, 1.0}}, torch::kFloat64);
    auto terms = pose_consistency_terms_unit(remap_pose_to_unit(p, celeba), remap_pose_to_unit(q, celeba), celeba);
    EXPECT_DOUBLE_EQ(terms[0].item<double>(), 1.0);
    EXPECT_DOUBLE_EQ(pose_consistency(p, q, celeba).item<double>(), 1.0 / 3.0);
}

TEST(PoseConsistency, OutOfRangeIsDomainError) {
    const auto celeba = PoseRange::named("celeba");
    auto ok = torch::tensor({{250.0, 90.0, 1.0}});
    auto bad = torch::tensor({{250.0, 150.0, 1.0}});
    EXPECT_THROW(pose_consistency(ok, bad, celeba), std::domain_error);
}

TEST(PixelLoss, ValuesAndNaiveOracle) {
    auto a = torch::rand({2, 3, 8, 8}, torch::kFloat64) * 2 - 1;
    EXPECT_EQ(pixel_loss(a, a).item<double>(), 0.0);
    EXPECT_DOUBLE_EQ(pixel_loss(torch::ones({3, 4, 4}), -torch::ones({3, 4, 4})).item<double>(), 4.0);

    auto b = torch::rand({2, 3, 8, 8}, torch::kFloat64) * 2 - 1;
    auto aa = a.accessor<double, 4>();
    auto bb = b.accessor<double, 4>();
    double sum = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) sum += (aa[n][c][y][x] - bb[n][c][y][x]) * (aa[n][c][y][x] - bb[n][c][y][x]);
    EXPECT_NEAR(pixel_loss(a, b).item<double>(), sum / (2 * 3 * 8 * 8), 1e-10);
    EXPECT_THROW(pixel_loss(a, b[0]), ShapeError);
}

TEST(PerceptualLoss, ZeroNonNegativeAndPatternSensitive) {
    PerceptualExtractor ex;
    auto a = torch::rand({2, 3, 16, 16}) * 2 - 1;
    EXPECT_EQ(perceptual_loss(ex, a, a).item<double>(), 0.0);
    for (int i = 0; i < 5; ++i) {
        auto b = torch::rand({2, 3, 16, 16}) * 2 - 1;
        EXPECT_GE(perceptual_loss(ex, a, b).item<double>(), 0.0);
    }
    torch::manual_seed(21);
    auto base = torch::rand({1, 3, 16, 16}) * 0.5 - 0.25;
    auto xs = torch::arange(16, torch::kFloat32).view({1, 1, 1, 16});
    auto pattern = 0.3 * torch::sin(xs * (2.0 * std::numbers::pi / 4.0)).expand({1, 3, 16, 16});
    EXPECT_GT(perceptual_loss(ex, base, base + pattern).item<double>(), 1e-6);
}

TEST(PerceptualExtractorTest, FrozenParameters) {
    PerceptualExtractor ex;
    for (const auto& p : ex.parameters()) {
        EXPECT_FALSE(p.requires_grad());
    }
    PerceptualExtractor same;
    auto x = torch::rand({1, 3, 16, 16});
    EXPECT_TRUE(torch::equal(ex.features(x)[0], same.features(x)[0]));
    EXPECT_EQ(ex.features(x)[0].sizes(), (std::vector<int64_t>{1, 32, 8, 8}));
}

// Literal SSIM: per window position, Gaussian-weighted moments, then the Wang et al. formula.
double ssim_oracle(const torch::Tensor& a, const torch::Tensor& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = std::pow(0.01 * 2.0, 2), c2 = std::pow(0.03 * 2.0, 2);
    double w[win][win];
    double wsum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - 5, dj = j - 5;
            w[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            wsum += w[i][j];
        }
    auto A = a.accessor<double, 3>();
    auto B = b.accessor<double, 3>();
    const int ch = a.size(0), h = a.size(1), wd = a.size(2);
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y + win <= h; ++y)
            for (int x = 0; x + win <= wd; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double ww = w[i][j] / wsum;
                        const double va = A[c][y + i][x + j], vb = B[c][y + i][x + j];
                        ma += ww * va;
                        mb += ww * vb;
                        saa += ww * va * va;
                        sbb += ww * vb * vb;
                        sab += ww * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

TEST(Ssim, IdenticalImagesGiveZeroLoss) {
    auto a = torch::rand({2, 3, 16, 16}) * 2 - 1;
    EXPECT_NEAR(ssim_loss(a, a).item<double>(), 0.0, 1e-6);
}

TEST(Ssim, ConstantImagesClosedForm) {
    const double c1v = 0.2, c2v = 0.4;
    const double k1 = std::pow(0.02, 2), k2 = std::pow(0.06, 2);
    const double expected = (2 * c1v * c2v + k1) * k2 / ((c1v * c1v + c2v * c2v + k1) * k2);
    auto a = torch::full({3, 16, 16}, c1v, torch::kFloat64);
    auto b = torch::full({3, 16, 16}, c2v, torch::kFloat64);
    EXPECT_NEAR(ssim_per_image(a, b).item<double>(), expected, 1e-9);
}

TEST(Ssim, MatchesSlidingWindowOracleAndIsSymmetric) {
    torch::manual_seed(8);
    for (int trial = 0; trial < 3; ++trial) {
        auto a = torch::rand({3, 20, 17}, torch::kFloat64) * 2 - 1;
        auto b = (a + 0.4 * torch::randn({3, 20, 17}, torch::kFloat64)).clamp(-1, 1);
        EXPECT_NEAR(ssim_per_image(a, b).item<double>(), ssim_oracle(a, b), 1e-6);
        EXPECT_NEAR(ssim_loss(a, b).item<double>(), ssim_loss(b, a).item<double>(), 1e-12);
    }
    EXPECT_THROW(ssim_loss(torch::zeros({3, 8, 8}), torch::zeros({3, 8, 8})), ShapeError);
}

TEST(Adversarial, ReferenceValues) {
    auto zeros = torch::zeros({4}, torch::kFloat64);
    auto l = adversarial_losses(zeros, zeros);
    EXPECT_NEAR(l.discriminator.item<double>(), 2.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(l.generator.item<double>(), std::log(2.0), 1e-12);

    auto confident = adversarial_losses(torch::full({4}, 60.0, torch::kFloat64), torch::full({4}, -60.0, torch::kFloat64));
    EXPECT_LT(confident.discriminator.item<double>(), 1e-20);

    // hand BCE with logits +1 (real) and -1 (fake)
    const double bce_pos = std::log1p(std::exp(-1.0)); // -log sigmoid(1)
    const double bce_neg = std::log1p(std::exp(1.0));  // -log sigmoid(-1)
    auto hand = adversarial_losses(torch::ones({3}, torch::kFloat64), -torch::ones({3}, torch::kFloat64));
    EXPECT_NEAR(hand.discriminator.item<double>(), bce_pos + bce_pos, 1e-10);
    EXPECT_NEAR(hand.generator.item<double>(), bce_neg, 1e-10);
}

TEST(Distillation, ReusesReconstructionMath) {
    PerceptualExtractor ex;
    auto t = torch::rand({2, 3, 16, 16}) * 2 - 1;
    auto zero = distillation_losses(ex, t, t);
    EXPECT_EQ(zero.l2.item<double>(), 0.0);
    EXPECT_EQ(zero.vgg.item<double>(), 0.0);
    EXPECT_NEAR(zero.ssim.item<double>(), 0.0, 1e-6);
    auto s = torch::rand({2, 3, 16, 16}) * 2 - 1;
    auto d = distillation_losses(ex, t, s);
    EXPECT_EQ(d.l2.item<double>(), pixel_loss(t, s).item<double>());
    EXPECT_EQ(d.vgg.item<double>(), perceptual_loss(ex, t, s).item<double>());
    EXPECT_EQ(d.ssim.item<double>(), ssim_loss(t, s).item<double>());
    EXPECT_NEAR(d.weighted(0.5, 2.0, 3.0).item<double>(),
                0.5 * d.l2.item<double>() + 2.0 * d.vgg.item<double>() + 3.0 * d.ssim.item<double>(), 1e-6);
}

TEST(LossReportTest, TotalIsWeightedSum) {
    LossReport r;
    r.l_z = 1;
    r.l_theta = 2;
    r.l_2 = 3;
    r.l_vgg = 4;
    r.l_ssim = 5;
    r.l_adv_g = 6;
    r.l_adv_d = 7;
    r.l_2_gen = 8;
    r.l_vgg_gen = 9;
    r.l_ssim_gen = 10;
    LossWeights w;
    r.compute_total(w);
    EXPECT_DOUBLE_EQ(r.total, 55.0);
    w.adv = 0.0;
    w.z = 2.0;
    r.compute_total(w);
    EXPECT_DOUBLE_EQ(r.total, 55.0 - 13.0 + 1.0);
    EXPECT_TRUE(r.all_finite());
    r.l_vgg = std::nan("");
    EXPECT_FALSE(r.all_finite());
    const auto header = LossReport::csv_header();
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), 12);
    const auto row = r.csv_row(3, 1);
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 12);
}

class LossGradients : public ::testing::Test {
protected:
    void check(const std::function<torch::Tensor(const torch::Tensor&)>& loss) {
        torch::manual_seed(31);
        auto x = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
        auto xg = x.clone().requires_grad_(true);
        loss(xg).backward();
        const auto idx = testing::sample_indices(x.numel(), 80, 13);
        auto fd = testing::finite_difference([&](const torch::Tensor& t) { return loss(t).item<double>(); }, x, idx);
        EXPECT_LT(testing::max_relative_error(testing::gather(xg.grad(), idx), fd, 1e-7), 1e-3);
    }
};

TEST_F(LossGradients, PixelLoss) {
    auto target = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
    check([&](const torch::Tensor& x) { return pixel_loss(x, target); });
}

TEST_F(LossGradients, SsimLoss) {
    auto target = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
    check([&](const torch::Tensor& x) { return ssim_loss(x, target); });
}

TEST_F(LossGradients, PerceptualLoss) {
    PerceptualExtractor ex;
    ex.to(torch::kFloat64);
    auto target = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
    check([&](const torch::Tensor& x) { return perceptual_loss(ex, x, target); });
}

} // namespace
} // namespace nvs
