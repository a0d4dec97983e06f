#include <gtest/gtest.h>

#include "novelview/errors.hpp"
#include "novelview/training.hpp"

namespace nvs {
namespace {

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (!torch::equal(pa[i], pb[i])) return false;
    }
    return true;
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool unchanged(const torch::nn::Module& m, const std::vector<torch::Tensor>& snap) {
    auto p = m.parameters();
    for (size_t i = 0; i < p.size(); ++i) {
        if (!torch::equal(p[i], snap[i])) return false;
    }
    return true;
}

// Ignores z and pose: any encoder inverts it exactly.
class ConstantGenerator : public GeneratorInterface {
public:
    ConstantGenerator(int64_t latent, int64_t res) : latent_(latent), res_(res) {
        image_ = register_parameter("image", torch::randn({1, 3, res, res}));
    }
    torch::Tensor generate(const torch::Tensor& z, const torch::Tensor&) override {
        return torch::tanh(image_).expand({z.size(0), -1, -1, -1});
    }
    [[nodiscard]] std::shared_ptr<GeneratorInterface> clone_generator() const override {
        auto c = std::make_shared<ConstantGenerator>(latent_, res_);
        copy_module_state(*this, *c);
        return c;
    }
    [[nodiscard]] int64_t latent_dim() const override { return latent_; }
    [[nodiscard]] int64_t resolution() const override { return res_; }

private:
    int64_t latent_;
    int64_t res_;
    torch::Tensor image_;
};

TEST(LrSchedule, ConstantThenLinearToZero) {
    auto cfg = TrainConfig::stage1_defaults();
    EXPECT_DOUBLE_EQ(lr_schedule(0, cfg), 5e-5);
    EXPECT_DOUBLE_EQ(lr_schedule(25, cfg), 5e-5);
    EXPECT_LT(lr_schedule(26, cfg), 5e-5);
    EXPECT_DOUBLE_EQ(lr_schedule(50, cfg), 0.0);
    cfg.epochs = 45; // decay span 25..45, midpoint 35
    EXPECT_DOUBLE_EQ(lr_schedule(35, cfg), 2.5e-5);
    double prev = lr_schedule(0, cfg);
    for (int64_t e = 1; e <= cfg.epochs; ++e) {
        EXPECT_LE(lr_schedule(e, cfg), prev);
        prev = lr_schedule(e, cfg);
    }
}

TEST(TrainConfigTest, DefaultsAndValidation) {
    auto s1 = TrainConfig::stage1_defaults();
    auto s2 = TrainConfig::stage2_defaults();
    EXPECT_EQ(s1.epochs, 50);
    EXPECT_EQ(s2.epochs, 30);
    EXPECT_DOUBLE_EQ(s1.beta1, 0.5);
    EXPECT_DOUBLE_EQ(s1.beta2, 0.999);
    s1.batch_size = 0;
    EXPECT_THROW(s1.validate(), ConfigError);
    s2.beta2 = 1.0;
    EXPECT_THROW(s2.validate(), ConfigError);
    FinetuneConfig ft;
    EXPECT_EQ(ft.steps, 100);
    EXPECT_DOUBLE_EQ(ft.lr, 1e-4);
    ft.steps = 0;
    EXPECT_THROW(ft.validate(), ConfigError);
}

TEST(Stage2TermsTest, AblationRows) {
    EXPECT_EQ(Stage2Terms::ablation_row(7), Stage2Terms{});
    const auto r3 = Stage2Terms::ablation_row(3);
    EXPECT_TRUE(r3.autoencoder);
    EXPECT_FALSE(r3.self_distill || r3.multi_view || r3.adversarial || r3.consistency);
    const auto r5 = Stage2Terms::ablation_row(5);
    EXPECT_TRUE(r5.autoencoder && r5.self_distill && r5.multi_view);
    EXPECT_FALSE(r5.adversarial || r5.consistency);
    EXPECT_THROW(Stage2Terms::ablation_row(8), ConfigError);
}

class TrainingTest : public ::testing::Test {
protected:
    ModelConfig model = ModelConfig::for_resolution(32);
    PoseRange range = PoseRange::named("synthetic");
    TrainConfig cfg = [] {
        auto c = TrainConfig::stage1_defaults();
        c.batch_size = 4;
        c.lr = 1e-3;
        return c;
    }();
    torch::Tensor batch = torch::rand({4, 3, 32, 32}) * 2 - 1;
};

TEST_F(TrainingTest, Stage1IsDeterministic) {
    auto a = make_train_state(model, range, cfg, 11);
    auto b = make_train_state(model, range, cfg, 11);
    for (int i = 0; i < 2; ++i) {
        auto ra = stage1_step(a, cfg, batch);
        auto rb = stage1_step(b, cfg, batch);
        EXPECT_EQ(ra.total, rb.total);
        EXPECT_TRUE(ra.all_finite());
    }
    EXPECT_TRUE(same_parameters(*a.nets.decoder, *b.nets.decoder));
    EXPECT_TRUE(same_parameters(*a.nets.encoder, *b.nets.encoder));
    EXPECT_TRUE(same_parameters(*a.nets.discriminator, *b.nets.discriminator));
    EXPECT_EQ(a.step, 2);
}

TEST_F(TrainingTest, EncoderPhaseNeverTouchesDecoder) {
    cfg.weights.adv = 0.0;
    auto s = make_train_state(model, range, cfg, 3);
    auto dec = snapshot(*s.nets.decoder);
    auto disc = snapshot(*s.nets.discriminator);
    auto enc = snapshot(*s.nets.encoder);
    auto r = stage1_step(s, cfg, batch);
    EXPECT_TRUE(unchanged(*s.nets.decoder, dec));
    EXPECT_TRUE(unchanged(*s.nets.discriminator, disc));
    EXPECT_FALSE(unchanged(*s.nets.encoder, enc));
    for (const auto& p : s.nets.decoder->parameters()) {
        EXPECT_FALSE(p.grad().defined() && p.grad().abs().sum().item<double>() > 0.0);
    }
    EXPECT_GT(r.l_z, 0.0);
    EXPECT_GT(r.l_theta, 0.0);
}

TEST_F(TrainingTest, NonFiniteLossAborts) {
    auto s = make_train_state(model, range, cfg, 3);
    {
        torch::NoGradGuard g;
        s.nets.decoder->parameters()[0].fill_(std::numeric_limits<float>::quiet_NaN());
    }
    EXPECT_THROW(stage1_step(s, cfg, batch), NumericalError);
}

TEST_F(TrainingTest, Stage2KeepsTeacherFrozenAndIsDeterministic) {
    auto a = make_train_state(model, range, cfg, 5);
    auto b = make_train_state(model, range, cfg, 5);
    auto cfg2 = TrainConfig::stage2_defaults();
    cfg2.batch_size = 4;
    cfg2.lr = 1e-3;
    begin_stage2(a, cfg2, 5);
    begin_stage2(b, cfg2, 5);
    auto teacher = snapshot(*a.teacher);
    for (int i = 0; i < 2; ++i) {
        auto ra = stage2_step(a, cfg2, batch);
        auto rb = stage2_step(b, cfg2, batch);
        EXPECT_EQ(ra.total, rb.total);
        EXPECT_GT(ra.l_2, 0.0);
        EXPECT_GT(ra.l_2_gen, 0.0);
        EXPECT_GT(ra.l_adv_d, 0.0);
    }
    EXPECT_TRUE(unchanged(*a.teacher, teacher));
    EXPECT_FALSE(same_parameters(*a.teacher, *a.nets.decoder));
    EXPECT_TRUE(same_parameters(*a.nets.decoder, *b.nets.decoder));
    EXPECT_TRUE(same_parameters(*a.nets.encoder, *b.nets.encoder));
}

TEST_F(TrainingTest, Stage2AblationSkipsDisabledTerms) {
    auto s = make_train_state(model, range, cfg, 5);
    auto cfg2 = TrainConfig::stage2_defaults();
    cfg2.batch_size = 4;
    cfg2.terms = Stage2Terms::ablation_row(3);
    begin_stage2(s, cfg2, 5);
    auto r = stage2_step(s, cfg2, batch);
    EXPECT_GT(r.l_2, 0.0);
    EXPECT_EQ(r.l_2_gen, 0.0);
    EXPECT_EQ(r.l_z, 0.0);
    EXPECT_EQ(r.l_adv_d, 0.0);
}

TEST_F(TrainingTest, DistillationVanishesAtFixedPoint) {
    auto s = make_train_state(model, range, cfg, 5);
    s.nets.decoder = std::make_shared<ConstantGenerator>(model.latent_dim, model.resolution);
    auto cfg2 = TrainConfig::stage2_defaults();
    cfg2.batch_size = 4;
    cfg2.terms = Stage2Terms::ablation_row(5);
    begin_stage2(s, cfg2, 5);
    auto r = stage2_step(s, cfg2, batch);
    EXPECT_EQ(r.l_2_gen, 0.0);
    EXPECT_EQ(r.l_vgg_gen, 0.0);
    EXPECT_NEAR(r.l_ssim_gen, 0.0, 1e-6);
    EXPECT_GT(r.l_2, 0.0);
}

TEST_F(TrainingTest, FinetuneLeavesCheckpointAlone) {
    auto s = make_train_state(model, range, cfg, 9);
    auto dec = snapshot(*s.nets.decoder);
    auto disc = snapshot(*s.nets.discriminator);
    Image target{batch[0], "t"};
    FinetuneConfig ft;
    ft.steps = 15;
    ft.lr = 1e-3;
    auto res = finetune_image(s.nets, *s.perceptual, target, ft);
    EXPECT_EQ(res.trace.size(), 15u);
    EXPECT_TRUE(unchanged(*s.nets.decoder, dec));
    EXPECT_TRUE(unchanged(*s.nets.discriminator, disc));
    for (const auto& p : s.nets.discriminator->parameters()) EXPECT_TRUE(p.requires_grad());
    EXPECT_LT(l1_255(res.reconstruction.pixels, target.pixels), res.trace.front().l1_255);
    EXPECT_TRUE(range.contains(res.pose));
}

TEST_F(TrainingTest, FitOptimizesOnlyLatentAndPose) {
    auto s = make_train_state(model, range, cfg, 9);
    auto dec = snapshot(*s.nets.decoder);
    Image target{batch[1], "t"};
    FitConfig fc;
    fc.steps = 25;
    fc.init = FitInit::kRandom;
    fc.seed = 4;
    auto res = fit_latent_baseline(*s.nets.decoder, s.nets.encoder.get(), *s.perceptual, target, fc);
    EXPECT_EQ(res.trace.size(), 25u);
    EXPECT_TRUE(unchanged(*s.nets.decoder, dec));
    for (const auto& p : s.nets.decoder->parameters()) EXPECT_FALSE(p.grad().defined());
    EXPECT_LT(res.final_loss, res.trace.front().loss);
    EXPECT_TRUE(range.contains(res.pose));

    auto again = fit_latent_baseline(*s.nets.decoder, s.nets.encoder.get(), *s.perceptual, target, fc);
    EXPECT_EQ(again.final_loss, res.final_loss);
}

TEST(L1Metric, ByteScale) {
    EXPECT_DOUBLE_EQ(l1_255(torch::ones({3, 4, 4}), -torch::ones({3, 4, 4})), 255.0);
    EXPECT_DOUBLE_EQ(l1_255(torch::zeros({3, 4, 4}), torch::zeros({3, 4, 4})), 0.0);
}

} // namespace
} // namespace nvs
