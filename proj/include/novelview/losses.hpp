#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "novelview/geometry.hpp"

namespace nvs {

/// Weight per loss component; every component defaults to 1.
struct LossWeights {
    double z = 1.0;
    double theta = 1.0;
    double l2 = 1.0;
    double vgg = 1.0;
    double ssim = 1.0;
    double adv = 1.0;
    double l2_gen = 1.0;
    double vgg_gen = 1.0;
    double ssim_gen = 1.0;

    bool operator==(const LossWeights&) const = default;
};

/// One training step's loss values. Components not evaluated in a step stay 0.
struct LossReport {
    double l_z = 0.0;
    double l_theta = 0.0;
    double l_2 = 0.0;
    double l_vgg = 0.0;
    double l_ssim = 0.0;
    double l_adv_g = 0.0;
    double l_adv_d = 0.0;
    double l_2_gen = 0.0;
    double l_vgg_gen = 0.0;
    double l_ssim_gen = 0.0;
    double total = 0.0;

    /// total = sum of weight * component; the discriminator term uses the adversarial weight.
    void compute_total(const LossWeights& w);
    [[nodiscard]] bool all_finite() const;

    static std::string csv_header(); // "step,stage,l_z,...,total"
    [[nodiscard]] std::string csv_row(int64_t step, int stage) const;
};

/// Frozen VGG-style feature pyramid. Block 1: two 3x3 convs + ReLU, 2x2 max-pool; block 2: two
/// 3x3 convs + ReLU. The tap is the output of the second conv of block 2. Without a weights file the
/// convs keep a fixed seeded random initialization.
class PerceptualExtractor : public torch::nn::Module {
public:
    PerceptualExtractor(int64_t block1_channels = 16, int64_t block2_channels = 32, uint64_t seed = 1234);

    /// Loads conv weights saved with torch::save under the names block1_conv1 ... block2_conv2.
    void load_weights(const std::filesystem::path& path);

    /// Feature maps at the tap layers (currently a single tap).
    std::vector<torch::Tensor> features(const torch::Tensor& images);

private:
    torch::nn::Conv2d b1c1_{nullptr}, b1c2_{nullptr}, b2c1_{nullptr}, b2c2_{nullptr};
};

/// Mean squared difference. Throws std::invalid_argument on length mismatch.
torch::Tensor latent_consistency(const torch::Tensor& z, const torch::Tensor& z_hat);

/// Per-component mean squared differences [3] between two unit-coordinate pose batches. The azimuth
/// difference wraps around when the range spans a full circle.
torch::Tensor pose_consistency_terms_unit(const torch::Tensor& unit, const torch::Tensor& unit_hat,
                                          const PoseRange& range);

/// Mean of the three terms above, computed from poses in degrees ([B,3] or [3]).
/// Throws std::domain_error when elevation or scale fall outside the range.
torch::Tensor pose_consistency(const torch::Tensor& pose, const torch::Tensor& pose_hat, const PoseRange& range);
torch::Tensor pose_consistency_unit(const torch::Tensor& unit, const torch::Tensor& unit_hat, const PoseRange& range);

/// Mean squared error over all pixels and channels. Throws ShapeError on shape mismatch.
torch::Tensor pixel_loss(const torch::Tensor& a, const torch::Tensor& b);

torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& a, const torch::Tensor& b);

/// SSIM constants for data in [-1,1] (dynamic range 2).
struct SsimParams {
    int64_t window = 11;
    double sigma = 1.5;
    double dynamic_range = 2.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Per-image SSIM [B] (valid windows, channel-averaged). Inputs [B,C,H,W] or [C,H,W].
/// Throws ShapeError for images smaller than the window.
torch::Tensor ssim_per_image(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params = {});

/// 1 - mean SSIM.
torch::Tensor ssim_loss(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params = {});

struct AdversarialLosses {
    torch::Tensor generator;
    torch::Tensor discriminator;
};

/// Non-saturating binary cross-entropy on logits.
AdversarialLosses adversarial_losses(const torch::Tensor& logit_real, const torch::Tensor& logit_fake);
torch::Tensor generator_adversarial_loss(const torch::Tensor& logit_fake);

struct ReconstructionTerms {
    torch::Tensor l2;
    torch::Tensor vgg;
    torch::Tensor ssim;

    [[nodiscard]] torch::Tensor weighted(double w_l2, double w_vgg, double w_ssim) const {
        return w_l2 * l2 + w_vgg * vgg + w_ssim * ssim;
    }
};

/// Pixel, perceptual and structural terms on one pair.
ReconstructionTerms reconstruction_losses(PerceptualExtractor& extractor, const torch::Tensor& target,
                                          const torch::Tensor& prediction);

/// Same math applied to a (teacher view, student view) pair.
ReconstructionTerms distillation_losses(PerceptualExtractor& extractor, const torch::Tensor& teacher_view,
                                        const torch::Tensor& student_view);

} // namespace nvs
