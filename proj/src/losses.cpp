#include "novelview/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace F = torch::nn::functional;

void LossReport::compute_total(const LossWeights& w) {
    total = w.z * l_z + w.theta * l_theta + w.l2 * l_2 + w.vgg * l_vgg + w.ssim * l_ssim + w.adv * (l_adv_g + l_adv_d) +
            w.l2_gen * l_2_gen + w.vgg_gen * l_vgg_gen + w.ssim_gen * l_ssim_gen;
}

bool LossReport::all_finite() const {
    for (double v : {l_z, l_theta, l_2, l_vgg, l_ssim, l_adv_g, l_adv_d, l_2_gen, l_vgg_gen, l_ssim_gen, total}) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string LossReport::csv_header() {
    return "step,stage,l_z,l_theta,l_2,l_vgg,l_ssim,l_adv_g,l_adv_d,l_2_gen,l_vgg_gen,l_ssim_gen,total";
}

std::string LossReport::csv_row(int64_t step, int stage) const {
    return fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", step, stage,
                       l_z, l_theta, l_2, l_vgg, l_ssim, l_adv_g, l_adv_d, l_2_gen, l_vgg_gen, l_ssim_gen, total);
}

// ---------------------------------------------------------------------------------------------

PerceptualExtractor::PerceptualExtractor(int64_t block1_channels, int64_t block2_channels, uint64_t seed) {
    // Seeded from a private generator so building an extractor never disturbs the global stream.
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto make = [&](const char* name, int64_t in, int64_t out) {
        auto conv = register_module(name, torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
        torch::NoGradGuard no_grad;
        const double bound = std::sqrt(6.0 / (in * 9.0)); // He-uniform keeps activations alive through ReLUs
        conv->weight.uniform_(-bound, bound, gen);
        conv->bias.zero_();
        return conv;
    };
    b1c1_ = make("block1_conv1", 3, block1_channels);
    b1c2_ = make("block1_conv2", block1_channels, block1_channels);
    b2c1_ = make("block2_conv1", block1_channels, block2_channels);
    b2c2_ = make("block2_conv2", block2_channels, block2_channels);
    for (auto& p : parameters()) {
        p.set_requires_grad(false);
    }
    eval();
}

void PerceptualExtractor::load_weights(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError(fmt::format("cannot load perceptual weights '{}': {}", path.string(), e.what_without_backtrace()));
    }
    torch::NoGradGuard no_grad;
    for (auto& item : named_parameters()) {
        torch::Tensor t;
        if (!archive.try_read(item.key(), t) || t.sizes() != item.value().sizes()) {
            throw ShapeError(fmt::format("perceptual weights: '{}' missing or mismatched", item.key()));
        }
        item.value().copy_(t);
    }
}

std::vector<torch::Tensor> PerceptualExtractor::features(const torch::Tensor& images) {
    auto x = torch::relu(b1c1_->forward(images));
    x = torch::relu(b1c2_->forward(x));
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    x = torch::relu(b2c1_->forward(x));
    x = torch::relu(b2c2_->forward(x));
    return {x};
}

// ---------------------------------------------------------------------------------------------

torch::Tensor latent_consistency(const torch::Tensor& z, const torch::Tensor& z_hat) {
    if (z.sizes() != z_hat.sizes()) {
        throw std::invalid_argument("latent_consistency: length mismatch");
    }
    return (z - z_hat).pow(2).mean();
}

torch::Tensor pose_consistency_terms_unit(const torch::Tensor& unit, const torch::Tensor& unit_hat,
                                          const PoseRange& range) {
    if (unit.sizes() != unit_hat.sizes() || unit.size(-1) != 3) {
        throw ShapeError("pose_consistency: pose batches differ in shape");
    }
    auto diff = (unit - unit_hat).reshape({-1, 3});
    if (range.full_circle()) {
        auto az = diff.select(1, 0);
        az = az - torch::round(az.detach()); // nearest representative in [-0.5, 0.5]
        diff = torch::stack({az, diff.select(1, 1), diff.select(1, 2)}, 1);
    }
    return diff.pow(2).mean(0);
}

torch::Tensor pose_consistency_unit(const torch::Tensor& unit, const torch::Tensor& unit_hat, const PoseRange& range) {
    return pose_consistency_terms_unit(unit, unit_hat, range).mean();
}

torch::Tensor pose_consistency(const torch::Tensor& pose, const torch::Tensor& pose_hat, const PoseRange& range) {
    constexpr double tol = 1e-6;
    for (const auto* p : {&pose, &pose_hat}) {
        auto rows = p->detach().reshape({-1, 3}).to(torch::kFloat64);
        const double el_lo = rows.select(1, 1).min().item<double>();
        const double el_hi = rows.select(1, 1).max().item<double>();
        const double s_lo = rows.select(1, 2).min().item<double>();
        const double s_hi = rows.select(1, 2).max().item<double>();
        if (el_lo < range.elevation_min - tol || el_hi > range.elevation_max + tol || s_lo < range.scale_min - tol ||
            s_hi > range.scale_max + tol) {
            throw std::domain_error("pose_consistency: pose outside the active range");
        }
    }
    return pose_consistency_unit(remap_pose_to_unit(pose, range), remap_pose_to_unit(pose_hat, range), range);
}

torch::Tensor pixel_loss(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError("pixel_loss: shape mismatch");
    }
    return (a - b).pow(2).mean();
}

torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError("perceptual_loss: shape mismatch");
    }
    auto fa = extractor.features(a.dim() == 3 ? a.unsqueeze(0) : a);
    auto fb = extractor.features(b.dim() == 3 ? b.unsqueeze(0) : b);
    auto total = torch::zeros({}, a.options());
    for (size_t i = 0; i < fa.size(); ++i) {
        total = total + (fa[i] - fb[i]).pow(2).mean();
    }
    return total;
}

namespace {

torch::Tensor gaussian_kernel(const SsimParams& p, const torch::TensorOptions& opts) {
    auto coords = torch::arange(p.window, torch::TensorOptions().dtype(torch::kFloat64)) - (p.window - 1) / 2.0;
    auto g = torch::exp(-(coords * coords) / (2.0 * p.sigma * p.sigma));
    g = g / g.sum();
    return g.to(opts);
}

// Separable depthwise filtering with valid windows.
torch::Tensor filter(const torch::Tensor& x, const torch::Tensor& g) {
    const auto c = x.size(1);
    const auto k = g.size(0);
    auto gh = g.view({1, 1, 1, k}).expand({c, 1, 1, k});
    auto gv = g.view({1, 1, k, 1}).expand({c, 1, k, 1});
    auto y = F::conv2d(x, gh, F::Conv2dFuncOptions().groups(c));
    return F::conv2d(y, gv, F::Conv2dFuncOptions().groups(c));
}

} // namespace

torch::Tensor ssim_per_image(const torch::Tensor& a_in, const torch::Tensor& b_in, const SsimParams& params) {
    if (a_in.sizes() != b_in.sizes()) {
        throw ShapeError("ssim: shape mismatch");
    }
    auto a = a_in.dim() == 3 ? a_in.unsqueeze(0) : a_in;
    auto b = b_in.dim() == 3 ? b_in.unsqueeze(0) : b_in;
    if (a.dim() != 4 || a.size(2) < params.window || a.size(3) < params.window) {
        throw ShapeError(fmt::format("ssim: image smaller than the {}x{} window", params.window, params.window));
    }
    const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
    const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
    auto g = gaussian_kernel(params, a.options());
    auto mu_a = filter(a, g);
    auto mu_b = filter(b, g);
    auto var_a = filter(a * a, g) - mu_a * mu_a;
    auto var_b = filter(b * b, g) - mu_b * mu_b;
    auto cov = filter(a * b, g) - mu_a * mu_b;
    auto map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    return map.mean({1, 2, 3});
}

torch::Tensor ssim_loss(const torch::Tensor& a, const torch::Tensor& b, const SsimParams& params) {
    return 1.0 - ssim_per_image(a, b, params).mean();
}

AdversarialLosses adversarial_losses(const torch::Tensor& logit_real, const torch::Tensor& logit_fake) {
    // BCE(x -> 1) = softplus(-x), BCE(x -> 0) = softplus(x)
    return AdversarialLosses{
        F::softplus(-logit_fake).mean(),
        F::softplus(-logit_real).mean() + F::softplus(logit_fake).mean(),
    };
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& logit_fake) { return F::softplus(-logit_fake).mean(); }

ReconstructionTerms reconstruction_losses(PerceptualExtractor& extractor, const torch::Tensor& target,
                                          const torch::Tensor& prediction) {
    return ReconstructionTerms{pixel_loss(target, prediction), perceptual_loss(extractor, target, prediction),
                               ssim_loss(target, prediction)};
}

ReconstructionTerms distillation_losses(PerceptualExtractor& extractor, const torch::Tensor& teacher_view,
                                        const torch::Tensor& student_view) {
    return reconstruction_losses(extractor, teacher_view, student_view);
}

} // namespace nvs
