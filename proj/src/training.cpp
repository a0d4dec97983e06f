#include "novelview/training.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace {

torch::optim::AdamOptions adam_options(double lr, double beta1, double beta2) {
    return torch::optim::AdamOptions(lr).betas(std::make_tuple(beta1, beta2));
}

void reset_optimizers(TrainState& s, const TrainConfig& cfg) {
    const auto opts = adam_options(cfg.lr, cfg.beta1, cfg.beta2);
    s.opt_decoder = std::make_unique<torch::optim::Adam>(s.nets.decoder->parameters(), opts);
    s.opt_encoder = std::make_unique<torch::optim::Adam>(s.nets.encoder->parameters(), opts);
    s.opt_discriminator = std::make_unique<torch::optim::Adam>(s.nets.discriminator->parameters(), opts);
}

double checked(const torch::Tensor& t, const char* name, const TrainState& s) {
    const double v = t.item<double>();
    if (!std::isfinite(v)) {
        throw NumericalError(fmt::format("non-finite {} at stage {} step {}", name, s.stage, s.step));
    }
    return v;
}

// Turns off gradient tracking for a module's parameters for the lifetime of the guard.
class FrozenGuard {
public:
    explicit FrozenGuard(torch::nn::Module& m) : m_(m) {
        for (auto& p : m_.parameters()) {
            saved_.push_back(p.requires_grad());
            p.set_requires_grad(false);
        }
    }
    ~FrozenGuard() {
        auto params = m_.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
            params[i].set_requires_grad(saved_[i]);
        }
    }
    FrozenGuard(const FrozenGuard&) = delete;
    FrozenGuard& operator=(const FrozenGuard&) = delete;

private:
    torch::nn::Module& m_;
    std::vector<bool> saved_;
};

torch::Tensor batched(const torch::Tensor& img) { return img.dim() == 3 ? img.unsqueeze(0) : img; }

torch::Tensor logit_of(const torch::Tensor& unit) {
    auto u = unit.clamp(1e-4, 1.0 - 1e-4);
    return torch::log(u / (1.0 - u));
}

} // namespace

Stage2Terms Stage2Terms::ablation_row(int row) {
    Stage2Terms t;
    switch (row) {
    case 1:
    case 3:
        t = {true, false, false, false, false};
        break;
    case 2:
        t = {false, false, false, false, false};
        break;
    case 4:
        t = {true, true, false, false, true};
        break;
    case 5:
        t = {true, true, true, false, false};
        break;
    case 6:
        t = {true, true, true, true, false};
        break;
    case 7:
        break;
    default:
        throw ConfigError(fmt::format("no ablation row {}", row));
    }
    return t;
}

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) {
        throw ConfigError(fmt::format("stage must be 1 or 2, got {}", stage));
    }
    if (epochs <= 0 || batch_size <= 0 || checkpoint_every <= 0 || steps_per_epoch < 0 || decay_start < 0) {
        throw ConfigError("train: counts must be positive");
    }
    if (!(lr > 0.0) || !(distill_ratio > 0.0)) {
        throw ConfigError("train: lr and distill_ratio must be positive");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("train: Adam betas must lie in [0,1)");
    }
}

TrainConfig TrainConfig::stage1_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::stage2_defaults() {
    TrainConfig c;
    c.stage = 2;
    c.epochs = 30;
    return c;
}

double lr_schedule(int64_t epoch, const TrainConfig& cfg) {
    if (epoch <= cfg.decay_start || cfg.decay_start >= cfg.epochs) {
        return cfg.lr;
    }
    const double left = static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs - cfg.decay_start);
    return cfg.lr * std::max(0.0, left);
}

void FinetuneConfig::validate() const {
    if (steps < 1) {
        throw ConfigError("finetune: steps must be at least 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("finetune: lr must be positive");
    }
}

void FitConfig::validate() const {
    if (steps < 1) {
        throw ConfigError("fit: steps must be at least 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("fit: lr must be positive");
    }
}

// ---------------------------------------------------------------------------------------------

TrainState make_train_state(const ModelConfig& model, const PoseRange& range, const TrainConfig& cfg, uint64_t seed) {
    cfg.validate();
    TrainState s;
    s.model = model;
    s.range = range;
    s.nets = make_networks(model, range, seed);
    s.perceptual = std::make_shared<PerceptualExtractor>();
    s.rng.seed(seed);
    s.stage = cfg.stage;
    reset_optimizers(s, cfg);
    return s;
}

void begin_stage2(TrainState& s, const TrainConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (!cfg.init_from_stage1) {
        s.nets = make_networks(s.model, s.range, seed);
        s.rng.seed(seed);
    }
    s.teacher = s.nets.decoder->clone_generator();
    set_requires_grad(*s.teacher, false);
    s.teacher->eval();
    s.stage = 2;
    s.epoch = 0;
    s.step = 0;
    reset_optimizers(s, cfg);
}

void set_learning_rate(TrainState& s, double lr) {
    for (auto* opt : {s.opt_decoder.get(), s.opt_encoder.get(), s.opt_discriminator.get()}) {
        for (auto& group : opt->param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
    }
}

LossReport stage1_step(TrainState& s, const TrainConfig& cfg, const torch::Tensor& real) {
    auto& dec = *s.nets.decoder;
    auto& enc = *s.nets.encoder;
    auto& disc = *s.nets.discriminator;
    const auto& w = cfg.weights;
    const auto b = real.size(0);
    LossReport r;

    auto z = sample_latent(s.rng, b, s.model.latent_dim);
    auto unit = sample_unit_poses(s.rng, b);
    auto pose = remap_unit_to_pose(unit, s.range);
    auto fake = dec.generate(z, pose);

    if (w.adv > 0.0) {
        auto d_loss = adversarial_losses(disc.forward(real), disc.forward(fake.detach())).discriminator;
        r.l_adv_d = checked(d_loss, "discriminator loss", s);
        s.opt_discriminator->zero_grad();
        (w.adv * d_loss).backward();
        s.opt_discriminator->step();

        FrozenGuard frozen(disc);
        auto g_loss = generator_adversarial_loss(disc.forward(fake));
        r.l_adv_g = checked(g_loss, "generator loss", s);
        s.opt_decoder->zero_grad();
        (w.adv * g_loss).backward();
        s.opt_decoder->step();
    }

    // The rendered batch is data for the encoder: no gradient reaches the decoder here.
    auto out = enc.forward(fake.detach());
    auto l_z = latent_consistency(out.z, z);
    auto l_theta = pose_consistency_unit(unit, out.pose_unit, s.range);
    r.l_z = checked(l_z, "latent consistency", s);
    r.l_theta = checked(l_theta, "pose consistency", s);
    s.opt_encoder->zero_grad();
    (w.z * l_z + w.theta * l_theta).backward();
    s.opt_encoder->step();

    r.compute_total(w);
    ++s.step;
    return r;
}

LossReport stage2_step(TrainState& s, const TrainConfig& cfg, const torch::Tensor& real) {
    if (!s.teacher) {
        throw ConfigError("stage 2 step without a frozen teacher");
    }
    auto& dec = *s.nets.decoder;
    auto& enc = *s.nets.encoder;
    auto& disc = *s.nets.discriminator;
    auto& perc = *s.perceptual;
    const auto& w = cfg.weights;
    const auto& terms = cfg.terms;
    LossReport r;
    auto total = torch::zeros({});
    torch::Tensor recon_for_g;

    if (terms.autoencoder) {
        auto out = enc.forward(real);
        auto recon = dec.generate(out.z, out.pose);
        auto rec = reconstruction_losses(perc, real, recon);
        r.l_2 = checked(rec.l2, "reconstruction l2", s);
        r.l_vgg = checked(rec.vgg, "reconstruction perceptual", s);
        r.l_ssim = checked(rec.ssim, "reconstruction ssim", s);
        total = total + rec.weighted(w.l2, w.vgg, w.ssim);
        if (terms.adversarial && w.adv > 0.0) {
            auto d_loss = adversarial_losses(disc.forward(real), disc.forward(recon.detach())).discriminator;
            r.l_adv_d = checked(d_loss, "discriminator loss", s);
            s.opt_discriminator->zero_grad();
            (w.adv * d_loss).backward();
            s.opt_discriminator->step();
            recon_for_g = recon;
        }
    }

    if (terms.self_distill || terms.consistency) {
        const auto n = std::max<int64_t>(1, std::llround(cfg.distill_ratio * static_cast<double>(real.size(0))));
        auto z = sample_latent(s.rng, n, s.model.latent_dim);
        auto unit = sample_unit_poses(s.rng, n);
        auto pose = remap_unit_to_pose(unit, s.range);
        torch::Tensor target;
        {
            torch::NoGradGuard no_grad;
            target = s.teacher->generate(z, pose);
        }
        if (terms.consistency) {
            auto out = enc.forward(target);
            auto l_z = latent_consistency(out.z, z);
            auto l_theta = pose_consistency_unit(unit, out.pose_unit, s.range);
            r.l_z = checked(l_z, "latent consistency", s);
            r.l_theta = checked(l_theta, "pose consistency", s);
            total = total + w.z * l_z + w.theta * l_theta;
        }
        if (terms.self_distill) {
            torch::Tensor source = target;
            if (terms.multi_view) {
                auto other = remap_unit_to_pose(sample_unit_poses(s.rng, n), s.range);
                torch::NoGradGuard no_grad;
                source = s.teacher->generate(z, other);
            }
            auto student = dec.generate(enc.forward(source).z, pose);
            auto gen = distillation_losses(perc, target, student);
            r.l_2_gen = checked(gen.l2, "distillation l2", s);
            r.l_vgg_gen = checked(gen.vgg, "distillation perceptual", s);
            r.l_ssim_gen = checked(gen.ssim, "distillation ssim", s);
            total = total + gen.weighted(w.l2_gen, w.vgg_gen, w.ssim_gen);
        }
    }

    s.opt_decoder->zero_grad();
    s.opt_encoder->zero_grad();
    if (recon_for_g.defined()) {
        FrozenGuard frozen(disc);
        auto g_loss = generator_adversarial_loss(disc.forward(recon_for_g));
        r.l_adv_g = checked(g_loss, "generator loss", s);
        total = total + w.adv * g_loss;
        total.backward();
    } else if (total.requires_grad()) {
        total.backward();
    }
    s.opt_decoder->step();
    s.opt_encoder->step();

    r.compute_total(w);
    if (!r.all_finite()) {
        throw NumericalError(fmt::format("non-finite total at stage 2 step {}", s.step));
    }
    ++s.step;
    return r;
}

// ---------------------------------------------------------------------------------------------

double l1_255(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError("l1_255: shape mismatch");
    }
    return ((a.detach().to(torch::kFloat64) - b.detach().to(torch::kFloat64)).abs() * 127.5).mean().item<double>();
}

FinetuneResult finetune_image(const Networks& nets, PerceptualExtractor& perceptual, const Image& target_img,
                              const FinetuneConfig& cfg) {
    cfg.validate();
    const auto& range = nets.encoder->range();
    auto target = batched(target_img.pixels);
    FinetuneResult res;
    res.decoder = nets.decoder->clone_generator();
    auto& dec = *res.decoder;

    torch::Tensor z;
    torch::Tensor logit;
    {
        torch::NoGradGuard no_grad;
        auto init = nets.encoder->forward(target);
        z = init.z.clone();
        logit = init.pose_logit.clone();
    }
    z.set_requires_grad(cfg.optimize_latent);
    logit.set_requires_grad(cfg.optimize_latent);
    std::vector<torch::Tensor> params;
    if (cfg.optimize_decoder) {
        params = dec.parameters();
    } else {
        set_requires_grad(dec, false);
    }
    if (cfg.optimize_latent) {
        params.push_back(z);
        params.push_back(logit);
    }
    torch::optim::Adam opt(params, adam_options(cfg.lr, cfg.beta1, cfg.beta2));
    FrozenGuard frozen(*nets.discriminator);

    auto render = [&]() { return dec.generate(z, remap_unit_to_pose(torch::sigmoid(logit), range)); };
    for (int64_t i = 0; i < cfg.steps; ++i) {
        auto img = render();
        auto rec = reconstruction_losses(perceptual, target, img);
        auto loss = rec.weighted(cfg.w_l2, cfg.w_vgg, cfg.w_ssim);
        if (cfg.w_adv > 0.0) {
            loss = loss + cfg.w_adv * generator_adversarial_loss(nets.discriminator->forward(img));
        }
        res.trace.push_back({loss.item<double>(), l1_255(img, target)});
        if (!std::isfinite(res.trace.back().loss)) {
            throw NumericalError(fmt::format("non-finite finetuning loss at step {}", i));
        }
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    torch::NoGradGuard no_grad;
    auto final_pose = remap_unit_to_pose(torch::sigmoid(logit), range);
    res.reconstruction = Image{dec.generate(z, final_pose)[0], target_img.id};
    res.z = z.detach()[0].clone();
    res.pose = pose_from_tensor(final_pose[0]);
    return res;
}

FitResult fit_latent_baseline(GeneratorInterface& decoder, Encoder* encoder, PerceptualExtractor& perceptual,
                              const Image& target_img, const FitConfig& cfg) {
    cfg.validate();
    if (encoder == nullptr) {
        throw ConfigError("fitting needs an encoder for the pose range and for encoder initialization");
    }
    const auto& range = encoder->range();
    auto target = batched(target_img.pixels);
    torch::Tensor z;
    torch::Tensor logit;
    if (cfg.init == FitInit::kEncoder) {
        torch::NoGradGuard no_grad;
        auto init = encoder->forward(target);
        z = init.z.clone();
        logit = init.pose_logit.clone();
    } else {
        std::mt19937_64 rng(cfg.seed);
        z = sample_latent(rng, 1, decoder.latent_dim());
        logit = logit_of(sample_unit_poses(rng, 1));
    }
    z.set_requires_grad(true);
    logit.set_requires_grad(true);
    torch::optim::Adam opt(std::vector<torch::Tensor>{z, logit}, torch::optim::AdamOptions(cfg.lr));

    auto objective = [&](torch::Tensor& img) {
        img = decoder.generate(z, remap_unit_to_pose(torch::sigmoid(logit), range));
        return reconstruction_losses(perceptual, target, img).weighted(cfg.w_l2, cfg.w_vgg, cfg.w_ssim);
    };
    FitResult res;
    torch::Tensor img;
    for (int64_t i = 0; i < cfg.steps; ++i) {
        auto loss = objective(img);
        res.trace.push_back({loss.item<double>(), l1_255(img, target)});
        if (!std::isfinite(res.trace.back().loss)) {
            throw NumericalError(fmt::format("non-finite fitting loss at step {}", i));
        }
        // Gradients only for (z, pose); the decoder's parameter gradients are never touched.
        auto grads = torch::autograd::grad({loss}, {z, logit});
        z.mutable_grad() = grads[0];
        logit.mutable_grad() = grads[1];
        opt.step();
    }
    auto loss = objective(img);
    res.final_loss = loss.item<double>();
    res.reconstruction = Image{img.detach()[0], target_img.id};
    res.z = z.detach()[0].clone();
    res.pose = pose_from_tensor(remap_unit_to_pose(torch::sigmoid(logit.detach()), range)[0]);
    return res;
}

} // namespace nvs
