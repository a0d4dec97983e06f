#include "novelview/models.hpp"

#include <cmath>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kSlope)); }

// Per-sample, per-channel normalization over all spatial dims, then affine terms predicted from z.
torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& style) {
    std::vector<int64_t> spatial;
    for (int64_t d = 2; d < x.dim(); ++d) {
        spatial.push_back(d);
    }
    auto mean = x.mean(spatial, true);
    auto var = (x - mean).pow(2).mean(spatial, true);
    auto normalized = (x - mean) * torch::rsqrt(var + 1e-5);
    const auto c = x.size(1);
    std::vector<int64_t> shape{x.size(0), c};
    shape.resize(static_cast<size_t>(x.dim()), 1);
    auto gamma = style.slice(1, 0, c).view(shape);
    auto beta = style.slice(1, c, 2 * c).view(shape);
    return normalized * (1.0 + gamma) + beta;
}

int64_t log2_exact(int64_t v) {
    int64_t k = 0;
    while ((int64_t{1} << k) < v) {
        ++k;
    }
    return (int64_t{1} << k) == v ? k : -1;
}

} // namespace

int64_t ModelConfig::rendered_extent() const {
    return volume_size << static_cast<int64_t>(volume_blocks.size());
}

void ModelConfig::validate() const {
    if (resolution <= 0 || latent_dim <= 0 || mapping_hidden <= 0 || volume_size <= 0) {
        throw ConfigError("model: sizes must be positive");
    }
    if (!(style_gain >= 0.0) || !std::isfinite(style_gain)) {
        throw ConfigError("model: style_gain must be finite and non-negative");
    }
    if (log2_exact(volume_size) < 0) {
        throw ConfigError("model: volume_size must be a power of two");
    }
    const auto extent = rendered_extent();
    if (resolution % extent != 0 || log2_exact(resolution / extent) != static_cast<int64_t>(image_blocks.size())) {
        throw ConfigError(fmt::format("model: {} image blocks cannot take a {}^2 projection to {}x{}",
                                      image_blocks.size(), extent, resolution, resolution));
    }
    if (encoder_channels.size() != 3) {
        throw ConfigError("model: the encoder has exactly three residual blocks");
    }
    if (discriminator_channels.size() != image_blocks.size()) {
        throw ConfigError("model: discriminator depth must equal the number of image blocks");
    }
    if (resolution >> encoder_channels.size() < 1) {
        throw ConfigError("model: resolution too small for the encoder");
    }
}

ModelConfig ModelConfig::for_resolution(int64_t resolution) {
    ModelConfig cfg;
    cfg.resolution = resolution;
    if (resolution == 64) {
        cfg.image_blocks = {64, 32, 16};
        cfg.discriminator_channels = {32, 64, 128};
    } else if (resolution == 128) {
        cfg.volume_channels = 512;
        cfg.volume_blocks = {128, 64};
        cfg.post_rotation_channels = 64;
        cfg.projection_channels = 512;
        cfg.image_blocks = {256, 64, 32};
        cfg.encoder_channels = {64, 128, 256};
        cfg.encoder_head_channels = 256;
        cfg.discriminator_channels = {64, 128, 256};
    } else if (resolution != 32) {
        throw ConfigError(fmt::format("no default layout for resolution {}", resolution));
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------------------------

Decoder::Decoder(ModelConfig cfg, PoseRange range) : cfg_(std::move(cfg)), range_(range) {
    cfg_.validate();
    range_.validate();
    const auto s = cfg_.volume_size;
    constant_ = register_parameter("constant", torch::randn({1, cfg_.volume_channels, s, s, s}) * 0.5);
    mapping_ = register_module("mapping", torch::nn::Sequential(torch::nn::Linear(cfg_.latent_dim, cfg_.mapping_hidden),
                                                               torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kSlope)),
                                                               torch::nn::Linear(cfg_.mapping_hidden, cfg_.mapping_hidden),
                                                               torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kSlope))));
    volume_convs_ = register_module("volume_convs", torch::nn::ModuleList());
    image_convs_ = register_module("image_convs", torch::nn::ModuleList());
    modulations_ = register_module("modulations", torch::nn::ModuleList());

    auto add_style = [&](int64_t channels) {
        modulations_->push_back(torch::nn::Linear(cfg_.mapping_hidden, 2 * channels));
    };
    int64_t in = cfg_.volume_channels;
    for (int64_t out : cfg_.volume_blocks) {
        volume_convs_->push_back(torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).padding(1)));
        add_style(out);
        in = out;
    }
    post_rotation_ = register_module(
        "post_rotation", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, cfg_.post_rotation_channels, 3).padding(1)));
    add_style(cfg_.post_rotation_channels);
    const int64_t depth = cfg_.rendered_extent();
    projection_ = register_module(
        "projection", torch::nn::Conv2d(torch::nn::Conv2dOptions(depth * cfg_.post_rotation_channels,
                                                                 cfg_.projection_channels, 1)));
    in = cfg_.projection_channels;
    for (int64_t out : cfg_.image_blocks) {
        image_convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
        add_style(out);
        in = out;
    }
    to_rgb_ = register_module("to_rgb", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));

    // Default Linear init shrinks the style path to ~0.05, so z barely moved the output and the
    // adversarial game learned to drop it. Keep w and the per-channel scales at unit size instead.
    torch::NoGradGuard no_grad;
    for (const auto& m : mapping_->children()) {
        if (auto* lin = m->as<torch::nn::Linear>()) {
            torch::nn::init::kaiming_normal_(lin->weight, kSlope, torch::kFanIn, torch::kLeakyReLU);
            lin->bias.zero_();
        }
    }
    for (const auto& m : *modulations_) {
        auto* lin = m->as<torch::nn::Linear>();
        lin->weight.normal_(0.0, cfg_.style_gain / std::sqrt(static_cast<double>(cfg_.mapping_hidden)));
        lin->bias.zero_();
    }
}

torch::Tensor Decoder::generate(const torch::Tensor& z, const torch::Tensor& pose) {
    if (z.dim() != 2 || z.size(1) != cfg_.latent_dim) {
        throw ConfigError(fmt::format("decoder expects latent codes of length {}", cfg_.latent_dim));
    }
    const auto b = z.size(0);
    if (pose.dim() != 2 || pose.size(0) != b || pose.size(1) != 3) {
        throw ShapeError("decoder expects a [B,3] pose batch");
    }
    // uniform [0,1] codes standardized to zero mean, unit variance
    auto w = mapping_->forward((z - 0.5) * std::sqrt(12.0));
    size_t style = 0;
    auto next_style = [&]() { return modulations_[style++]->as<torch::nn::Linear>()->forward(w); };

    auto x = constant_.expand({b, -1, -1, -1, -1});
    for (const auto& m : *volume_convs_) {
        x = lrelu(modulate(m->as<torch::nn::Conv3d>()->forward(x), next_style()));
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0, 2.0})
                                  .mode(torch::kTrilinear)
                                  .align_corners(false));
    }
    x = rigid_transform_volume(x, pose, range_.canonical());
    x = lrelu(modulate(post_rotation_->forward(x), next_style()));
    x = lrelu(projection_->forward(project_volume(x)));
    for (const auto& m : *image_convs_) {
        x = lrelu(modulate(m->as<torch::nn::Conv2d>()->forward(x), next_style()));
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    }
    return torch::tanh(to_rgb_->forward(x));
}

std::shared_ptr<GeneratorInterface> Decoder::clone_generator() const {
    auto copy = std::make_shared<Decoder>(cfg_, range_);
    copy_module_state(*this, *copy);
    if (!is_training()) {
        copy->eval();
    }
    return copy;
}

// ---------------------------------------------------------------------------------------------

Encoder::Encoder(ModelConfig cfg, PoseRange range) : cfg_(std::move(cfg)), range_(range) {
    cfg_.validate();
    auto conv = [](int64_t in, int64_t out, int64_t k, int64_t stride) {
        return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                                     .stride(stride)
                                     .padding(k / 2)
                                     .padding_mode(torch::kReflect));
    };
    int64_t in = 3;
    for (size_t i = 0; i < cfg_.encoder_channels.size(); ++i) {
        const int64_t out = cfg_.encoder_channels[i];
        ResidualBlock blk;
        blk.conv1 = register_module(fmt::format("block{}_conv1", i), conv(in, out, 3, 2));
        blk.conv2 = register_module(fmt::format("block{}_conv2", i), conv(out, out, 3, 1));
        blk.skip = register_module(fmt::format("block{}_skip", i),
                                   torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(2)));
        blocks_.push_back(blk);
        in = out;
    }
    pose_conv_ = register_module("pose_conv", conv(in, cfg_.encoder_head_channels, 3, 1));
    pose_fc_ = register_module("pose_fc", torch::nn::Linear(cfg_.encoder_head_channels, 3));
    z_conv_ = register_module("z_conv", conv(in, cfg_.encoder_head_channels, 3, 1));
    z_fc_ = register_module("z_fc", torch::nn::Linear(cfg_.encoder_head_channels, cfg_.latent_dim));
}

torch::Tensor Encoder::head(torch::nn::Conv2d& conv, torch::nn::Linear& fc, const torch::Tensor& features) {
    auto h = lrelu(conv->forward(features));
    return fc->forward(h.mean({2, 3}));
}

EncoderOutput Encoder::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != cfg_.resolution ||
        images.size(3) != cfg_.resolution) {
        throw ShapeError(fmt::format("encoder expects [B,3,{0},{0}] images", cfg_.resolution));
    }
    auto x = images;
    for (auto& blk : blocks_) {
        auto h = blk.conv2->forward(lrelu(blk.conv1->forward(x)));
        x = lrelu(h + blk.skip->forward(x));
    }
    EncoderOutput out;
    out.pose_logit = head(pose_conv_, pose_fc_, x);
    out.pose_unit = torch::sigmoid(out.pose_logit);
    out.pose = remap_unit_to_pose(out.pose_unit, range_);
    out.z = torch::tanh(head(z_conv_, z_fc_, x));
    return out;
}

// ---------------------------------------------------------------------------------------------

Discriminator::Discriminator(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    convs_ = register_module("convs", torch::nn::ModuleList());
    int64_t in = 3;
    for (int64_t out : cfg_.discriminator_channels) {
        convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
        in = out;
    }
    const int64_t side = cfg_.resolution >> static_cast<int64_t>(cfg_.discriminator_channels.size());
    if (cfg_.discriminator_batch_std) {
        ++in;
    }
    classifier_ = register_module("classifier", torch::nn::Linear(in * side * side, 1));
}

torch::Tensor Discriminator::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != cfg_.resolution ||
        images.size(3) != cfg_.resolution) {
        throw ShapeError(fmt::format("discriminator expects [B,3,{0},{0}] images", cfg_.resolution));
    }
    auto x = images;
    for (const auto& m : *convs_) {
        x = lrelu(m->as<torch::nn::Conv2d>()->forward(x));
    }
    if (cfg_.discriminator_batch_std) {
        // One scalar per batch: a collapsed generator shows up as near-zero spread.
        auto spread = torch::sqrt(x.var(0, /*unbiased=*/false) + 1e-8).mean();
        x = torch::cat({x, spread.expand({x.size(0), 1, x.size(2), x.size(3)})}, 1);
    }
    return classifier_->forward(x.flatten(1)).squeeze(1);
}

// ---------------------------------------------------------------------------------------------

Networks make_networks(const ModelConfig& cfg, const PoseRange& range, uint64_t seed) {
    torch::manual_seed(seed);
    Networks n;
    n.decoder = std::make_shared<Decoder>(cfg, range);
    n.encoder = std::make_shared<Encoder>(cfg, range);
    n.discriminator = std::make_shared<Discriminator>(cfg);
    return n;
}

Image decode(GeneratorInterface& decoder, const torch::Tensor& z, const Pose& pose) {
    torch::NoGradGuard no_grad;
    auto zz = z.dim() == 1 ? z.unsqueeze(0) : z;
    auto p = pose_to_tensor(pose, zz.options()).unsqueeze(0);
    return Image{decoder.generate(zz, p)[0], {}};
}

std::pair<torch::Tensor, Pose> encode(Encoder& encoder, const Image& img) {
    torch::NoGradGuard no_grad;
    auto out = encoder.forward(img.pixels.unsqueeze(0));
    return {out.z[0], pose_from_tensor(out.pose[0])};
}

torch::Tensor sample_latent(std::mt19937_64& rng, int64_t batch, int64_t length) {
    if (batch <= 0 || length <= 0) {
        throw ConfigError("latent sampling needs positive sizes");
    }
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    auto out = torch::empty({batch, length}, torch::kFloat32);
    auto* p = out.data_ptr<float>();
    for (int64_t i = 0; i < batch * length; ++i) {
        p[i] = unit(rng);
    }
    return out;
}

torch::Tensor sample_unit_poses(std::mt19937_64& rng, int64_t batch) { return sample_latent(rng, batch, 3); }

void copy_module_state(const torch::nn::Module& from, torch::nn::Module& to) {
    torch::NoGradGuard no_grad;
    auto src_params = from.named_parameters(true);
    auto dst_params = to.named_parameters(true);
    for (auto& item : dst_params) {
        const auto* src = src_params.find(item.key());
        if (src == nullptr || src->sizes() != item.value().sizes()) {
            throw ShapeError(fmt::format("parameter '{}' missing or mismatched", item.key()));
        }
        item.value().copy_(*src);
    }
    auto src_buffers = from.named_buffers(true);
    for (auto& item : to.named_buffers(true)) {
        const auto* src = src_buffers.find(item.key());
        if (src != nullptr) {
            item.value().copy_(*src);
        }
    }
}

void set_requires_grad(torch::nn::Module& m, bool flag) {
    for (auto& p : m.parameters(true)) {
        p.set_requires_grad(flag);
    }
}

int64_t parameter_count(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters(true)) {
        n += p.numel();
    }
    return n;
}

} // namespace nvs
