#pragma once

#include <memory>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "novelview/geometry.hpp"
#include "novelview/image.hpp"

namespace nvs {

/// Architecture hyperparameters. Every layer shape is a pure function of these fields.
struct ModelConfig {
    int64_t resolution = 32;
    int64_t latent_dim = 128;
    int64_t mapping_hidden = 128;
    double style_gain = 1.0; // std of the z-driven per-channel scale at init

    // Decoder: learned constant volume_size^3 x volume_channels, then one 3D block per entry of
    // volume_blocks (conv, modulation, x2 trilinear upsampling), rigid transform, one post-rotation
    // 3D block, projection, then one 2D block per entry of image_blocks (conv, modulation, x2 bilinear).
    int64_t volume_size = 4;
    int64_t volume_channels = 64;
    std::vector<int64_t> volume_blocks{32};
    int64_t post_rotation_channels = 16;
    int64_t projection_channels = 64;
    std::vector<int64_t> image_blocks{32, 16};

    std::vector<int64_t> encoder_channels{16, 32, 64}; // three stride-2 residual blocks
    int64_t encoder_head_channels = 64;

    std::vector<int64_t> discriminator_channels{32, 64}; // one stride-2 block per image block
    bool discriminator_batch_std = true; // append the batch feature spread as an extra channel

    bool operator==(const ModelConfig&) const = default;

    /// Spatial extent of the rotated volume (and of the projected feature map).
    [[nodiscard]] int64_t rendered_extent() const;

    /// Throws ConfigError when block counts and resolution disagree.
    void validate() const;

    /// Desk defaults for a given output resolution (32 or 64) and 128 for the full-scale layout.
    static ModelConfig for_resolution(int64_t resolution);
};

/// Anything that renders images from a latent code and a pose.
/// z: [B, latent_dim]; pose: [B,3] (azimuth deg, elevation deg, scale). Returns [B,3,H,W] in [-1,1].
class GeneratorInterface : public torch::nn::Module {
public:
    virtual torch::Tensor generate(const torch::Tensor& z, const torch::Tensor& pose) = 0;
    /// Deep copy with identical parameter values.
    [[nodiscard]] virtual std::shared_ptr<GeneratorInterface> clone_generator() const = 0;
    [[nodiscard]] virtual int64_t latent_dim() const = 0;
    [[nodiscard]] virtual int64_t resolution() const = 0;
};

/// 3D-aware decoder: styled feature volume, rigid rotation by the pose, projection to 2D, styled upsampling.
class Decoder : public GeneratorInterface {
public:
    Decoder(ModelConfig cfg, PoseRange range);

    torch::Tensor generate(const torch::Tensor& z, const torch::Tensor& pose) override;
    [[nodiscard]] std::shared_ptr<GeneratorInterface> clone_generator() const override;
    [[nodiscard]] int64_t latent_dim() const override { return cfg_.latent_dim; }
    [[nodiscard]] int64_t resolution() const override { return cfg_.resolution; }

    [[nodiscard]] const ModelConfig& config() const { return cfg_; }
    [[nodiscard]] const PoseRange& range() const { return range_; }

private:
    ModelConfig cfg_;
    PoseRange range_;
    torch::Tensor constant_;
    torch::nn::Sequential mapping_{nullptr};
    torch::nn::ModuleList volume_convs_{nullptr};
    torch::nn::Conv3d post_rotation_{nullptr};
    torch::nn::Conv2d projection_{nullptr};
    torch::nn::ModuleList image_convs_{nullptr};
    torch::nn::Conv2d to_rgb_{nullptr};
    torch::nn::ModuleList modulations_{nullptr}; // one Linear per modulated block -> (gamma, beta)
};

struct EncoderOutput {
    torch::Tensor z;          // [B, latent_dim], tanh range
    torch::Tensor pose_unit;  // [B,3] sigmoid outputs
    torch::Tensor pose_logit; // [B,3] pre-sigmoid
    torch::Tensor pose;       // [B,3] remapped into the active range
};

class Encoder : public torch::nn::Module {
public:
    Encoder(ModelConfig cfg, PoseRange range);

    EncoderOutput forward(const torch::Tensor& images);

    [[nodiscard]] const PoseRange& range() const { return range_; }

private:
    struct ResidualBlock {
        torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    };
    torch::Tensor head(torch::nn::Conv2d& conv, torch::nn::Linear& fc, const torch::Tensor& features);

    ModelConfig cfg_;
    PoseRange range_;
    std::vector<ResidualBlock> blocks_;
    torch::nn::Conv2d pose_conv_{nullptr}, z_conv_{nullptr};
    torch::nn::Linear pose_fc_{nullptr}, z_fc_{nullptr};
};

/// Strided-convolution real/fake classifier; returns one logit per image ([B]).
class Discriminator : public torch::nn::Module {
public:
    explicit Discriminator(ModelConfig cfg);

    torch::Tensor forward(const torch::Tensor& images);

private:
    ModelConfig cfg_;
    torch::nn::ModuleList convs_{nullptr};
    torch::nn::Linear classifier_{nullptr};
};

/// The three trainable networks.
struct Networks {
    std::shared_ptr<GeneratorInterface> decoder;
    std::shared_ptr<Encoder> encoder;
    std::shared_ptr<Discriminator> discriminator;
};

Networks make_networks(const ModelConfig& cfg, const PoseRange& range, uint64_t seed);

/// Single-image conveniences over the batched modules.
Image decode(GeneratorInterface& decoder, const torch::Tensor& z, const Pose& pose);
std::pair<torch::Tensor, Pose> encode(Encoder& encoder, const Image& img);

/// [B, length] i.i.d. uniform [0,1] latent codes.
torch::Tensor sample_latent(std::mt19937_64& rng, int64_t batch, int64_t length);

/// [B,3] unit pose coordinates, uniform over [0,1]^3.
torch::Tensor sample_unit_poses(std::mt19937_64& rng, int64_t batch);

/// Copies parameter and buffer values between structurally identical modules.
void copy_module_state(const torch::nn::Module& from, torch::nn::Module& to);

void set_requires_grad(torch::nn::Module& m, bool flag);

/// Total number of scalar parameters.
int64_t parameter_count(const torch::nn::Module& m);

} // namespace nvs
