#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "novelview/geometry.hpp"
#include "novelview/image.hpp"
#include "novelview/losses.hpp"
#include "novelview/models.hpp"

namespace nvs {

/// Stage-2 loss terms that can be switched off for ablations.
struct Stage2Terms {
    bool autoencoder = true;  // real-image reconstruction
    bool self_distill = true; // reconstruct teacher renders through E then D
    bool multi_view = true;   // teacher input view differs from the supervised view
    bool adversarial = true;  // generator term on reconstructions of real images
    bool consistency = true;  // latent and pose consistency on teacher renders

    bool operator==(const Stage2Terms&) const = default;

    /// Rows 1-7 of the ablation table (row 1 and 2 also differ in Stage-1 pretraining, see TrainConfig).
    static Stage2Terms ablation_row(int row);
};

struct TrainConfig {
    int stage = 1;
    int64_t epochs = 50;
    int64_t decay_start = 25; // lr is constant through this epoch, then decays linearly to 0 at `epochs`
    double lr = 5e-5;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int64_t batch_size = 16;
    double distill_ratio = 1.0; // generated samples per real sample in Stage-2 distillation terms
    int64_t steps_per_epoch = 0; // 0: one pass over the training images
    LossWeights weights;
    Stage2Terms terms;
    bool init_from_stage1 = true;
    int64_t checkpoint_every = 5; // epochs; the final epoch is always saved

    bool operator==(const TrainConfig&) const = default;

    /// Throws ConfigError on non-positive counts or a schedule that would increase.
    void validate() const;

    static TrainConfig stage1_defaults();
    static TrainConfig stage2_defaults();
};

/// Learning rate for `epoch` (0-based).
double lr_schedule(int64_t epoch, const TrainConfig& cfg);

struct FinetuneConfig {
    int64_t steps = 100;
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    bool optimize_decoder = true;
    bool optimize_latent = true; // z and the pose
    double w_l2 = 1.0;
    double w_ssim = 1.0;
    double w_vgg = 1.0;
    double w_adv = 1.0;

    bool operator==(const FinetuneConfig&) const = default;
    void validate() const;
};

enum class FitInit { kRandom, kEncoder };

struct FitConfig {
    int64_t steps = 200;
    double lr = 0.05;
    FitInit init = FitInit::kEncoder;
    uint64_t seed = 0; // used by random initialization
    double w_l2 = 1.0;
    double w_ssim = 1.0;
    double w_vgg = 1.0;

    bool operator==(const FitConfig&) const = default;
    void validate() const;
};

/// Everything the training loop mutates.
struct TrainState {
    ModelConfig model;
    PoseRange range;
    Networks nets;
    std::shared_ptr<GeneratorInterface> teacher; // frozen Stage-1 decoder, Stage 2 only
    std::shared_ptr<PerceptualExtractor> perceptual;
    std::unique_ptr<torch::optim::Adam> opt_decoder;
    std::unique_ptr<torch::optim::Adam> opt_encoder;
    std::unique_ptr<torch::optim::Adam> opt_discriminator;
    std::mt19937_64 rng;
    int stage = 1;
    int64_t epoch = 0; // completed epochs in the current stage
    int64_t step = 0;  // completed steps in the current stage
};

/// Fresh networks (seeded) and Stage-1 optimizers.
TrainState make_train_state(const ModelConfig& model, const PoseRange& range, const TrainConfig& cfg, uint64_t seed);

/// Switches a state to Stage 2: snapshots the decoder as the frozen teacher and builds fresh
/// optimizers. With init_from_stage1 == false the networks are re-initialized from `seed`.
void begin_stage2(TrainState& state, const TrainConfig& cfg, uint64_t seed);

void set_learning_rate(TrainState& state, double lr);

/// One Stage-1 iteration: discriminator, decoder (adversarial) and encoder (consistency) updates.
/// Host randomness comes from state.rng. Throws NumericalError on a non-finite loss.
LossReport stage1_step(TrainState& state, const TrainConfig& cfg, const torch::Tensor& real_batch);

/// One Stage-2 iteration over the enabled terms. Throws NumericalError on a non-finite loss.
LossReport stage2_step(TrainState& state, const TrainConfig& cfg, const torch::Tensor& real_batch);

struct TracePoint {
    double loss = 0.0;
    double l1_255 = 0.0;
};

struct FinetuneResult {
    std::shared_ptr<GeneratorInterface> decoder; // adapted copy; the input decoder is untouched
    torch::Tensor z;                             // [latent_dim]
    Pose pose;
    std::vector<TracePoint> trace; // one entry per step, measured before the update
    Image reconstruction;          // after the final step
};

/// Per-image adaptation of a copy of the decoder together with (z, pose), starting from the encoder.
FinetuneResult finetune_image(const Networks& nets, PerceptualExtractor& perceptual, const Image& target,
                              const FinetuneConfig& cfg);

struct FitResult {
    torch::Tensor z;
    Pose pose;
    std::vector<TracePoint> trace;
    double final_loss = 0.0;
    Image reconstruction;
};

/// Optimizes only (z, pose) against a frozen decoder. `encoder` is required for encoder init.
FitResult fit_latent_baseline(GeneratorInterface& decoder, Encoder* encoder, PerceptualExtractor& perceptual,
                              const Image& target, const FitConfig& cfg);

/// Mean absolute difference on the [0,255] scale.
double l1_255(const torch::Tensor& a, const torch::Tensor& b);

} // namespace nvs
