#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "novelview/checkpoint.hpp"
#include "novelview/config.hpp"
#include "novelview/datasets.hpp"
#include "novelview/training.hpp"

namespace nvs {

/// The run's dataset: the manifest when one is given, otherwise the procedural cuboid set.
Dataset load_run_dataset(const RunConfig& cfg);

/// [N,3,H,W] images of one split.
torch::Tensor split_images(const Dataset& dataset, const std::string& split);

/// Fresh Stage-1 state for a run (networks seeded from cfg.seed, perceptual weights loaded if set).
TrainState make_run_state(const RunConfig& cfg);

/// Throws ShapeError when the checkpoint's architecture differs from `cfg`.
void check_compatible(const CheckpointManifest& manifest, const RunConfig& cfg);

using StepCallback = std::function<void(const TrainState&, const LossReport&)>;

struct StageRun {
    std::vector<LossReport> log;
    std::filesystem::path final_checkpoint;
};

/// Runs the state's stage from state.epoch to the configured epoch count. Appends to
/// <out>/loss_stage<N>.csv, saves <out>/stage<N>_e<EEEE> every checkpoint_every epochs and at the end.
/// On a non-finite loss, saves <out>/stage<N>_abort and rethrows the NumericalError.
StageRun run_stage(TrainState& state, const RunConfig& cfg, const torch::Tensor& train_images,
                   const std::filesystem::path& out, const StepCallback& on_step = {});

} // namespace nvs
