#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "novelview/config.hpp"
#include "novelview/training.hpp"

namespace nvs {

inline constexpr int kCheckpointFormatVersion = 1;

/// Directory layout: manifest.yaml (human readable) + params.pt (tensors and optimizer moments).
struct CheckpointManifest {
    int format_version = kCheckpointFormatVersion;
    int stage = 1;
    int64_t epoch = 0;
    int64_t step = 0;
    RunConfig config;
    std::map<std::string, double> metrics;
    std::string rng_state;
    uint64_t checksum = 0;           // parameter_checksum
    uint64_t optimizer_checksum = 0; // optimizer_checksum
    bool has_teacher = false;
    std::map<std::string, std::vector<int64_t>> shapes; // "decoder.<param>" -> sizes
};

/// FNV-1a over the bytes of every parameter (decoder, encoder, discriminator, then teacher).
uint64_t parameter_checksum(const TrainState& state);

/// FNV-1a over the Adam moments and step counts of all three optimizers, in parameter order.
uint64_t optimizer_checksum(const TrainState& state);

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const RunConfig& cfg,
                     const std::map<std::string, double>& metrics = {});

/// Reads and checks the manifest only. Throws ShapeError on an unknown format version and
/// DataError when the directory is not a checkpoint.
CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& dir);

struct LoadedCheckpoint {
    CheckpointManifest manifest;
    TrainState state;
};

/// Rebuilds networks from the stored config, validates every shape against the manifest and
/// restores parameters, optimizer moments and the host RNG stream. Throws ShapeError on mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace nvs
