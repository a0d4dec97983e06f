#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "novelview/datasets.hpp"
#include "novelview/geometry.hpp"
#include "novelview/models.hpp"
#include "novelview/training.hpp"

namespace nvs {

/// Where training images come from. An empty manifest means the procedural cuboid set.
struct DatasetSpec {
    std::string name = "synthetic";
    std::string manifest;
    Preprocess preprocess = Preprocess::kNone;
    PoseRange range = PoseRange::named("synthetic");
    int synth_objects = 100;
    int synth_views = 20;
    uint64_t synth_seed = 1;

    bool operator==(const DatasetSpec&) const = default;
};

struct EvalConfig {
    int64_t max_pairs = 0; // NVS pairs per object group; 0 = all ordered pairs
    int64_t swap_identities = 4;
    int64_t swap_poses = 4;
    int64_t strip_views = 7;

    bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
    DatasetSpec dataset;
    ModelConfig model;
    TrainConfig stage1 = TrainConfig::stage1_defaults();
    TrainConfig stage2 = TrainConfig::stage2_defaults();
    FinetuneConfig finetune;
    FitConfig fit;
    EvalConfig eval;
    uint64_t seed = 0;
    std::string output_dir = "runs/desk";
    std::string perceptual_weights; // optional weights file for the perceptual extractor

    bool operator==(const RunConfig&) const = default;

    /// Throws ConfigError on any invalid section.
    void validate() const;

    /// Desk-scale run on the synthetic cuboids at 32x32.
    static RunConfig desk_defaults();
};

std::string to_yaml(const RunConfig& cfg);

/// Missing keys keep their defaults; unknown keys and malformed values throw ConfigError.
RunConfig parse_run_config(const std::string& yaml);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

const char* to_string(Preprocess p);
Preprocess preprocess_from_string(const std::string& s);

} // namespace nvs
