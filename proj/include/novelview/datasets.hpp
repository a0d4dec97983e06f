#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "novelview/geometry.hpp"
#include "novelview/image.hpp"

namespace nvs {

// ---------------------------------------------------------------------------------------------
// Real-data preprocessing
// ---------------------------------------------------------------------------------------------

/// Axis-aligned box: top-left corner plus size, in pixels.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    bool operator==(const BBox&) const = default;
};

struct CropSquare {
    int x0 = 0;
    int y0 = 0;
    int side = 0;

    bool operator==(const CropSquare&) const = default;
};

/// Centered square of side min(H, W).
CropSquare center_square(int width, int height);

/// Square with the bbox center and side = longest bbox side. When it cannot fit, the side shrinks to
/// min(W, H); the square is then shifted by the minimal amount that brings it in bounds.
/// Throws DataError for an empty bbox.
CropSquare cars_crop_square(int width, int height, const BBox& box);

/// Aligned portrait: center square crop, bilinear resize, normalize.
Image preprocess_celeba(const ByteImage& raw, int resolution);

Image preprocess_cars(const ByteImage& raw, const BBox& box, int resolution);

/// Table-2 split sizes for the named real corpora.
struct CorpusInfo {
    const char* name;
    int64_t train;
    int64_t val;
    int64_t test;
    int resolution;
};
const std::vector<CorpusInfo>& corpus_table();

// ---------------------------------------------------------------------------------------------
// Procedural desk-scale dataset
// ---------------------------------------------------------------------------------------------

/// Appearance of a textured cuboid: half extents along (x, y, z) and one RGB color per face
/// (+x, -x, +y, -y, +z, -z), components in [0,1].
struct CuboidIdentity {
    std::array<double, 3> half_extents{0.35, 0.3, 0.4};
    std::array<std::array<double, 3>, 6> face_colors{};

    static constexpr double kTint = 0.06;       // per object, shared by all faces
    static constexpr double kFaceJitter = 0.03; // per face

    /// Category colors per face; a sample is base + tint + jitter, extents ordered x > z.
    static const std::array<std::array<double, 3>, 6>& base_colors();
    static CuboidIdentity sample(std::mt19937_64& rng);
};

struct Rasterization {
    ByteImage image;
    std::vector<double> coverage; // per pixel, fraction of sub-samples hitting the object
};

/// Orthographic software rasterization on a black background. Azimuth turns the cuboid about the
/// vertical axis, elevation tilts it by (elevation - 90) degrees about the horizontal axis, and
/// scale magnifies it. Deterministic: identical inputs give byte-identical output.
Rasterization rasterize_cuboid(const CuboidIdentity& identity, const Pose& pose, int resolution);

Image synth_render(const CuboidIdentity& identity, const Pose& pose, int resolution);

// ---------------------------------------------------------------------------------------------
// Manifests, datasets, splits
// ---------------------------------------------------------------------------------------------

struct Sample {
    std::string id;
    std::string path; // relative to the manifest directory
    std::string split; // train | val | test
    std::optional<BBox> bbox;
    std::optional<Pose> pose;
    std::optional<std::string> group;

    bool operator==(const Sample&) const = default;
};

/// Comma-delimited, one sample per line, header:
/// id,path,split,bbox_x,bbox_y,bbox_w,bbox_h,azimuth,elevation,scale,group (empty field = absent).
std::vector<Sample> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

/// All samples with decoded, preprocessed pixels held in memory.
struct Dataset {
    std::vector<Sample> samples;
    torch::Tensor images; // [N,3,H,W] float32 in [-1,1]
    PoseRange range;

    [[nodiscard]] int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

/// Evaluation view of one split: may carry ground-truth poses and multi-view groups.
struct DatasetSplit {
    std::string name;
    std::vector<int64_t> indices; // into Dataset::samples
    std::vector<std::optional<Pose>> poses;
    std::map<std::string, std::vector<int64_t>> groups; // object id -> positions within `indices`

    [[nodiscard]] bool has_ground_truth() const;
    [[nodiscard]] int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

DatasetSplit select_split(const Dataset& dataset, const std::string& name);

/// How raw images are turned into model input when loading a manifest.
enum class Preprocess { kNone, kCeleba, kCars };

Dataset load_dataset(const std::filesystem::path& manifest, int resolution, const PoseRange& range,
                     Preprocess mode = Preprocess::kNone);

/// n_objects random cuboids, views_per_object random poses each; objects are assigned to
/// train/val/test at 70/10/20. Ground truth is kept for evaluation only.
Dataset make_synthetic_split(int n_objects, int views_per_object, const PoseRange& range, uint64_t seed,
                             int resolution);

/// Writes images plus manifest.csv under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Training-side iterator: yields image batches only. Order is a pure function of (seed, epoch).
class TrainIterator {
public:
    TrainIterator(torch::Tensor images, int64_t batch_size, uint64_t seed);
    TrainIterator(const Dataset& dataset, const std::string& split, int64_t batch_size, uint64_t seed);

    [[nodiscard]] int64_t batches_per_epoch() const;
    /// Batch `index` of `epoch`; the final partial batch is dropped.
    [[nodiscard]] torch::Tensor batch(int64_t epoch, int64_t index) const;
    [[nodiscard]] int64_t size() const { return images_.size(0); }

private:
    torch::Tensor images_;
    int64_t batch_size_;
    uint64_t seed_;
};

} // namespace nvs
