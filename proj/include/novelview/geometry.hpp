#pragma once

#include <array>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace nvs {

/// Object pose in the generator's canonical frame. Angles in degrees.
struct Pose {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double scale = 1.0;

    bool operator==(const Pose&) const = default;
};

/// Per-dataset pose bounds. An azimuth span of 360 degrees is treated as a full circle.
struct PoseRange {
    double azimuth_min = 0.0;
    double azimuth_max = 360.0;
    double elevation_min = 90.0;
    double elevation_max = 90.0;
    double scale_min = 1.0;
    double scale_max = 1.0;

    bool operator==(const PoseRange&) const = default;

    [[nodiscard]] bool full_circle() const { return azimuth_max - azimuth_min >= 360.0; }

    /// Midpoint of the azimuth and elevation spans with unit scale; the transform is the identity there.
    [[nodiscard]] Pose canonical() const;

    [[nodiscard]] bool contains(const Pose& p, double tol = 1e-9) const;

    /// Throws ConfigError when a min exceeds its max or scale is not positive.
    void validate() const;

    /// Table-2 ranges: "celeba", "real_cars", "shapenet_cars", "shapenet_sofa", plus the desk "synthetic" range.
    static PoseRange named(std::string_view name);
};

using UnitPose = std::array<double, 3>;

/// min + u * (max - min) per component; azimuth is reported modulo 360.
/// Throws std::domain_error for components outside [0,1].
Pose remap_unit_to_pose(const UnitPose& u, const PoseRange& range);

/// Inverse of remap_unit_to_pose. Degenerate (min == max) components map to 0.5.
UnitPose remap_pose_to_unit(const Pose& p, const PoseRange& range);

/// Batched, differentiable remap of [B,3] unit coordinates to [B,3] (azimuth, elevation, scale).
/// Azimuth is not wrapped here; rotation is periodic.
torch::Tensor remap_unit_to_pose(const torch::Tensor& unit, const PoseRange& range);

/// Batched inverse of the above. Azimuth is wrapped into the range start when full_circle().
torch::Tensor remap_pose_to_unit(const torch::Tensor& pose, const PoseRange& range);

torch::Tensor pose_to_tensor(const Pose& p, torch::TensorOptions opts = torch::kFloat32);
Pose pose_from_tensor(const torch::Tensor& row);

/// Wraps an angle into [0, 360).
double wrap_degrees(double deg);

/// 3D feature grid with shape [N, C, D, H, W] (cubic spatial extent).
/// Spatial layout: W is the horizontal axis x, H the vertical axis y, D the depth axis z.
struct FeatureVolume {
    torch::Tensor grid;

    [[nodiscard]] int64_t batch() const { return grid.size(0); }
    [[nodiscard]] int64_t channels() const { return grid.size(1); }
    [[nodiscard]] int64_t extent() const { return grid.size(2); }

    /// Throws ShapeError unless the grid is 5-D with equal spatial dims.
    void check_cubic() const;
};

/// Rotation applied to object coordinates: elevation about x after azimuth about y.
/// angles: [B,2] in radians (azimuth, elevation). Returns [B,3,3].
torch::Tensor rotation_matrices(const torch::Tensor& angles_rad);

/// Trilinear sampling with zero padding. coords: [B,P,3] in voxel index units ordered (x, y, z),
/// i.e. (W, H, D). Returns [B,C,P]. Differentiable w.r.t. both the volume and the coordinates.
torch::Tensor trilinear_sample(const torch::Tensor& volume, const torch::Tensor& coords);

/// Rigid transform of a [B,C,n,n,n] volume about its center: rotation by (pose - canonical) in
/// azimuth then elevation, followed by uniform magnification by `scale`. pose: [B,3] or [3].
/// Out-of-grid samples are zero. At the identity pose the result equals the input exactly.
torch::Tensor rigid_transform_volume(const torch::Tensor& volume, const torch::Tensor& pose,
                                     const Pose& canonical);

FeatureVolume rigid_transform_volume(const FeatureVolume& v, const Pose& p, const PoseRange& range);

/// Collapses depth into channels: [B,C,D,H,W] -> [B, D*C, H, W]. Depth slice d occupies channels
/// [d*C, (d+1)*C).
torch::Tensor project_volume(const torch::Tensor& volume);

} // namespace nvs
