#include "novelview/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double unit_component(double value, double lo, double hi) {
    if (hi == lo) {
        return 0.5;
    }
    return (value - lo) / (hi - lo);
}

} // namespace

Pose PoseRange::canonical() const {
    return Pose{0.5 * (azimuth_min + azimuth_max), 0.5 * (elevation_min + elevation_max), 1.0};
}

bool PoseRange::contains(const Pose& p, double tol) const {
    if (p.scale <= 0.0) {
        return false;
    }
    const bool az_ok = full_circle() ||
                       wrap_degrees(p.azimuth_deg - azimuth_min) <= azimuth_max - azimuth_min + tol;
    return az_ok && p.elevation_deg >= elevation_min - tol && p.elevation_deg <= elevation_max + tol &&
           p.scale >= scale_min - tol && p.scale <= scale_max + tol;
}

void PoseRange::validate() const {
    if (azimuth_min > azimuth_max || elevation_min > elevation_max || scale_min > scale_max) {
        throw ConfigError("pose range: min exceeds max");
    }
    if (scale_min <= 0.0) {
        throw ConfigError("pose range: scale must be positive");
    }
    if (azimuth_max - azimuth_min > 360.0) {
        throw ConfigError("pose range: azimuth span exceeds 360 degrees");
    }
}

PoseRange PoseRange::named(std::string_view name) {
    if (name == "celeba") {
        return {220.0, 320.0, 70.0, 110.0, 1.0, 1.0};
    }
    if (name == "real_cars") {
        return {0.0, 360.0, 60.0, 95.0, 1.0, 1.5};
    }
    if (name == "shapenet_cars" || name == "shapenet_sofa") {
        return {0.0, 360.0, 25.0, 30.0, 1.0, 1.5};
    }
    if (name == "synthetic") {
        return {0.0, 360.0, 70.0, 110.0, 1.0, 1.5};
    }
    throw ConfigError(fmt::format("unknown pose range '{}'", name));
}

double wrap_degrees(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r < 0.0) {
        r += 360.0;
    }
    // fmod of a tiny negative value can round back up to 360.
    return r >= 360.0 ? 0.0 : r;
}

Pose remap_unit_to_pose(const UnitPose& u, const PoseRange& range) {
    for (double c : u) {
        if (!(c >= 0.0 && c <= 1.0)) {
            throw std::domain_error(fmt::format("unit pose component {} outside [0,1]", c));
        }
    }
    return Pose{
        wrap_degrees(range.azimuth_min + u[0] * (range.azimuth_max - range.azimuth_min)),
        range.elevation_min + u[1] * (range.elevation_max - range.elevation_min),
        range.scale_min + u[2] * (range.scale_max - range.scale_min),
    };
}

UnitPose remap_pose_to_unit(const Pose& p, const PoseRange& range) {
    const double az_span = range.azimuth_max - range.azimuth_min;
    const double az = az_span == 0.0 ? 0.5 : wrap_degrees(p.azimuth_deg - range.azimuth_min) / az_span;
    return {az, unit_component(p.elevation_deg, range.elevation_min, range.elevation_max),
            unit_component(p.scale, range.scale_min, range.scale_max)};
}

torch::Tensor remap_unit_to_pose(const torch::Tensor& unit, const PoseRange& range) {
    auto lo = torch::tensor({range.azimuth_min, range.elevation_min, range.scale_min}, unit.options());
    auto span = torch::tensor({range.azimuth_max - range.azimuth_min, range.elevation_max - range.elevation_min,
                               range.scale_max - range.scale_min},
                              unit.options());
    return lo + unit * span;
}

torch::Tensor remap_pose_to_unit(const torch::Tensor& pose, const PoseRange& range) {
    auto spans = std::array<double, 3>{range.azimuth_max - range.azimuth_min,
                                       range.elevation_max - range.elevation_min, range.scale_max - range.scale_min};
    auto los = std::array<double, 3>{range.azimuth_min, range.elevation_min, range.scale_min};
    std::vector<torch::Tensor> cols;
    for (int64_t k = 0; k < 3; ++k) {
        auto col = pose.select(-1, k);
        if (spans[k] == 0.0) {
            cols.push_back(torch::full_like(col, 0.5));
            continue;
        }
        auto d = col - los[k];
        if (k == 0 && range.full_circle()) {
            d = torch::remainder(d, 360.0);
        }
        cols.push_back(d / spans[k]);
    }
    return torch::stack(cols, -1);
}

torch::Tensor pose_to_tensor(const Pose& p, torch::TensorOptions opts) {
    return torch::tensor({p.azimuth_deg, p.elevation_deg, p.scale}, opts.dtype(torch::kFloat64)).to(opts);
}

Pose pose_from_tensor(const torch::Tensor& row) {
    auto r = row.detach().to(torch::kFloat64).contiguous().view({3});
    auto a = r.accessor<double, 1>();
    return Pose{wrap_degrees(a[0]), a[1], a[2]};
}

void FeatureVolume::check_cubic() const {
    if (!grid.defined() || grid.dim() != 5) {
        throw ShapeError("feature volume must be a 5-D [N,C,D,H,W] tensor");
    }
    if (grid.size(2) != grid.size(3) || grid.size(3) != grid.size(4)) {
        throw ShapeError(fmt::format("feature volume is not cubic: {}x{}x{}", grid.size(2), grid.size(3),
                                     grid.size(4)));
    }
}

torch::Tensor rotation_matrices(const torch::Tensor& angles_rad) {
    auto ca = torch::cos(angles_rad.select(1, 0));
    auto sa = torch::sin(angles_rad.select(1, 0));
    auto ce = torch::cos(angles_rad.select(1, 1));
    auto se = torch::sin(angles_rad.select(1, 1));
    auto zero = torch::zeros_like(ca);
    auto one = torch::ones_like(ca);
    // about y (vertical): mixes x and z
    auto r_az = torch::stack({ca, zero, sa, zero, one, zero, -sa, zero, ca}, 1).view({-1, 3, 3});
    // about x (horizontal): mixes y and z
    auto r_el = torch::stack({one, zero, zero, zero, ce, -se, zero, se, ce}, 1).view({-1, 3, 3});
    return torch::bmm(r_el, r_az);
}

torch::Tensor trilinear_sample(const torch::Tensor& volume, const torch::Tensor& coords) {
    const auto b = volume.size(0);
    const auto c = volume.size(1);
    const auto d = volume.size(2);
    const auto h = volume.size(3);
    const auto w = volume.size(4);
    const auto p = coords.size(1);
    auto flat = volume.reshape({b, c, d * h * w});

    auto base = torch::floor(coords.detach());
    auto frac = coords - base; // carries the gradient w.r.t. the coordinates
    auto base_l = base.to(torch::kLong);
    auto x0 = base_l.select(2, 0);
    auto y0 = base_l.select(2, 1);
    auto z0 = base_l.select(2, 2);
    auto fx = frac.select(2, 0);
    auto fy = frac.select(2, 1);
    auto fz = frac.select(2, 2);

    auto out = torch::zeros({b, c, p}, volume.options());
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1;
        const int dy = (corner >> 1) & 1;
        const int dz = (corner >> 2) & 1;
        auto xi = x0 + dx;
        auto yi = y0 + dy;
        auto zi = z0 + dz;
        auto valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (zi >= 0) & (zi < d);
        auto idx = ((zi.clamp(0, d - 1) * h + yi.clamp(0, h - 1)) * w + xi.clamp(0, w - 1));
        auto wx = dx ? fx : 1.0 - fx;
        auto wy = dy ? fy : 1.0 - fy;
        auto wz = dz ? fz : 1.0 - fz;
        auto weight = (wx * wy * wz) * valid.to(volume.scalar_type());
        auto gathered = flat.gather(2, idx.unsqueeze(1).expand({b, c, p}));
        out = out + gathered * weight.unsqueeze(1);
    }
    return out;
}

torch::Tensor rigid_transform_volume(const torch::Tensor& volume, const torch::Tensor& pose, const Pose& canonical) {
    FeatureVolume{volume}.check_cubic();
    const auto b = volume.size(0);
    const auto n = volume.size(2);
    auto poses = pose.dim() == 1 ? pose.unsqueeze(0).expand({b, 3}) : pose;
    if (poses.size(0) != b || poses.size(1) != 3) {
        throw ShapeError("pose batch does not match volume batch");
    }
    poses = poses.to(volume.scalar_type());

    auto offsets = torch::tensor({canonical.azimuth_deg, canonical.elevation_deg}, volume.options());
    auto angles = (poses.slice(1, 0, 2) - offsets) * kDegToRad;
    auto rot = rotation_matrices(angles);
    auto scale = poses.select(1, 2).view({b, 1, 1});

    // Centered output coordinates, (x, y, z) = (W, H, D) index minus the center.
    const double center = 0.5 * static_cast<double>(n - 1);
    auto lin = torch::arange(n, volume.options()) - center;
    auto grids = torch::meshgrid({lin, lin, lin}, "ij"); // z, y, x
    auto pts = torch::stack({grids[2].reshape(-1), grids[1].reshape(-1), grids[0].reshape(-1)}, 1); // [P,3]

    // Inverse warp: an output point p reads the input at R^T p / s; as row vectors, p R / s.
    auto src = torch::matmul(pts.unsqueeze(0), rot) / scale + center;
    auto sampled = trilinear_sample(volume, src);
    return sampled.view(volume.sizes());
}

FeatureVolume rigid_transform_volume(const FeatureVolume& v, const Pose& p, const PoseRange& range) {
    v.check_cubic();
    return FeatureVolume{rigid_transform_volume(v.grid, pose_to_tensor(p, v.grid.options()), range.canonical())};
}

torch::Tensor project_volume(const torch::Tensor& volume) {
    if (volume.dim() != 5) {
        throw ShapeError("project_volume expects a [B,C,D,H,W] tensor");
    }
    const auto b = volume.size(0);
    const auto c = volume.size(1);
    const auto d = volume.size(2);
    return volume.permute({0, 2, 1, 3, 4}).reshape({b, d * c, volume.size(3), volume.size(4)});
}

} // namespace nvs
