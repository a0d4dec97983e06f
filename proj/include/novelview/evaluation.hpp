#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "novelview/datasets.hpp"
#include "novelview/geometry.hpp"
#include "novelview/image.hpp"
#include "novelview/models.hpp"

namespace nvs {

inline constexpr double kPsnrCap = 100.0;

/// Mean |a-b| with both images mapped continuously to [0,255]. Throws ShapeError on mismatch.
double metric_l1_255(const Image& a, const Image& b);
/// Gaussian-window SSIM, identical to 1 - ssim_loss.
double metric_ssim(const Image& a, const Image& b);
/// 10 log10(255^2 / MSE) on the [0,255] mapping, capped at kPsnrCap.
double metric_psnr(const Image& a, const Image& b);

/// Angular distance in degrees, arccos(cos(a - b)), in [0, 180].
double angle_error_deg(double a_deg, double b_deg);

/// y = slope * x + offset, by least squares.
struct AffineFit {
    double slope = 1.0;
    double offset = 0.0;
    double slope_se = 0.0; // standard errors
    double offset_se = 0.0;
    double r2 = 1.0;

    [[nodiscard]] double apply(double x) const { return slope * x + offset; }
    [[nodiscard]] double invert(double y) const { return (y - offset) / slope; }
};

/// Least squares on paired samples. Throws DataError with fewer than two distinct x values.
AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y);

/// Relation between the dataset's ground-truth pose frame and the frame the model learned.
///   azimuth:   learned = slope * gt + offset, in unwrapped degrees
///   elevation: learned = slope * gt + offset
///   rho:       rho_gt = offset + slope / learned_scale
/// Ground-truth rho is derived from the ground-truth scale as scale_min * scale_max / scale.
struct PoseFrameMap {
    PoseRange range;
    AffineFit azimuth;
    AffineFit elevation;
    AffineFit rho;
    bool fit_azimuth = false; // components with a degenerate range keep the identity
    bool fit_elevation = false;
    bool fit_rho = false;
    std::vector<std::array<double, 3>> residuals; // per pair: azimuth (wrapped), elevation, rho

    static PoseFrameMap identity(const PoseRange& range);

    /// Ground truth -> learned frame (clamped into the range); used to render target views.
    [[nodiscard]] Pose to_learned(const Pose& gt) const;
    /// Learned frame -> ground-truth azimuth/elevation, plus rho.
    [[nodiscard]] std::array<double, 3> to_ground_truth(const Pose& learned) const;
};

double rho_from_scale(double scale, const PoseRange& range);

/// Fits on (ground truth, predicted) pairs from the training and validation splits.
PoseFrameMap fit_pose_frame(const std::vector<Pose>& ground_truth, const std::vector<Pose>& predicted,
                            const PoseRange& range);

struct PoseMetrics {
    double angle_median_deg = 0.0;
    double angle_acc_30 = 0.0;
    double rho_l1_median = 0.0;
    int64_t count = 0;
};

/// Compares learned-frame predictions with ground truth after mapping through `frame`.
PoseMetrics pose_metrics(const std::vector<Pose>& predicted, const std::vector<Pose>& ground_truth,
                         const PoseFrameMap& frame);

/// One evaluated pair (or one image for reconstruction).
struct EvalRow {
    std::string source;
    std::string target;
    double l1_255 = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double l1_255 = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
    PoseMetrics pose;
    double timing_mean_s = 0.0;
    double timing_std_s = 0.0;

    void summarize(); // recompute the means from rows
    [[nodiscard]] std::string summary() const;
};

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Encoder predictions for a whole split, batched.
struct SplitEncoding {
    torch::Tensor z;         // [N, latent]
    std::vector<Pose> poses; // learned frame
};
SplitEncoding encode_split(Encoder& encoder, const Dataset& dataset, const DatasetSplit& split);

/// Fits the frame on the train and val splits of a dataset with ground-truth poses.
PoseFrameMap fit_frame_on_dataset(Encoder& encoder, const Dataset& dataset);

/// Novel-view synthesis over ordered (source, target) pairs within each object group; max_pairs
/// caps pairs per group (0 = all). Throws DataError without ground-truth poses.
EvalReport eval_nvs(const Networks& nets, const Dataset& dataset, const DatasetSplit& split,
                    const PoseFrameMap& frame, int64_t max_pairs = 0);

/// Pose estimation on a split; throws DataError without ground-truth poses.
PoseMetrics eval_pose(const Networks& nets, const Dataset& dataset, const DatasetSplit& split,
                      const PoseFrameMap& frame);

/// Plain reconstruction D(E(I)) of every image of a split.
EvalReport eval_recon(const Networks& nets, const Dataset& dataset, const DatasetSplit& split);

struct RenderGrid {
    ByteImage raster;
    torch::Tensor renders; // grid body without headers
};

/// (identities + 1) x (poses + 1) tiles: header row holds the pose images, header column the
/// identity images, cell (i, j) renders identity i's latent code at pose image j's pose.
RenderGrid pose_swap_grid(const Networks& nets, const std::vector<Image>& identities, const std::vector<Image>& poses);

/// Input image followed by n_views renders of its latent code, azimuth swept from the range's
/// minimum to its maximum inclusive; elevation and scale stay at the encoded values.
struct Strip {
    ByteImage raster;
    torch::Tensor renders; // [n_views, 3, H, W]
    std::vector<Pose> poses;
};
Strip theta_interpolation_strip(const Networks& nets, const Image& img, int64_t n_views);

} // namespace nvs
