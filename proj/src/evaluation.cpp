#include "novelview/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "novelview/errors.hpp"
#include "novelview/losses.hpp"

namespace nvs {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int64_t kBatch = 64;

double wrap180(double d) { return d - 360.0 * std::round(d / 360.0); }

double median(std::vector<double> v) {
    if (v.empty()) {
        return 0.0;
    }
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) {
        return hi;
    }
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

torch::Tensor as_255(const Image& img) { return (img.pixels.detach().to(torch::kFloat64) + 1.0) * 127.5; }

void check_same(const Image& a, const Image& b) {
    if (a.pixels.sizes() != b.pixels.sizes()) {
        throw ShapeError("metric: image shapes differ");
    }
}

EvalRow compare(const torch::Tensor& prediction, const torch::Tensor& target, std::string source, std::string tgt) {
    const Image p{prediction, {}};
    const Image t{target, {}};
    return {std::move(source), std::move(tgt), metric_l1_255(p, t), metric_ssim(p, t), metric_psnr(p, t)};
}

torch::Tensor poses_tensor(const std::vector<Pose>& poses) {
    std::vector<torch::Tensor> rows;
    rows.reserve(poses.size());
    for (const auto& p : poses) {
        rows.push_back(pose_to_tensor(p));
    }
    return torch::stack(rows);
}

bool degenerate(double lo, double hi) { return hi - lo <= 0.0; }

} // namespace

double metric_l1_255(const Image& a, const Image& b) {
    check_same(a, b);
    return (as_255(a) - as_255(b)).abs().mean().item<double>();
}

double metric_ssim(const Image& a, const Image& b) {
    check_same(a, b);
    return ssim_per_image(a.pixels.detach().unsqueeze(0), b.pixels.detach().unsqueeze(0)).mean().item<double>();
}

double metric_psnr(const Image& a, const Image& b) {
    check_same(a, b);
    const double mse = (as_255(a) - as_255(b)).pow(2).mean().item<double>();
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double angle_error_deg(double a_deg, double b_deg) {
    const double c = std::clamp(std::cos((a_deg - b_deg) * kDeg), -1.0, 1.0);
    return std::acos(c) / kDeg;
}

AffineFit fit_affine(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw ShapeError("fit_affine: x and y lengths differ");
    }
    const auto n = static_cast<double>(x.size());
    if (x.size() < 2) {
        throw DataError("fit_affine: need at least two samples");
    }
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 1e-12 * std::max(1.0, mx * mx) * n) {
        throw DataError("fit_affine: rank-deficient data (fewer than two distinct x values)");
    }
    AffineFit f;
    f.slope = sxy / sxx;
    f.offset = my - f.slope * mx;
    double ss_res = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - f.apply(x[i]);
        ss_res += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    const double sigma2 = x.size() > 2 ? ss_res / (n - 2.0) : 0.0;
    f.slope_se = std::sqrt(sigma2 / sxx);
    f.offset_se = std::sqrt(sigma2 * (1.0 / n + mx * mx / sxx));
    return f;
}

double rho_from_scale(double scale, const PoseRange& range) { return range.scale_min * range.scale_max / scale; }

PoseFrameMap PoseFrameMap::identity(const PoseRange& range) {
    PoseFrameMap m;
    m.range = range;
    m.rho.offset = 0.0;
    m.rho.slope = range.scale_min * range.scale_max;
    return m;
}

Pose PoseFrameMap::to_learned(const Pose& gt) const {
    Pose p = gt;
    if (fit_azimuth) {
        p.azimuth_deg = azimuth.apply(gt.azimuth_deg);
    }
    if (range.full_circle()) {
        p.azimuth_deg = range.azimuth_min + wrap_degrees(p.azimuth_deg - range.azimuth_min);
    } else {
        p.azimuth_deg = std::clamp(p.azimuth_deg, range.azimuth_min, range.azimuth_max);
    }
    if (fit_elevation) {
        p.elevation_deg = elevation.apply(gt.elevation_deg);
    }
    p.elevation_deg = std::clamp(p.elevation_deg, range.elevation_min, range.elevation_max);
    const double denom = rho_from_scale(gt.scale, range) - rho.offset;
    if (fit_rho && std::abs(denom) > 1e-12) {
        p.scale = rho.slope / denom;
    }
    p.scale = std::clamp(p.scale, range.scale_min, range.scale_max);
    return p;
}

std::array<double, 3> PoseFrameMap::to_ground_truth(const Pose& learned) const {
    const double az = fit_azimuth ? azimuth.invert(learned.azimuth_deg) : learned.azimuth_deg;
    const double el = fit_elevation ? elevation.invert(learned.elevation_deg) : learned.elevation_deg;
    return {wrap_degrees(az), el, rho.offset + rho.slope / learned.scale};
}

PoseFrameMap fit_pose_frame(const std::vector<Pose>& gt, const std::vector<Pose>& pred, const PoseRange& range) {
    if (gt.size() != pred.size() || gt.empty()) {
        throw DataError("fit_pose_frame: need equally many non-zero ground-truth and predicted poses");
    }
    const auto n = gt.size();
    auto m = PoseFrameMap::identity(range);

    if (!degenerate(range.azimuth_min, range.azimuth_max)) {
        // Try both rotation directions; the offset is the circular mean of the differences and the
        // residuals around it are unwrapped before the affine least-squares fit.
        double best = std::numeric_limits<double>::infinity();
        for (double sign : {1.0, -1.0}) {
            double sx = 0.0, cx = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const double d = (pred[i].azimuth_deg - sign * gt[i].azimuth_deg) * kDeg;
                sx += std::sin(d);
                cx += std::cos(d);
            }
            const double offset = std::atan2(sx, cx) / kDeg;
            std::vector<double> x(n), y(n);
            for (size_t i = 0; i < n; ++i) {
                const double r = wrap180(pred[i].azimuth_deg - sign * gt[i].azimuth_deg - offset);
                x[i] = gt[i].azimuth_deg;
                y[i] = sign * gt[i].azimuth_deg + offset + r;
            }
            const auto fit = fit_affine(x, y);
            double ss = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const double r = wrap180(pred[i].azimuth_deg - fit.apply(x[i]));
                ss += r * r;
            }
            if (ss < best) {
                best = ss;
                m.azimuth = fit;
            }
        }
        m.fit_azimuth = true;
    }
    if (!degenerate(range.elevation_min, range.elevation_max)) {
        std::vector<double> x(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            x[i] = gt[i].elevation_deg;
            y[i] = pred[i].elevation_deg;
        }
        m.elevation = fit_affine(x, y);
        m.fit_elevation = true;
    }
    if (!degenerate(range.scale_min, range.scale_max)) {
        std::vector<double> x(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            x[i] = 1.0 / pred[i].scale;
            y[i] = rho_from_scale(gt[i].scale, range);
        }
        m.rho = fit_affine(x, y);
        m.fit_rho = true;
    }
    m.residuals.resize(n);
    for (size_t i = 0; i < n; ++i) {
        m.residuals[i] = {
            wrap180(pred[i].azimuth_deg - (m.fit_azimuth ? m.azimuth.apply(gt[i].azimuth_deg) : gt[i].azimuth_deg)),
            pred[i].elevation_deg - (m.fit_elevation ? m.elevation.apply(gt[i].elevation_deg) : gt[i].elevation_deg),
            rho_from_scale(gt[i].scale, range) - (m.rho.offset + m.rho.slope / pred[i].scale),
        };
    }
    return m;
}

PoseMetrics pose_metrics(const std::vector<Pose>& predicted, const std::vector<Pose>& gt, const PoseFrameMap& frame) {
    if (predicted.size() != gt.size()) {
        throw ShapeError("pose_metrics: prediction and ground-truth counts differ");
    }
    std::vector<double> angles, rhos;
    int64_t hits = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        const auto mapped = frame.to_ground_truth(predicted[i]);
        const double err = angle_error_deg(mapped[0], gt[i].azimuth_deg);
        angles.push_back(err);
        hits += err < 30.0 ? 1 : 0;
        rhos.push_back(std::abs(mapped[2] - rho_from_scale(gt[i].scale, frame.range)));
    }
    PoseMetrics m;
    m.count = static_cast<int64_t>(gt.size());
    m.angle_median_deg = median(angles);
    m.rho_l1_median = median(rhos);
    m.angle_acc_30 = gt.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gt.size());
    return m;
}

void EvalReport::summarize() {
    l1_255 = ssim = psnr = 0.0;
    if (rows.empty()) {
        return;
    }
    for (const auto& r : rows) {
        l1_255 += r.l1_255;
        ssim += r.ssim;
        psnr += r.psnr;
    }
    const auto n = static_cast<double>(rows.size());
    l1_255 /= n;
    ssim /= n;
    psnr /= n;
}

std::string EvalReport::summary() const {
    std::string s;
    if (!rows.empty()) {
        s = fmt::format("rows {}  L1(0-255) {:.3f}  SSIM {:.4f}  PSNR {:.2f} dB", rows.size(), l1_255, ssim, psnr);
    }
    if (pose.count > 0) {
        s += fmt::format("{}pose: median angle {:.2f} deg  acc@30 {:.3f}  median rho L1 {:.4f}  (n={})",
                         s.empty() ? "" : "\n", pose.angle_median_deg, pose.angle_acc_30, pose.rho_l1_median, pose.count);
    }
    if (timing_mean_s > 0.0) {
        s += fmt::format("\ntime per image {:.3f}s +- {:.3f}", timing_mean_s, timing_std_s);
    }
    return s;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", path.string()));
    }
    out << "source,target,l1_255,ssim,psnr\n";
    for (const auto& r : report.rows) {
        out << fmt::format("{},{},{:.6f},{:.6f},{:.4f}\n", r.source, r.target, r.l1_255, r.ssim, r.psnr);
    }
}

SplitEncoding encode_split(Encoder& encoder, const Dataset& dataset, const DatasetSplit& split) {
    torch::NoGradGuard no_grad;
    SplitEncoding out;
    std::vector<torch::Tensor> zs;
    const auto idx = torch::tensor(split.indices, torch::kLong);
    for (int64_t start = 0; start < split.size(); start += kBatch) {
        const auto stop = std::min(split.size(), start + kBatch);
        auto enc = encoder.forward(dataset.images.index_select(0, idx.slice(0, start, stop)));
        zs.push_back(enc.z);
        for (int64_t i = 0; i < enc.pose.size(0); ++i) {
            out.poses.push_back(pose_from_tensor(enc.pose[i]));
        }
    }
    out.z = zs.empty() ? torch::empty({0}) : torch::cat(zs);
    return out;
}

PoseFrameMap fit_frame_on_dataset(Encoder& encoder, const Dataset& dataset) {
    std::vector<Pose> gt, pred;
    for (const char* name : {"train", "val"}) {
        auto split = select_split(dataset, name);
        if (split.size() == 0) {
            continue;
        }
        if (!split.has_ground_truth()) {
            throw DataError(fmt::format("split '{}' has no ground-truth poses to fit the frame on", name));
        }
        auto enc = encode_split(encoder, dataset, split);
        for (int64_t i = 0; i < split.size(); ++i) {
            gt.push_back(*split.poses[static_cast<size_t>(i)]);
            pred.push_back(enc.poses[static_cast<size_t>(i)]);
        }
    }
    return fit_pose_frame(gt, pred, encoder.range());
}

EvalReport eval_nvs(const Networks& nets, const Dataset& dataset, const DatasetSplit& split,
                    const PoseFrameMap& frame, int64_t max_pairs) {
    if (!split.has_ground_truth() || split.groups.empty()) {
        throw DataError(fmt::format("split '{}' lacks ground-truth poses or object groups", split.name));
    }
    torch::NoGradGuard no_grad;
    auto enc = encode_split(*nets.encoder, dataset, split);
    std::vector<std::pair<int64_t, int64_t>> pairs;
    for (const auto& [group, members] : split.groups) {
        int64_t taken = 0;
        for (auto s : members) {
            for (auto t : members) {
                if (s == t || (max_pairs > 0 && taken >= max_pairs)) {
                    continue;
                }
                pairs.emplace_back(s, t);
                ++taken;
            }
        }
    }
    EvalReport report;
    for (size_t start = 0; start < pairs.size(); start += kBatch) {
        const auto stop = std::min(pairs.size(), start + static_cast<size_t>(kBatch));
        std::vector<int64_t> src;
        std::vector<Pose> poses;
        for (size_t k = start; k < stop; ++k) {
            src.push_back(pairs[k].first);
            poses.push_back(frame.to_learned(*split.poses[static_cast<size_t>(pairs[k].second)]));
        }
        auto z = enc.z.index_select(0, torch::tensor(src, torch::kLong));
        auto renders = nets.decoder->generate(z, poses_tensor(poses));
        for (size_t k = start; k < stop; ++k) {
            const auto si = split.indices[static_cast<size_t>(pairs[k].first)];
            const auto ti = split.indices[static_cast<size_t>(pairs[k].second)];
            report.rows.push_back(compare(renders[static_cast<int64_t>(k - start)], dataset.images[ti],
                                          dataset.samples[static_cast<size_t>(si)].id,
                                          dataset.samples[static_cast<size_t>(ti)].id));
        }
    }
    report.summarize();
    return report;
}

PoseMetrics eval_pose(const Networks& nets, const Dataset& dataset, const DatasetSplit& split,
                      const PoseFrameMap& frame) {
    if (!split.has_ground_truth()) {
        throw DataError(fmt::format("split '{}' has no ground-truth poses", split.name));
    }
    auto enc = encode_split(*nets.encoder, dataset, split);
    std::vector<Pose> gt;
    for (const auto& p : split.poses) {
        gt.push_back(*p);
    }
    return pose_metrics(enc.poses, gt, frame);
}

EvalReport eval_recon(const Networks& nets, const Dataset& dataset, const DatasetSplit& split) {
    torch::NoGradGuard no_grad;
    auto enc = encode_split(*nets.encoder, dataset, split);
    EvalReport report;
    for (int64_t start = 0; start < split.size(); start += kBatch) {
        const auto stop = std::min(split.size(), start + kBatch);
        std::vector<Pose> poses(enc.poses.begin() + start, enc.poses.begin() + stop);
        auto renders = nets.decoder->generate(enc.z.slice(0, start, stop), poses_tensor(poses));
        for (int64_t k = start; k < stop; ++k) {
            const auto idx = split.indices[static_cast<size_t>(k)];
            const auto& id = dataset.samples[static_cast<size_t>(idx)].id;
            report.rows.push_back(compare(renders[k - start], dataset.images[idx], id, id));
        }
    }
    report.summarize();
    return report;
}

RenderGrid pose_swap_grid(const Networks& nets, const std::vector<Image>& identities, const std::vector<Image>& poses) {
    torch::NoGradGuard no_grad;
    auto stack = [](const std::vector<Image>& imgs) {
        std::vector<torch::Tensor> t;
        for (const auto& i : imgs) {
            t.push_back(i.pixels);
        }
        return torch::stack(t);
    };
    if (identities.empty() || poses.empty()) {
        throw DataError("pose swap grid needs at least one identity and one pose image");
    }
    auto ids = nets.encoder->forward(stack(identities));
    auto ps = nets.encoder->forward(stack(poses));
    const auto n_id = static_cast<int64_t>(identities.size());
    const auto n_pose = static_cast<int64_t>(poses.size());
    auto z = ids.z.repeat_interleave(n_pose, 0);
    auto pose = ps.pose.repeat({n_id, 1});
    auto renders = nets.decoder->generate(z, pose);
    renders = renders.view({n_id, n_pose, 3, renders.size(2), renders.size(3)});
    std::vector<std::vector<ByteImage>> rows(static_cast<size_t>(n_id + 1));
    rows[0].emplace_back();
    for (const auto& p : poses) {
        rows[0].push_back(to_bytes(p.pixels));
    }
    for (int64_t i = 0; i < n_id; ++i) {
        auto& row = rows[static_cast<size_t>(i + 1)];
        row.push_back(to_bytes(identities[static_cast<size_t>(i)].pixels));
        for (int64_t j = 0; j < n_pose; ++j) {
            row.push_back(to_bytes(renders[i][j]));
        }
    }
    return {tile(rows), renders};
}

Strip theta_interpolation_strip(const Networks& nets, const Image& img, int64_t n_views) {
    if (n_views < 1) {
        throw ConfigError("strip needs at least one view");
    }
    torch::NoGradGuard no_grad;
    const auto& range = nets.encoder->range();
    auto enc = nets.encoder->forward(img.pixels.unsqueeze(0));
    const auto base = pose_from_tensor(enc.pose[0]);
    Strip strip;
    for (int64_t k = 0; k < n_views; ++k) {
        const double t = n_views == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n_views - 1);
        strip.poses.push_back(
            {range.azimuth_min + t * (range.azimuth_max - range.azimuth_min), base.elevation_deg, base.scale});
    }
    strip.renders = nets.decoder->generate(enc.z.expand({n_views, -1}), poses_tensor(strip.poses));
    std::vector<std::vector<ByteImage>> rows(1);
    rows[0].push_back(to_bytes(img.pixels));
    for (int64_t k = 0; k < n_views; ++k) {
        rows[0].push_back(to_bytes(strip.renders[k]));
    }
    strip.raster = tile(rows);
    return strip;
}

} // namespace nvs
