#include "novelview/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "novelview/errors.hpp"

namespace nvs {

namespace fs = std::filesystem;

CropSquare center_square(int width, int height) {
    if (width <= 0 || height <= 0) {
        throw DataError(fmt::format("degenerate raw image {}x{}", width, height));
    }
    const int side = std::min(width, height);
    return CropSquare{(width - side) / 2, (height - side) / 2, side};
}

CropSquare cars_crop_square(int width, int height, const BBox& box) {
    if (!(box.w > 0.0) || !(box.h > 0.0)) {
        throw DataError("empty bounding box");
    }
    if (width <= 0 || height <= 0) {
        throw DataError("degenerate raw image");
    }
    int side = static_cast<int>(std::lround(std::max(box.w, box.h)));
    side = std::clamp(side, 1, std::min(width, height));
    const double cx = box.x + 0.5 * box.w;
    const double cy = box.y + 0.5 * box.h;
    const int x0 = static_cast<int>(std::lround(cx - 0.5 * side));
    const int y0 = static_cast<int>(std::lround(cy - 0.5 * side));
    return CropSquare{std::clamp(x0, 0, width - side), std::clamp(y0, 0, height - side), side};
}

Image preprocess_celeba(const ByteImage& raw, int resolution) {
    const auto sq = center_square(raw.width, raw.height);
    return to_image(resize_bilinear(crop(raw, sq.x0, sq.y0, sq.side, sq.side), resolution, resolution));
}

Image preprocess_cars(const ByteImage& raw, const BBox& box, int resolution) {
    const auto sq = cars_crop_square(raw.width, raw.height, box);
    return to_image(resize_bilinear(crop(raw, sq.x0, sq.y0, sq.side, sq.side), resolution, resolution));
}

const std::vector<CorpusInfo>& corpus_table() {
    static const std::vector<CorpusInfo> table{
        {"celeba", 162770, 19867, 19962, 128},
        {"real_cars", 95410, 13633, 27267, 128},
        {"shapenet_cars", 125928, 18000, 35976, 128},
        {"shapenet_sofa", 53304, 7608, 15239, 128},
    };
    return table;
}

// ---------------------------------------------------------------------------------------------

// Every face keeps a category-wide base color and the box is always longest along x, so objects
// share a front and a long axis the way aligned cars do; otherwise absolute azimuth would be
// unidentifiable across objects. Offsets stay small enough that a face is always closer to
// its own base than to any other.
const std::array<std::array<double, 3>, 6>& CuboidIdentity::base_colors() {
    static const std::array<std::array<double, 3>, 6> colors{{
        {0.90, 0.15, 0.15}, // +x red
        {0.15, 0.90, 0.90}, // -x cyan
        {0.90, 0.90, 0.15}, // +y yellow (top)
        {0.15, 0.15, 0.90}, // -y blue
        {0.15, 0.90, 0.15}, // +z green
        {0.90, 0.15, 0.90}, // -z magenta
    }};
    return colors;
}

CuboidIdentity CuboidIdentity::sample(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> length(0.36, 0.46), height(0.20, 0.32), width(0.24, 0.34);
    std::uniform_real_distribution<double> tint(-kTint, kTint), jitter(-kFaceJitter, kFaceJitter);
    CuboidIdentity id;
    id.half_extents = {length(rng), height(rng), width(rng)};
    const std::array<double, 3> shared{tint(rng), tint(rng), tint(rng)};
    for (size_t f = 0; f < 6; ++f) {
        for (size_t c = 0; c < 3; ++c) {
            id.face_colors[f][c] = base_colors()[f][c] + shared[c] + jitter(rng);
        }
    }
    return id;
}

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

constexpr double kFrameHalfWidth = 1.25; // world units covered by half the image
constexpr int kSuperSample = 2;

Mat3 object_to_world_rotation(const Pose& pose) {
    const double a = pose.azimuth_deg * std::numbers::pi / 180.0;
    const double e = (pose.elevation_deg - 90.0) * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a), ce = std::cos(e), se = std::sin(e);
    const Mat3 r_az{{{ca, 0, sa}, {0, 1, 0}, {-sa, 0, ca}}};
    const Mat3 r_el{{{1, 0, 0}, {0, ce, -se}, {0, se, ce}}};
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += r_el[i][k] * r_az[k][j];
    return r;
}

// R^T v
Vec3 to_object(const Mat3& r, const Vec3& v) {
    return {r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2], r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2]};
}

struct Hit {
    bool hit = false;
    int face = 0;   // 0..5: +x, -x, +y, -y, +z, -z
    Vec3 point{};   // object space
};

// Ray (origin o, direction d) against the box |p_i| <= h_i, slab method.
Hit intersect_box(const Vec3& o, const Vec3& d, const Vec3& h) {
    double t_near = -1e300, t_far = 1e300;
    int near_axis = -1;
    bool near_positive = false;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-15) {
            if (std::abs(o[i]) > h[i]) {
                return {};
            }
            continue;
        }
        double t0 = (-h[i] - o[i]) / d[i];
        double t1 = (h[i] - o[i]) / d[i];
        bool enters_positive = false; // entering through the +h face
        if (t0 > t1) {
            std::swap(t0, t1);
            enters_positive = true;
        }
        if (t0 > t_near) {
            t_near = t0;
            near_axis = i;
            near_positive = enters_positive;
        }
        t_far = std::min(t_far, t1);
    }
    if (near_axis < 0 || t_near > t_far) {
        return {};
    }
    Hit hit;
    hit.hit = true;
    hit.face = near_axis * 2 + (near_positive ? 0 : 1);
    for (int i = 0; i < 3; ++i) {
        hit.point[i] = o[i] + t_near * d[i];
    }
    return hit;
}

} // namespace

Rasterization rasterize_cuboid(const CuboidIdentity& identity, const Pose& pose, int resolution) {
    const Mat3 rot = object_to_world_rotation(pose);
    const Vec3 dir_obj = to_object(rot, Vec3{0.0, 0.0, -1.0});
    const Vec3 light = [] {
        Vec3 l{0.35, 0.55, 1.0};
        const double n = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
        return Vec3{l[0] / n, l[1] / n, l[2] / n};
    }();
    const auto& h = identity.half_extents;

    Rasterization out{ByteImage(resolution, resolution), std::vector<double>(static_cast<size_t>(resolution) * resolution)};
    const double pixel = 2.0 * kFrameHalfWidth / resolution;
    const double sub = pixel / kSuperSample;
    for (int v = 0; v < resolution; ++v) {
        for (int u = 0; u < resolution; ++u) {
            Vec3 color{0, 0, 0};
            int hits = 0;
            for (int sv = 0; sv < kSuperSample; ++sv) {
                for (int su = 0; su < kSuperSample; ++su) {
                    const double x = -kFrameHalfWidth + u * pixel + (su + 0.5) * sub;
                    const double y = kFrameHalfWidth - v * pixel - (sv + 0.5) * sub;
                    // The camera sits at +z looking down -z; undo magnification then rotation.
                    const Vec3 origin = to_object(rot, Vec3{x / pose.scale, y / pose.scale, 10.0});
                    const Hit hit = intersect_box(origin, dir_obj, h);
                    if (!hit.hit) {
                        continue;
                    }
                    ++hits;
                    const int axis = hit.face / 2;
                    Vec3 normal_obj{0, 0, 0};
                    normal_obj[axis] = (hit.face % 2 == 0) ? 1.0 : -1.0;
                    // world normal = R n
                    double lambert = 0.0;
                    for (int i = 0; i < 3; ++i) {
                        double ni = 0.0;
                        for (int k = 0; k < 3; ++k) ni += rot[i][k] * normal_obj[k];
                        lambert += ni * light[i];
                    }
                    const double shade = 0.55 + 0.45 * std::abs(lambert);
                    // 3x3 checker texture over the face.
                    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
                    const int c1 = static_cast<int>(std::floor((hit.point[a1] + h[a1]) / (2.0 * h[a1]) * 3.0));
                    const int c2 = static_cast<int>(std::floor((hit.point[a2] + h[a2]) / (2.0 * h[a2]) * 3.0));
                    const double texture = ((c1 + c2) % 2 == 0) ? 1.0 : 0.72;
                    for (int c = 0; c < 3; ++c) {
                        color[c] += identity.face_colors[hit.face][c] * shade * texture;
                    }
                }
            }
            const double n = kSuperSample * kSuperSample;
            out.coverage[static_cast<size_t>(v) * resolution + u] = hits / n;
            for (int c = 0; c < 3; ++c) {
                out.image.at(v, u, c) = static_cast<uint8_t>(std::lround(std::clamp(color[c] / n, 0.0, 1.0) * 255.0));
            }
        }
    }
    return out;
}

Image synth_render(const CuboidIdentity& identity, const Pose& pose, int resolution) {
    return to_image(rasterize_cuboid(identity, pose, resolution).image);
}

// ---------------------------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

double parse_double(const std::string& s, const std::string& what) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw DataError(fmt::format("manifest: bad number '{}' in {}", s, what));
    }
}

constexpr const char* kManifestHeader = "id,path,split,bbox_x,bbox_y,bbox_w,bbox_h,azimuth,elevation,scale,group";

} // namespace

std::vector<Sample> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot open manifest '{}'", path.string()));
    }
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
        throw DataError(fmt::format("manifest '{}': missing or unexpected header", path.string()));
    }
    std::vector<Sample> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        auto f = split_fields(line);
        if (f.size() != 11) {
            throw DataError(fmt::format("manifest line {}: expected 11 fields, got {}", lineno, f.size()));
        }
        Sample s;
        s.id = f[0];
        s.path = f[1];
        s.split = f[2];
        const auto where = fmt::format("line {}", lineno);
        const bool any_box = !f[3].empty() || !f[4].empty() || !f[5].empty() || !f[6].empty();
        if (any_box) {
            s.bbox = BBox{parse_double(f[3], where), parse_double(f[4], where), parse_double(f[5], where),
                          parse_double(f[6], where)};
        }
        const bool any_pose = !f[7].empty() || !f[8].empty() || !f[9].empty();
        if (any_pose) {
            s.pose = Pose{parse_double(f[7], where), parse_double(f[8], where), parse_double(f[9], where)};
        }
        if (!f[10].empty()) {
            s.group = f[10];
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<Sample>& samples) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write manifest '{}'", path.string()));
    }
    out << kManifestHeader << '\n';
    for (const auto& s : samples) {
        for (const auto* field : {&s.id, &s.path, &s.split}) {
            if (field->find(',') != std::string::npos || field->find('\n') != std::string::npos) {
                throw DataError(fmt::format("manifest field '{}' contains a delimiter", *field));
            }
        }
        out << s.id << ',' << s.path << ',' << s.split << ',';
        if (s.bbox) {
            out << fmt_double(s.bbox->x) << ',' << fmt_double(s.bbox->y) << ',' << fmt_double(s.bbox->w) << ','
                << fmt_double(s.bbox->h) << ',';
        } else {
            out << ",,,,";
        }
        if (s.pose) {
            out << fmt_double(s.pose->azimuth_deg) << ',' << fmt_double(s.pose->elevation_deg) << ','
                << fmt_double(s.pose->scale) << ',';
        } else {
            out << ",,,";
        }
        out << s.group.value_or("") << '\n';
    }
}

bool DatasetSplit::has_ground_truth() const {
    return !poses.empty() && std::all_of(poses.begin(), poses.end(), [](const auto& p) { return p.has_value(); });
}

DatasetSplit select_split(const Dataset& dataset, const std::string& name) {
    DatasetSplit split;
    split.name = name;
    for (int64_t i = 0; i < dataset.size(); ++i) {
        const auto& s = dataset.samples[static_cast<size_t>(i)];
        if (s.split != name) {
            continue;
        }
        const auto pos = static_cast<int64_t>(split.indices.size());
        split.indices.push_back(i);
        split.poses.push_back(s.pose);
        if (s.group) {
            split.groups[*s.group].push_back(pos);
        }
    }
    return split;
}

Dataset load_dataset(const fs::path& manifest, int resolution, const PoseRange& range, Preprocess mode) {
    Dataset ds;
    ds.range = range;
    ds.samples = read_manifest(manifest);
    if (ds.samples.empty()) {
        throw DataError(fmt::format("manifest '{}' lists no samples", manifest.string()));
    }
    const auto root = manifest.parent_path();
    std::vector<torch::Tensor> images;
    images.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        const auto raw = read_image(root / s.path);
        Image img;
        switch (mode) {
        case Preprocess::kCeleba:
            img = preprocess_celeba(raw, resolution);
            break;
        case Preprocess::kCars:
            if (!s.bbox) {
                throw DataError(fmt::format("sample '{}' needs a bbox for car preprocessing", s.id));
            }
            img = preprocess_cars(raw, *s.bbox, resolution);
            break;
        case Preprocess::kNone:
            img = to_image(raw.height == resolution && raw.width == resolution
                               ? raw
                               : resize_bilinear(raw, resolution, resolution));
            break;
        }
        images.push_back(img.pixels);
    }
    ds.images = torch::stack(images);
    return ds;
}

Dataset make_synthetic_split(int n_objects, int views_per_object, const PoseRange& range, uint64_t seed,
                             int resolution) {
    if (n_objects <= 0 || views_per_object <= 0) {
        throw ConfigError("synthetic split needs positive object and view counts");
    }
    range.validate();
    std::mt19937_64 rng(seed);
    std::vector<int> order(static_cast<size_t>(n_objects));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> split_of(static_cast<size_t>(n_objects));
    const int n_train = static_cast<int>(std::lround(0.7 * n_objects));
    const int n_val = static_cast<int>(std::lround(0.1 * n_objects));
    for (int k = 0; k < n_objects; ++k) {
        split_of[static_cast<size_t>(order[static_cast<size_t>(k)])] =
            k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
    }

    Dataset ds;
    ds.range = range;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<torch::Tensor> images;
    for (int obj = 0; obj < n_objects; ++obj) {
        const auto identity = CuboidIdentity::sample(rng);
        const auto group = fmt::format("obj{:05d}", obj);
        for (int v = 0; v < views_per_object; ++v) {
            const double ua = unit(rng), ue = unit(rng), us = unit(rng);
            const Pose pose = remap_unit_to_pose({ua, ue, us}, range);
            Sample s;
            s.id = fmt::format("{}_v{:03d}", group, v);
            s.path = fmt::format("images/{}.png", s.id);
            s.split = split_of[static_cast<size_t>(obj)];
            s.pose = pose;
            s.group = group;
            images.push_back(synth_render(identity, pose, resolution).pixels);
            ds.samples.push_back(std::move(s));
        }
    }
    ds.images = torch::stack(images);
    return ds;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
    fs::create_directories(dir);
    for (int64_t i = 0; i < dataset.size(); ++i) {
        write_image(dir / dataset.samples[static_cast<size_t>(i)].path, to_bytes(dataset.images[i]));
    }
    write_manifest(dir / "manifest.csv", dataset.samples);
}

// ---------------------------------------------------------------------------------------------

TrainIterator::TrainIterator(torch::Tensor images, int64_t batch_size, uint64_t seed)
    : images_(std::move(images)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ <= 0) {
        throw ConfigError("batch size must be positive");
    }
    if (images_.size(0) < batch_size_) {
        throw DataError(fmt::format("training set of {} images is smaller than one batch of {}", images_.size(0),
                                    batch_size_));
    }
}

TrainIterator::TrainIterator(const Dataset& dataset, const std::string& split, int64_t batch_size, uint64_t seed)
    : TrainIterator(
          [&] {
              std::vector<int64_t> idx;
              for (int64_t i = 0; i < dataset.size(); ++i) {
                  if (dataset.samples[static_cast<size_t>(i)].split == split) {
                      idx.push_back(i);
                  }
              }
              if (idx.empty()) {
                  throw DataError(fmt::format("dataset has no '{}' samples", split));
              }
              return dataset.images.index_select(0, torch::tensor(idx, torch::kLong));
          }(),
          batch_size, seed) {}

int64_t TrainIterator::batches_per_epoch() const { return images_.size(0) / batch_size_; }

torch::Tensor TrainIterator::batch(int64_t epoch, int64_t index) const {
    std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32), static_cast<uint32_t>(epoch),
                      0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<int64_t> perm(static_cast<size_t>(images_.size(0)));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto begin = perm.begin() + index * batch_size_;
    std::vector<int64_t> pick(begin, begin + batch_size_);
    return images_.index_select(0, torch::tensor(pick, torch::kLong));
}

} // namespace nvs
