#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <type_traits>

#include <gtest/gtest.h>

#include "novelview/datasets.hpp"
#include "novelview/errors.hpp"

namespace nvs {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("novelview_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TEST(ByteConversion, RoundTripsEveryByte) {
    for (int b = 0; b < 256; ++b) {
        const auto byte = static_cast<uint8_t>(b);
        EXPECT_EQ(unit_to_byte(byte_to_unit(byte)), byte);
    }
    EXPECT_EQ(byte_to_unit(255), 1.0f);
    EXPECT_EQ(byte_to_unit(0), -1.0f);
    EXPECT_EQ(unit_to_byte(3.0), 255);
    EXPECT_EQ(unit_to_byte(-3.0), 0);
}

TEST(ByteConversion, ImageTensorRoundTrip) {
    ByteImage img(5, 7);
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        img.rgb[i] = static_cast<uint8_t>((i * 37) % 256);
    }
    const auto t = to_image(img);
    EXPECT_EQ(t.pixels.sizes(), (std::vector<int64_t>{3, 5, 7}));
    EXPECT_EQ(to_bytes(t.pixels), img);
}

TEST(Celeba, CropAndResize) {
    ByteImage raw(218, 178, 255);
    const auto img = preprocess_celeba(raw, 128);
    EXPECT_EQ(img.pixels.sizes(), (std::vector<int64_t>{3, 128, 128}));
    EXPECT_TRUE(torch::equal(img.pixels, torch::ones({3, 128, 128})));
    EXPECT_EQ(center_square(178, 218), (CropSquare{0, 20, 178}));
    EXPECT_EQ(center_square(64, 64), (CropSquare{0, 0, 64}));
    EXPECT_THROW(preprocess_celeba(ByteImage{}, 128), DataError);
}

TEST(Cars, CropFollowsLongestBoxSide) {
    // 40x80 box centered at (100,100)
    const auto sq = cars_crop_square(300, 300, BBox{80, 60, 40, 80});
    EXPECT_EQ(sq, (CropSquare{60, 60, 80}));
    EXPECT_THROW(cars_crop_square(300, 300, BBox{10, 10, 0, 5}), DataError);
    const auto img = preprocess_cars(ByteImage(300, 200, 10), BBox{150, 10, 40, 280}, 32);
    EXPECT_EQ(img.pixels.sizes(), (std::vector<int64_t>{3, 32, 32}));
}

TEST(Cars, ClippedCropIsLargestInBoundsSquare) {
    // Brute force over every in-bounds square of a 20x16 toy raster: largest admissible side,
    // then the smallest shift from the ideal placement.
    const int w = 20, h = 16;
    for (int bx = -4; bx < w; bx += 3) {
        for (int by = -4; by < h; by += 3) {
            for (int bw : {1, 5, 9, 17, 25}) {
                for (int bh : {2, 7, 12, 22}) {
                    const BBox box{double(bx), double(by), double(bw), double(bh)};
                    const auto got = cars_crop_square(w, h, box);
                    const int wanted = std::max(bw, bh);
                    CropSquare best{};
                    long best_shift = -1;
                    for (int s = 1; s <= std::min(w, h); ++s) {
                        if (s > wanted) {
                            break;
                        }
                        const long ix = std::lround(bx + bw / 2.0 - s / 2.0);
                        const long iy = std::lround(by + bh / 2.0 - s / 2.0);
                        for (int y0 = 0; y0 + s <= h; ++y0) {
                            for (int x0 = 0; x0 + s <= w; ++x0) {
                                const long shift = std::abs(x0 - ix) + std::abs(y0 - iy);
                                if (s > best.side || (s == best.side && shift < best_shift)) {
                                    best = {x0, y0, s};
                                    best_shift = shift;
                                }
                            }
                        }
                    }
                    EXPECT_EQ(got, best) << bx << "," << by << " " << bw << "x" << bh;
                    EXPECT_LE(got.x0 + got.side, w);
                    EXPECT_LE(got.y0 + got.side, h);
                }
            }
        }
    }
}

TEST(SynthRender, Deterministic) {
    std::mt19937_64 rng(1);
    const auto id = CuboidIdentity::sample(rng);
    const Pose p{37.0, 95.0, 1.2};
    EXPECT_EQ(rasterize_cuboid(id, p, 32).image, rasterize_cuboid(id, p, 32).image);
    EXPECT_TRUE(torch::equal(synth_render(id, p, 32).pixels, synth_render(id, p, 32).pixels));
}

TEST(SynthIdentity, FacesKeepTheirRoleAcrossObjects) {
    std::mt19937_64 rng(4);
    std::vector<CuboidIdentity> ids;
    for (int i = 0; i < 60; ++i) ids.push_back(CuboidIdentity::sample(rng));
    auto dist = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
    };
    for (const auto& a : ids) {
        EXPECT_GT(a.half_extents[0], a.half_extents[2]);
        for (const auto& face : a.face_colors) {
            for (double c : face) {
                EXPECT_GE(c, 0.0);
                EXPECT_LE(c, 1.0);
            }
        }
        for (const auto& b : ids) {
            for (int i = 0; i < 6; ++i) {
                for (int j = 0; j < 6; ++j) {
                    if (i != j) {
                        EXPECT_LT(dist(a.face_colors[i], b.face_colors[i]), dist(a.face_colors[i], b.face_colors[j]));
                    }
                }
            }
        }
    }
}

TEST(SynthRender, HalfTurnMirrorsSilhouette) {
    std::mt19937_64 rng(2);
    const int res = 48;
    for (int trial = 0; trial < 5; ++trial) {
        const auto id = CuboidIdentity::sample(rng);
        const double az = 17.0 + 31.0 * trial;
        const auto a = rasterize_cuboid(id, Pose{az, 90.0, 1.3}, res);
        const auto b = rasterize_cuboid(id, Pose{az + 180.0, 90.0, 1.3}, res);
        // Reflection oracle: a half turn about the vertical axis maps x -> -x under orthographic view.
        int mismatches = 0;
        int covered = 0;
        for (int v = 0; v < res; ++v) {
            for (int u = 0; u < res; ++u) {
                const double ca = a.coverage[size_t(v) * res + u];
                const double cb = b.coverage[size_t(v) * res + (res - 1 - u)];
                covered += ca > 0.0;
                mismatches += std::abs(ca - cb) > 1e-12;
            }
        }
        EXPECT_GT(covered, 50);
        EXPECT_LE(mismatches, 2) << "trial " << trial;
    }
}

TEST(SynthRender, LargerScaleCoversMorePixels) {
    std::mt19937_64 rng(3);
    const auto id = CuboidIdentity::sample(rng);
    const auto range = PoseRange::named("synthetic");
    auto area = [&](double s) {
        const auto r = rasterize_cuboid(id, Pose{40.0, 80.0, s}, 32);
        int n = 0;
        for (double c : r.coverage) n += c > 0.0;
        return n;
    };
    EXPECT_GT(area(range.scale_max), area(range.scale_min));
}

TEST(SyntheticSplit, CountsDeterminismAndDisjointSplits) {
    const auto range = PoseRange::named("synthetic");
    const auto a = make_synthetic_split(100, 20, range, 9, 16);
    EXPECT_EQ(a.size(), 2000);
    EXPECT_EQ(a.images.sizes(), (std::vector<int64_t>{2000, 3, 16, 16}));
    const auto b = make_synthetic_split(100, 20, range, 9, 16);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_TRUE(torch::equal(a.images, b.images));

    std::map<std::string, std::set<std::string>> split_groups;
    for (const auto& s : a.samples) {
        ASSERT_TRUE(s.pose.has_value());
        EXPECT_TRUE(range.contains(*s.pose));
        split_groups[s.split].insert(*s.group);
    }
    EXPECT_EQ(split_groups["train"].size(), 70u);
    EXPECT_EQ(split_groups["val"].size(), 10u);
    EXPECT_EQ(split_groups["test"].size(), 20u);
    for (const auto& g : split_groups["train"]) {
        EXPECT_FALSE(split_groups["test"].count(g));
        EXPECT_FALSE(split_groups["val"].count(g));
    }

    const auto test = select_split(a, "test");
    EXPECT_EQ(test.size(), 400);
    EXPECT_TRUE(test.has_ground_truth());
    EXPECT_EQ(test.groups.size(), 20u);
}

TEST(TrainIteratorTest, YieldsImagesOnlyInSeededOrder) {
    const auto ds = make_synthetic_split(10, 4, PoseRange::named("synthetic"), 4, 16);
    TrainIterator it(ds, "train", 4, 77);
    static_assert(std::is_same_v<decltype(it.batch(0, 0)), torch::Tensor>);
    EXPECT_EQ(it.size(), 28);
    EXPECT_EQ(it.batches_per_epoch(), 7);
    EXPECT_TRUE(torch::equal(it.batch(3, 2), it.batch(3, 2)));
    EXPECT_FALSE(torch::equal(it.batch(0, 0), it.batch(1, 0)));
    EXPECT_EQ(it.batch(0, 0).sizes(), (std::vector<int64_t>{4, 3, 16, 16}));
}

TEST(Manifest, SaveLoadPreservesSamplesAndPixels) {
    const auto dir = scratch_dir("manifest");
    auto ds = make_synthetic_split(3, 2, PoseRange::named("synthetic"), 5, 16);
    ds.samples[0].bbox = BBox{1.5, 2.0, 10.0, 12.25};
    ds.samples[1].group.reset();
    save_dataset(dir, ds);
    const auto samples = read_manifest(dir / "manifest.csv");
    EXPECT_EQ(samples, ds.samples);
    const auto loaded = load_dataset(dir / "manifest.csv", 16, ds.range);
    EXPECT_TRUE(torch::equal(loaded.images, ds.images));
}

TEST(Manifest, MalformedInputIsDataError) {
    const auto dir = scratch_dir("bad_manifest");
    {
        std::ofstream(dir / "m.csv") << "id,path\n";
    }
    EXPECT_THROW(read_manifest(dir / "m.csv"), DataError);
    EXPECT_THROW(read_manifest(dir / "absent.csv"), DataError);
}

TEST(Corpora, TableTwoCounts) {
    const auto& t = corpus_table();
    ASSERT_EQ(t.size(), 4u);
    EXPECT_EQ(t[0].train + t[0].val + t[0].test, 202599); // CelebA total
    EXPECT_EQ(t[1].train + t[1].val + t[1].test, 136310);
    EXPECT_EQ(t[2].train, 125928);
    EXPECT_EQ(t[3].test, 15239);
}

} // namespace
} // namespace nvs
