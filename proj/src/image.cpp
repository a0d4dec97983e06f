#include "novelview/image.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "novelview/errors.hpp"

namespace nvs {

Image to_image(const ByteImage& bytes, std::string id) {
    auto t = torch::empty({3, bytes.height, bytes.width}, torch::kFloat32);
    auto a = t.accessor<float, 3>();
    for (int y = 0; y < bytes.height; ++y) {
        for (int x = 0; x < bytes.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                a[c][y][x] = byte_to_unit(bytes.at(y, x, c));
            }
        }
    }
    return Image{t, std::move(id)};
}

ByteImage to_bytes(const torch::Tensor& pixels) {
    auto t = pixels.detach().to(torch::kFloat64).contiguous();
    if (t.dim() == 4 && t.size(0) == 1) {
        t = t[0];
    }
    if (t.dim() != 3 || t.size(0) != 3) {
        throw ShapeError("to_bytes expects a [3,H,W] tensor");
    }
    ByteImage out(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    auto a = t.accessor<double, 3>();
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = unit_to_byte(a[c][y][x]);
            }
        }
    }
    return out;
}

torch::Tensor stack_bytes(const std::vector<ByteImage>& images) {
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& im : images) {
        ts.push_back(to_image(im).pixels);
    }
    return torch::stack(ts);
}

ByteImage read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw DataError(fmt::format("cannot read image '{}'", path.string()));
    }
    ByteImage out(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            out.at(y, x, 0) = row[x][2];
            out.at(y, x, 1) = row[x][1];
            out.at(y, x, 2) = row[x][0];
        }
    }
    return out;
}

void write_image(const std::filesystem::path& path, const ByteImage& img) {
    cv::Mat bgr(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            row[x] = cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
        }
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), bgr)) {
        throw DataError(fmt::format("cannot write image '{}'", path.string()));
    }
}

ByteImage crop(const ByteImage& img, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width || y0 + h > img.height) {
        throw DataError(fmt::format("crop {}x{}+{}+{} outside {}x{} image", w, h, x0, y0, img.width, img.height));
    }
    ByteImage out(h, w);
    for (int y = 0; y < h; ++y) {
        std::copy_n(&img.rgb[(static_cast<size_t>(y0 + y) * img.width + x0) * 3], static_cast<size_t>(w) * 3,
                    &out.rgb[static_cast<size_t>(y) * w * 3]);
    }
    return out;
}

ByteImage resize_bilinear(const ByteImage& img, int out_h, int out_w) {
    if (img.empty() || out_h <= 0 || out_w <= 0) {
        throw DataError("resize of an empty image");
    }
    if (out_h == img.height && out_w == img.width) {
        return img;
    }
    ByteImage out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
                const double bottom = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
                const double v = top * (1.0 - wy) + bottom * wy;
                out.at(y, x, c) = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

ByteImage tile(const std::vector<std::vector<ByteImage>>& rows) {
    int th = 0, tw = 0;
    size_t cols = 0;
    for (const auto& row : rows) {
        cols = std::max(cols, row.size());
        for (const auto& im : row) {
            if (!im.empty()) {
                th = im.height;
                tw = im.width;
            }
        }
    }
    ByteImage out(static_cast<int>(rows.size()) * th, static_cast<int>(cols) * tw);
    for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < rows[r].size(); ++c) {
            const auto& im = rows[r][c];
            if (im.empty()) {
                continue;
            }
            if (im.height != th || im.width != tw) {
                throw ShapeError("tile: images differ in size");
            }
            for (int y = 0; y < th; ++y) {
                std::copy_n(&im.rgb[static_cast<size_t>(y) * tw * 3], static_cast<size_t>(tw) * 3,
                            &out.rgb[((r * th + y) * out.width + c * tw) * 3]);
            }
        }
    }
    return out;
}

} // namespace nvs
