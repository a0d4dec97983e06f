#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace nvs {

/// 8-bit RGB raster, row-major, interleaved (H x W x 3).
struct ByteImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> rgb;

    ByteImage() = default;
    ByteImage(int h, int w, uint8_t fill = 0) : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, fill) {}

    [[nodiscard]] bool empty() const { return height <= 0 || width <= 0; }
    uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const ByteImage&) const = default;
};

/// Normalized image: `pixels` is a [3,H,W] float32 tensor with values in [-1,1].
struct Image {
    torch::Tensor pixels;
    std::string id;
};

inline float byte_to_unit(uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

inline uint8_t unit_to_byte(double v) {
    double s = (v + 1.0) * 127.5;
    s = s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s);
    return static_cast<uint8_t>(std::lround(s));
}

Image to_image(const ByteImage& bytes, std::string id = {});

/// Accepts [3,H,W] or [1,3,H,W].
ByteImage to_bytes(const torch::Tensor& pixels);

/// Stacks images into a [N,3,H,W] float tensor.
torch::Tensor stack_bytes(const std::vector<ByteImage>& images);

/// Reads any 8-bit raster OpenCV understands; throws DataError if unreadable.
ByteImage read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ByteImage& img);

ByteImage crop(const ByteImage& img, int x0, int y0, int w, int h);

/// Bilinear resize with half-pixel centers and edge clamping; results rounded to bytes.
ByteImage resize_bilinear(const ByteImage& img, int out_h, int out_w);

/// Tiles equally sized images row-major; missing (empty) tiles stay black.
ByteImage tile(const std::vector<std::vector<ByteImage>>& rows);

} // namespace nvs
