#pragma once

#include "chromavib/colorimetry.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace chromavib {

/// Interleaved 8-bit RGB raster, row-major, origin at the top-left.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int width, int height, Srgb8 fill = {});

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    Srgb8 at(int x, int y) const {
        const auto i = index(x, y);
        return {data_[i], data_[i + 1], data_[i + 2]};
    }
    void set(int x, int y, Srgb8 c) {
        const auto i = index(x, y);
        data_[i] = c.r;
        data_[i + 1] = c.g;
        data_[i + 2] = c.b;
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }
    std::vector<std::uint8_t>& bytes() noexcept { return data_; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

private:
    std::size_t index(int x, int y) const { return (std::size_t(y) * std::size_t(width_) + std::size_t(x)) * 3; }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int width, int height, std::uint8_t fill = 0);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    std::uint8_t at(int x, int y) const { return data_[std::size_t(y) * std::size_t(width_) + std::size_t(x)]; }
    void set(int x, int y, std::uint8_t v) { data_[std::size_t(y) * std::size_t(width_) + std::size_t(x)] = v; }

    const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

// PNG (any bit depth/color type libpng can expand to 8-bit RGB) and binary
// PPM/PGM are accepted on input; output is always PNG.
RgbImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

/// Lower-case hex SHA-256 of an arbitrary byte buffer.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace chromavib
