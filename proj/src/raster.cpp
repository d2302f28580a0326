#include "chromavib/raster.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace chromavib {

RgbImage::RgbImage(int width, int height, Srgb8 fill)
    : width_(width), height_(height), data_(std::size_t(width) * std::size_t(height) * 3) {
    for (std::size_t i = 0; i < data_.size(); i += 3) {
        data_[i] = fill.r;
        data_[i + 1] = fill.g;
        data_[i + 2] = fill.b;
    }
}

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height), data_(std::size_t(width) * std::size_t(height), fill) {}

namespace {

struct MemoryReader {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset = 0;
};

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (src->offset + length > src->bytes->size()) {
        png_error(png, "truncated PNG stream");
    }
    std::memcpy(out, src->bytes->data() + src->offset, length);
    src->offset += length;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t length) {
    auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    dst->insert(dst->end(), data, data + length);
}

void flush_noop(png_structp) {}

// libpng reports errors through longjmp, so nothing with a destructor may be
// live between setjmp and the libpng calls below.
bool decode_png_into(const std::vector<std::uint8_t>& bytes, RgbImage& out, std::string& err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) {
        err = "png_create_read_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    MemoryReader reader{&bytes};
    std::vector<png_bytep>* rows = nullptr;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        delete rows;
        return false;
    }
    png_set_read_fn(png, &reader, read_from_memory);
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out = RgbImage(int(width), int(height));
    rows = new std::vector<png_bytep>(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        (*rows)[y] = out.bytes().data() + std::size_t(y) * width * 3;
    }
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    return true;
}

bool encode_png_into(const RgbImage& image, std::vector<std::uint8_t>& out, std::string& err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) {
        err = "png_create_write_struct failed";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep>* rows = nullptr;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        delete rows;
        return false;
    }
    png_set_write_fn(png, &out, write_to_memory, flush_noop);
    png_set_IHDR(png, info, png_uint_32(image.width()), png_uint_32(image.height()), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Tag as sRGB so viewers do not apply their own gamma guess.
    png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
    png_write_info(png, info);
    rows = new std::vector<png_bytep>(std::size_t(image.height()));
    auto* base = const_cast<std::uint8_t*>(image.bytes().data());
    for (int y = 0; y < image.height(); ++y) {
        (*rows)[std::size_t(y)] = base + std::size_t(y) * std::size_t(image.width()) * 3;
    }
    png_write_image(png, rows->data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    delete rows;
    return true;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageIoError("cannot open image " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Binary P5/P6 with maxval 255.
RgbImage decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    std::size_t pos = 2;
    auto next_token = [&]() {
        std::string tok;
        while (pos < bytes.size()) {
            const char c = char(bytes[pos]);
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                ++pos;
                continue;
            } else {
                tok.push_back(c);
            }
            ++pos;
        }
        return tok;
    };
    const bool color = bytes[1] == '6';
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw ImageIoError(name + ": malformed PNM header");
    }
    ++pos;  // single whitespace after maxval
    if (maxval != 255 || w <= 0 || h <= 0) {
        throw ImageIoError(name + ": only 8-bit PNM is supported");
    }
    const std::size_t channels = color ? 3 : 1;
    const std::size_t need = std::size_t(w) * std::size_t(h) * channels;
    if (bytes.size() < pos + need) {
        throw ImageIoError(name + ": truncated PNM data");
    }
    RgbImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = pos + (std::size_t(y) * std::size_t(w) + std::size_t(x)) * channels;
            if (color) {
                img.set(x, y, {bytes[i], bytes[i + 1], bytes[i + 2]});
            } else {
                img.set(x, y, {bytes[i], bytes[i], bytes[i]});
            }
        }
    }
    return img;
}

}  // namespace

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
    RgbImage out;
    std::string err;
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw ImageIoError("not a PNG stream");
    }
    if (!decode_png_into(bytes, out, err)) {
        throw ImageIoError("PNG decode failed: " + err);
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    if (image.empty()) {
        throw ImageIoError("refusing to encode an empty image");
    }
    std::vector<std::uint8_t> out;
    std::string err;
    if (!encode_png_into(image, out, err)) {
        throw ImageIoError("PNG encode failed: " + err);
    }
    return out;
}

RgbImage read_image(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
        return decode_png(bytes);
    }
    if (bytes.size() > 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return decode_pnm(bytes, path.string());
    }
    throw ImageIoError(path.string() + ": unsupported image format (PNG, PGM or PPM expected)");
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()))) {
        throw ImageIoError("cannot write " + path.string());
    }
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace chromavib
