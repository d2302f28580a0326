#include "chromavib/colorimetry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace chromavib {

namespace {

constexpr double kLinearSlope = 12.92;
constexpr double kScale = 1.055;
constexpr double kOffset = 0.055;
constexpr double kExponent = 2.4;
constexpr double kEncodedBreakpoint = kLinearSlope * kGammaBreakpoint;

bool channel_ok(double v) {
    return v >= -kGamutTolerance && v <= 1.0 + kGamutTolerance;
}

}  // namespace

std::string to_string(const Srgb8& c) {
    std::ostringstream os;
    os << '(' << int(c.r) << ", " << int(c.g) << ", " << int(c.b) << ')';
    return os.str();
}

XyzColor xyy_to_xyz(const XyYColor& c) {
    const double x = c.chroma.x;
    const double y = c.chroma.y;
    if (!(y > kMinChromaticityY)) {
        std::ostringstream os;
        os << "chromaticity y=" << y << " is too small to convert to XYZ";
        throw DegenerateChromaticity(os.str());
    }
    XyzColor out;
    out.X = x * c.Y / y;
    out.Y = c.Y;
    out.Z = (1.0 - x - y) * c.Y / y;
    return out;
}

LinearRgb xyz_to_linear_rgb(const XyzColor& c) {
    const auto& m = kXyzToLinearSrgb;
    return {
        m[0][0] * c.X + m[0][1] * c.Y + m[0][2] * c.Z,
        m[1][0] * c.X + m[1][1] * c.Y + m[1][2] * c.Z,
        m[2][0] * c.X + m[2][1] * c.Y + m[2][2] * c.Z,
    };
}

double gamma_encode(double linear) {
    if (linear >= kGammaBreakpoint) {
        return kScale * std::pow(linear, 1.0 / kExponent) - kOffset;
    }
    return kLinearSlope * linear;
}

double gamma_decode(double encoded) {
    if (encoded >= kEncodedBreakpoint) {
        return std::pow((encoded + kOffset) / kScale, kExponent);
    }
    return encoded / kLinearSlope;
}

std::uint8_t quantize8(double encoded) {
    const double scaled = std::round(encoded * 255.0);  // half away from zero
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

LinearRgb xyy_to_linear_rgb(const XyYColor& c) {
    return xyz_to_linear_rgb(xyy_to_xyz(c));
}

bool in_gamut(const LinearRgb& c) {
    return channel_ok(c.r) && channel_ok(c.g) && channel_ok(c.b);
}

bool in_gamut(const XyYColor& c) {
    if (!(c.chroma.y > kMinChromaticityY)) {
        return false;
    }
    return in_gamut(xyy_to_linear_rgb(c));
}

Srgb8 linear_to_srgb8_clamped(const LinearRgb& c) {
    auto enc = [](double v) { return quantize8(gamma_encode(std::clamp(v, 0.0, 1.0))); };
    return {enc(c.r), enc(c.g), enc(c.b)};
}

Srgb8 xyy_to_srgb8(const XyYColor& c) {
    const LinearRgb lin = xyy_to_linear_rgb(c);
    if (!in_gamut(lin)) {
        std::ostringstream os;
        os << "xyY (" << c.chroma.x << ", " << c.chroma.y << ", " << c.Y
           << ") is outside the sRGB gamut; linear RGB = (" << lin.r << ", " << lin.g << ", " << lin.b << ')';
        throw OutOfGamut(os.str(), lin);
    }
    return linear_to_srgb8_clamped(lin);
}

bool valid_chromaticity(const XyChromaticity& c) {
    return c.x >= 0.0 && c.y > kMinChromaticityY && c.x + c.y <= 1.0;
}

}  // namespace chromavib
