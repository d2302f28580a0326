#pragma once

// CIE 1931 (2 degree observer, D65) conversions between xyY, XYZ and sRGB.
//
// Everything here is a pure function over doubles. No clamping happens
// before the 8-bit stage so callers can inspect signed gamut overshoot.

#include "chromavib/error.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace chromavib {

struct XyChromaticity {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const XyChromaticity&, const XyChromaticity&) = default;
};

struct XyYColor {
    XyChromaticity chroma;
    double Y = 0.0;
};

struct XyzColor {
    double X = 0.0;
    double Y = 0.0;
    double Z = 0.0;
};

struct LinearRgb {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
};

struct Srgb8 {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Srgb8&, const Srgb8&) = default;
};

std::string to_string(const Srgb8& c);

/// Raised when a color cannot be shown on an sRGB display. Carries the
/// unclamped linear channels and, when the caller knows it, the largest
/// amplitude ratio that would still have been displayable.
class OutOfGamut : public Error {
public:
    OutOfGamut(const std::string& what, LinearRgb channels, std::optional<double> max_ratio = std::nullopt)
        : Error(what), channels_(channels), max_ratio_(max_ratio) {}

    const LinearRgb& channels() const noexcept { return channels_; }
    std::optional<double> max_ratio() const noexcept { return max_ratio_; }

private:
    LinearRgb channels_;
    std::optional<double> max_ratio_;
};

/// XYZ -> linear sRGB, rows R, G, B. Four printed digits, D65 white.
inline constexpr std::array<std::array<double, 3>, 3> kXyzToLinearSrgb{{
    {3.2406, -1.5372, -0.4986},
    {-0.9689, 1.8758, 0.0415},
    {0.0557, -0.2040, 1.0570},
}};

/// Allowed overshoot outside [0, 1] per linear channel before a color is
/// declared undisplayable.
inline constexpr double kGamutTolerance = 1e-6;

/// Chromaticities with y at or below this cannot be lifted to XYZ.
inline constexpr double kMinChromaticityY = 1e-12;

/// Linear value where the two transfer-curve branches meet exactly. The
/// customary 0.0031308 is this number rounded to five significant digits.
inline constexpr double kGammaBreakpoint = 0.00313066844250061;

XyzColor xyy_to_xyz(const XyYColor& c);

LinearRgb xyz_to_linear_rgb(const XyzColor& c);

/// sRGB transfer curve. Inputs below the breakpoint, negative ones included,
/// take the linear segment.
double gamma_encode(double linear);

/// Inverse of gamma_encode.
double gamma_decode(double encoded);

/// Encoded [0, 1] value to an 8-bit code, rounding half away from zero and
/// saturating at the ends.
std::uint8_t quantize8(double encoded);

LinearRgb xyy_to_linear_rgb(const XyYColor& c);

bool in_gamut(const LinearRgb& c);
bool in_gamut(const XyYColor& c);

/// Full display path: xyY -> XYZ -> linear RGB -> transfer curve -> 8 bit.
/// Throws OutOfGamut when any linear channel leaves [0, 1] by more than
/// kGamutTolerance.
Srgb8 xyy_to_srgb8(const XyYColor& c);

/// Same as xyy_to_srgb8 but clamps out-of-range channels instead of throwing.
Srgb8 linear_to_srgb8_clamped(const LinearRgb& c);

/// True when the chromaticity lies inside the xy triangle with y > 0.
bool valid_chromaticity(const XyChromaticity& c);

}  // namespace chromavib
