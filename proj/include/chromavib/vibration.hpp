#pragma once

// Isoluminant color-vibration pairs placed along the major axis of a MacAdam
// discrimination ellipse.

#include "chromavib/colorimetry.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace chromavib {

struct MacAdamEllipse {
    int index = 0;
    XyChromaticity center;
    double rotation = 0.0;  // radians
    double major = 0.0;     // xy units
    double minor = 0.0;     // xy units
};

class EllipseCatalog {
public:
    static constexpr std::size_t kEllipseCount = 25;

    EllipseCatalog(std::vector<MacAdamEllipse> ellipses, std::string source);

    const std::vector<MacAdamEllipse>& ellipses() const noexcept { return ellipses_; }
    const std::string& source() const noexcept { return source_; }

    /// Ellipse with the given 1-based index; throws CatalogInvalid if absent.
    const MacAdamEllipse& at(int index) const;

    /// Ellipse whose center matches (x, y) within `tolerance`, or nullptr.
    const MacAdamEllipse* find_center(XyChromaticity xy, double tolerance = 1e-6) const;

    /// The ellipse centered at the neutral base color (0.305, 0.323).
    const MacAdamEllipse& base() const;

private:
    std::vector<MacAdamEllipse> ellipses_;
    std::string source_;
};

inline constexpr XyChromaticity kBaseChromaticity{0.305, 0.323};
inline constexpr double kBaseLuminance = 0.4;

/// Parses the line-oriented catalog format `n x y theta_deg major minor`
/// with `#` comments. Throws CatalogInvalid on any structural problem.
EllipseCatalog load_catalog(std::istream& in, std::string source = "<stream>");
EllipseCatalog load_catalog_file(const std::filesystem::path& path);

struct VibrationPair {
    XyChromaticity plus;   // yellowish end (larger x + y)
    XyChromaticity minus;  // bluish end
    double luminance = 0.0;
    double ratio = 0.0;
    double weight = 0.5;
    int source_ellipse = 0;

    XyYColor plus_color() const { return {plus, luminance}; }
    XyYColor minus_color() const { return {minus, luminance}; }
};

/// Unit vector along the major axis, (sin θ, cos θ), flipped if needed so that
/// it points toward increasing x + y.
XyChromaticity yellowward_axis(const MacAdamEllipse& e);

/// Endpoint geometry only; no gamut check. The plus end sits 2·r·a·w from the
/// center and the minus end 2·r·a·(1 − w) on the other side.
VibrationPair place_pair(const MacAdamEllipse& e, double r, double w, double Y);

bool pair_in_gamut(const VibrationPair& p);

/// Symmetric pair c ± r·a·(sin θ, cos θ). Throws OutOfGamut when either end
/// is undisplayable at Y.
VibrationPair pair_at(const MacAdamEllipse& e, double r, double Y);

/// Pair whose distances from the center are in ratio w : (1 − w), keeping the
/// total separation at 2·r·a. Requires 0 < w < 1.
VibrationPair weighted_pair(const MacAdamEllipse& e, double r, double w, double Y);

std::pair<Srgb8, Srgb8> pair_to_display(const VibrationPair& p);

struct RatioSearch {
    double cap = 100.0;
    double precision = 1e-3;
    int max_iterations = 64;
};

/// Largest r for which weighted_pair(e, r, w, Y) stays displayable, by
/// bisection. Returns `search.cap` when even the cap is feasible.
double max_gamut_ratio(const MacAdamEllipse& e, double w, double Y, const RatioSearch& search = {});

double distance(XyChromaticity a, XyChromaticity b);

}  // namespace chromavib
