#include "chromavib/vibration.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace chromavib {

namespace {

// Guards against catalogs written in the ×10³ presentation units.
constexpr double kMinMajor = 5e-4;
constexpr double kMaxMajor = 5e-2;

void check_weight(double w) {
    if (!(w > 0.0 && w < 1.0)) {
        std::ostringstream os;
        os << "weight w=" << w << " must lie strictly between 0 and 1";
        throw WeightOutOfRange(os.str());
    }
}

void check_ratio(double r) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
        std::ostringstream os;
        os << "ratio r=" << r << " must be a finite non-negative number";
        throw std::invalid_argument(os.str());
    }
}

bool endpoint_ok(XyChromaticity c, double Y) {
    return valid_chromaticity(c) && in_gamut(XyYColor{c, Y});
}

}  // namespace

EllipseCatalog::EllipseCatalog(std::vector<MacAdamEllipse> ellipses, std::string source)
    : ellipses_(std::move(ellipses)), source_(std::move(source)) {
    if (ellipses_.size() != kEllipseCount) {
        throw CatalogInvalid(source_ + ": expected " + std::to_string(kEllipseCount) + " ellipses, found " +
                             std::to_string(ellipses_.size()));
    }
    std::set<int> seen;
    bool has_base = false;
    for (const auto& e : ellipses_) {
        const std::string where = source_ + ": ellipse " + std::to_string(e.index);
        if (e.index < 1 || e.index > int(kEllipseCount)) {
            throw CatalogInvalid(where + " has an index outside 1..25");
        }
        if (!seen.insert(e.index).second) {
            throw CatalogInvalid(where + " appears more than once");
        }
        if (!(e.minor > 0.0) || !(e.major >= e.minor)) {
            throw CatalogInvalid(where + " needs major >= minor > 0");
        }
        if (e.major < kMinMajor || e.major > kMaxMajor) {
            throw CatalogInvalid(where + " major axis is not in raw xy units (expected 5e-4..5e-2)");
        }
        const auto& c = e.center;
        if (!(c.x > 0.0 && c.y > 0.0 && c.x + c.y < 1.0)) {
            throw CatalogInvalid(where + " center lies outside the chromaticity triangle");
        }
        if (std::abs(c.x - kBaseChromaticity.x) < 1e-9 && std::abs(c.y - kBaseChromaticity.y) < 1e-9) {
            has_base = true;
        }
    }
    if (!has_base) {
        throw CatalogInvalid(source_ + ": no ellipse centered at (0.305, 0.323)");
    }
}

const MacAdamEllipse& EllipseCatalog::at(int index) const {
    for (const auto& e : ellipses_) {
        if (e.index == index) {
            return e;
        }
    }
    throw CatalogInvalid("no ellipse with index " + std::to_string(index));
}

const MacAdamEllipse* EllipseCatalog::find_center(XyChromaticity xy, double tolerance) const {
    for (const auto& e : ellipses_) {
        if (std::abs(e.center.x - xy.x) <= tolerance && std::abs(e.center.y - xy.y) <= tolerance) {
            return &e;
        }
    }
    return nullptr;
}

const MacAdamEllipse& EllipseCatalog::base() const {
    const auto* e = find_center(kBaseChromaticity, 1e-9);
    // constructor guarantees presence
    return *e;
}

EllipseCatalog load_catalog(std::istream& in, std::string source) {
    std::vector<MacAdamEllipse> ellipses;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream fields(line);
        MacAdamEllipse e;
        double theta_deg = 0.0;
        if (!(fields >> e.index)) {
            continue;  // blank or comment-only
        }
        if (!(fields >> e.center.x >> e.center.y >> theta_deg >> e.major >> e.minor)) {
            throw CatalogInvalid(source + ":" + std::to_string(line_no) + ": expected `n x y theta_deg major minor`");
        }
        std::string extra;
        if (fields >> extra) {
            throw CatalogInvalid(source + ":" + std::to_string(line_no) + ": trailing field `" + extra + "`");
        }
        e.rotation = theta_deg * std::numbers::pi / 180.0;
        ellipses.push_back(e);
    }
    return EllipseCatalog(std::move(ellipses), std::move(source));
}

EllipseCatalog load_catalog_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CatalogInvalid("cannot open catalog " + path.string());
    }
    return load_catalog(in, path.string());
}

XyChromaticity yellowward_axis(const MacAdamEllipse& e) {
    XyChromaticity u{std::sin(e.rotation), std::cos(e.rotation)};
    if (u.x + u.y < 0.0) {
        u = {-u.x, -u.y};
    }
    return u;
}

VibrationPair place_pair(const MacAdamEllipse& e, double r, double w, double Y) {
    const XyChromaticity u = yellowward_axis(e);
    const double to_plus = 2.0 * r * e.major * w;
    const double to_minus = 2.0 * r * e.major * (1.0 - w);
    VibrationPair p;
    p.plus = {e.center.x + to_plus * u.x, e.center.y + to_plus * u.y};
    p.minus = {e.center.x - to_minus * u.x, e.center.y - to_minus * u.y};
    p.luminance = Y;
    p.ratio = r;
    p.weight = w;
    p.source_ellipse = e.index;
    return p;
}

bool pair_in_gamut(const VibrationPair& p) {
    return endpoint_ok(p.plus, p.luminance) && endpoint_ok(p.minus, p.luminance);
}

namespace {

void require_displayable(const MacAdamEllipse& e, const VibrationPair& p) {
    if (pair_in_gamut(p)) {
        return;
    }
    std::optional<double> limit;
    try {
        limit = max_gamut_ratio(e, p.weight, p.luminance);
    } catch (const NoFeasibleRatio&) {
    }
    const bool plus_bad = !endpoint_ok(p.plus, p.luminance);
    const XyChromaticity bad = plus_bad ? p.plus : p.minus;
    LinearRgb lin{};
    if (bad.y > kMinChromaticityY) {
        lin = xyy_to_linear_rgb({bad, p.luminance});
    }
    std::ostringstream os;
    os << "vibration pair at r=" << p.ratio << ", w=" << p.weight << ", Y=" << p.luminance << " on ellipse "
       << e.index << " leaves the sRGB gamut at its " << (plus_bad ? "yellowish" : "bluish") << " end";
    if (limit) {
        os << "; max feasible r=" << *limit;
    } else {
        os << "; no feasible r at this luminance";
    }
    throw OutOfGamut(os.str(), lin, limit);
}

}  // namespace

VibrationPair pair_at(const MacAdamEllipse& e, double r, double Y) {
    check_ratio(r);
    VibrationPair p = place_pair(e, r, 0.5, Y);
    require_displayable(e, p);
    return p;
}

VibrationPair weighted_pair(const MacAdamEllipse& e, double r, double w, double Y) {
    check_weight(w);
    check_ratio(r);
    VibrationPair p = place_pair(e, r, w, Y);
    require_displayable(e, p);
    return p;
}

std::pair<Srgb8, Srgb8> pair_to_display(const VibrationPair& p) {
    return {xyy_to_srgb8(p.plus_color()), xyy_to_srgb8(p.minus_color())};
}

double max_gamut_ratio(const MacAdamEllipse& e, double w, double Y, const RatioSearch& search) {
    check_weight(w);
    auto feasible = [&](double r) { return pair_in_gamut(place_pair(e, r, w, Y)); };
    if (!feasible(0.0)) {
        std::ostringstream os;
        os << "ellipse " << e.index << " center is not displayable at Y=" << Y;
        throw NoFeasibleRatio(os.str());
    }
    if (feasible(search.cap)) {
        return search.cap;
    }
    // Both endpoints move linearly and the displayable region at fixed Y is
    // convex, so feasibility in r is an interval starting at 0.
    double lo = 0.0;
    double hi = search.cap;
    for (int i = 0; i < search.max_iterations && hi - lo > search.precision; ++i) {
        const double mid = 0.5 * (lo + hi);
        (feasible(mid) ? lo : hi) = mid;
    }
    return lo;
}

double distance(XyChromaticity a, XyChromaticity b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace chromavib
