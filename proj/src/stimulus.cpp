#include "chromavib/stimulus.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace chromavib {

using nlohmann::json;

namespace {

constexpr double kMaxAnisotropy = 0.005;

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void fill_circle(RgbImage& img, const Circle& c, Srgb8 color) {
    const double radius = 0.5 * c.diameter;
    const int x0 = std::max(0, int(std::floor(c.cx - radius)));
    const int x1 = std::min(img.width() - 1, int(std::ceil(c.cx + radius)));
    const int y0 = std::max(0, int(std::floor(c.cy - radius)));
    const int y1 = std::min(img.height() - 1, int(std::ceil(c.cy + radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (c.contains(x, y)) {
                img.set(x, y, color);
            }
        }
    }
}

json circle_json(const Circle& c, double scale) {
    return {{"cx_px", c.cx}, {"cy_px", c.cy}, {"diameter_px", c.diameter}, {"diameter_mm", c.diameter / scale}};
}

}  // namespace

void DisplayProfile::validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(width_mm) || !positive(height_mm) || width_px <= 0 || height_px <= 0 ||
        !positive(viewing_distance_mm) || !positive(refresh_hz)) {
        throw InvalidProfile("display profile fields must all be positive");
    }
    if (refresh_hz < 2.0 * kColorFusionHz) {
        throw InvalidProfile("refresh rate " + num(refresh_hz) + " Hz alternates at " + num(refresh_hz / 2.0) +
                             " Hz, below the 25 Hz color fusion frequency");
    }
}

DisplayProfile DisplayProfile::reference_panel() {
    const double diagonal_mm = 42.5 * 25.4;
    const double aspect_diag = std::hypot(16.0, 9.0);
    DisplayProfile p;
    p.width_mm = diagonal_mm * 16.0 / aspect_diag;
    p.height_mm = diagonal_mm * 9.0 / aspect_diag;
    p.width_px = 3840;
    p.height_px = 2160;
    p.viewing_distance_mm = 500.0;
    p.refresh_hz = 60.0;
    return p;
}

DisplayProfile profile_from_json(const json& j) {
    try {
        DisplayProfile p;
        p.width_mm = j.at("width_mm").get<double>();
        p.height_mm = j.at("height_mm").get<double>();
        p.width_px = j.at("width_px").get<int>();
        p.height_px = j.at("height_px").get<int>();
        p.viewing_distance_mm = j.at("viewing_distance_mm").get<double>();
        p.refresh_hz = j.at("refresh_hz").get<double>();
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw InvalidProfile(std::string("display profile: ") + e.what());
    }
}

DisplayProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidProfile("cannot open display profile " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidProfile("display profile " + path.string() + ": " + e.what());
    }
    return profile_from_json(j);
}

double px_per_mm(const DisplayProfile& profile) {
    const double sx = profile.width_px / profile.width_mm;
    const double sy = profile.height_px / profile.height_mm;
    if (std::abs(sx - sy) > kMaxAnisotropy * std::max(sx, sy)) {
        throw AnisotropicPixels("pixel pitch differs between axes (" + num(sx) + " vs " + num(sy) + " px/mm)");
    }
    return sx;
}

double mm_to_px(const DisplayProfile& profile, double length_mm) {
    return length_mm * px_per_mm(profile);
}

double px_to_mm(const DisplayProfile& profile, double length_px) {
    return length_px / px_per_mm(profile);
}

double eccentricity_to_angle(const DisplayProfile& profile, double l_mm) {
    if (l_mm < 0.0) {
        throw std::invalid_argument("eccentricity must be non-negative");
    }
    return std::atan(l_mm / profile.viewing_distance_mm) * 180.0 / std::numbers::pi;
}

double visual_disk_radius_mm(const DisplayProfile& profile, double diameter_deg) {
    const double half = 0.5 * diameter_deg * std::numbers::pi / 180.0;
    return profile.viewing_distance_mm * std::tan(half);
}

bool Circle::contains(int x, int y) const {
    const double dx = x + 0.5 - cx;
    const double dy = y + 0.5 - cy;
    const double r = 0.5 * diameter;
    return dx * dx + dy * dy <= r * r;
}

bool Circle::inside(int width, int height) const {
    const double r = 0.5 * diameter;
    return cx - r >= 0.0 && cy - r >= 0.0 && cx + r <= width && cy + r <= height;
}

std::string_view to_string(GuidanceCondition c) {
    switch (c) {
        case GuidanceCondition::Unmodified: return "unmodified";
        case GuidanceCondition::UnobtrusiveVibration: return "unobtrusive";
        case GuidanceCondition::ObtrusiveVibration: return "obtrusive";
        case GuidanceCondition::ExplicitCircle: return "explicit";
    }
    return "?";
}

GuidanceCondition parse_guidance_condition(std::string_view s) {
    if (s == "unmodified") return GuidanceCondition::Unmodified;
    if (s == "unobtrusive") return GuidanceCondition::UnobtrusiveVibration;
    if (s == "obtrusive") return GuidanceCondition::ObtrusiveVibration;
    if (s == "explicit") return GuidanceCondition::ExplicitCircle;
    throw std::invalid_argument("unknown guidance condition `" + std::string(s) +
                                "` (unmodified|unobtrusive|obtrusive|explicit)");
}

GrayImage prepare_image(const RgbImage& raster) {
    if (raster.empty()) {
        throw EmptyImage("cannot prepare an empty image");
    }
    GrayImage out(raster.width(), raster.height());
    constexpr double span = kPreparedCeil - kPreparedFloor;
    for (int y = 0; y < raster.height(); ++y) {
        for (int x = 0; x < raster.width(); ++x) {
            const Srgb8 c = raster.at(x, y);
            const double luma = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;  // BT.601
            const double v = kPreparedFloor + luma * span / 255.0;
            out.set(x, y, std::uint8_t(std::clamp(std::round(v), double(kPreparedFloor), double(kPreparedCeil))));
        }
    }
    return out;
}

std::vector<Circle> threshold_layout(const DisplayProfile& profile, double d_mm, double l_mm) {
    const double cx = 0.5 * profile.width_px;
    const double cy = 0.5 * profile.height_px;
    const double diameter = mm_to_px(profile, d_mm);
    if (l_mm == 0.0) {
        return {{cx, cy, diameter}};
    }
    const double off = mm_to_px(profile, l_mm);
    return {
        {cx, cy - off, diameter},
        {cx + off, cy, diameter},
        {cx, cy + off, diameter},
        {cx - off, cy, diameter},
    };
}

StimulusFramePair render_threshold_stimulus(const DisplayProfile& profile, const MacAdamEllipse& ellipse, double r,
                                            double w, double d_mm, double l_mm, int vibrating_index,
                                            const ThresholdStimulusOptions& options) {
    profile.validate();
    const auto circles = threshold_layout(profile, d_mm, l_mm);
    if (l_mm == 0.0) {
        vibrating_index = 1;
    } else if (vibrating_index < 1 || vibrating_index > 4) {
        throw std::invalid_argument("vibrating circle index must be 1..4");
    }
    for (const auto& c : circles) {
        if (!c.inside(profile.width_px, profile.height_px)) {
            throw GeometryOverflow("circle d=" + num(d_mm) + " mm at l=" + num(l_mm) + " mm exceeds the panel");
        }
    }
    const VibrationPair pair = weighted_pair(ellipse, r, w, options.luminance);
    const auto [plus, minus] = pair_to_display(pair);
    const Srgb8 solid = xyy_to_srgb8({ellipse.center, options.luminance});

    StimulusFramePair out;
    out.frame_a = RgbImage(profile.width_px, profile.height_px, options.background);
    for (std::size_t i = 0; i < circles.size(); ++i) {
        fill_circle(out.frame_a, circles[i], solid);
    }
    out.frame_b = out.frame_a;
    fill_circle(out.frame_a, circles[std::size_t(vibrating_index - 1)], plus);
    fill_circle(out.frame_b, circles[std::size_t(vibrating_index - 1)], minus);

    auto& m = out.metadata;
    m.kind = "threshold";
    m.r = r;
    m.w = w;
    m.luminance = options.luminance;
    m.d_mm = d_mm;
    m.l_mm = l_mm;
    m.l_deg = eccentricity_to_angle(profile, l_mm);
    m.circles = circles;
    m.vibrating_index = vibrating_index;
    m.plus = pair.plus;
    m.minus = pair.minus;
    m.px_per_mm = px_per_mm(profile);
    return out;
}

StimulusFramePair render_calibration_stimulus(const DisplayProfile& profile, const MacAdamEllipse& ellipse, double r,
                                              double w, double diameter_mm,
                                              const ThresholdStimulusOptions& options) {
    profile.validate();
    const Circle circle{0.5 * profile.width_px, 0.5 * profile.height_px, mm_to_px(profile, diameter_mm)};
    if (!circle.inside(profile.width_px, profile.height_px)) {
        throw GeometryOverflow("calibration circle exceeds the panel");
    }
    const VibrationPair pair = weighted_pair(ellipse, r, w, options.luminance);
    const auto [plus, minus] = pair_to_display(pair);
    const Srgb8 solid = xyy_to_srgb8({ellipse.center, options.luminance});

    StimulusFramePair out;
    out.frame_a = RgbImage(profile.width_px, profile.height_px, options.background);
    out.frame_b = out.frame_a;
    const double radius = 0.5 * circle.diameter;
    for (int y = int(circle.cy - radius) - 1; y <= int(circle.cy + radius) + 1; ++y) {
        for (int x = int(circle.cx - radius) - 1; x <= int(circle.cx + radius) + 1; ++x) {
            if (x < 0 || y < 0 || x >= profile.width_px || y >= profile.height_px || !circle.contains(x, y)) {
                continue;
            }
            const bool left = x + 0.5 < circle.cx;
            out.frame_a.set(x, y, left ? solid : plus);
            out.frame_b.set(x, y, left ? solid : minus);
        }
    }
    auto& m = out.metadata;
    m.kind = "calibration";
    m.r = r;
    m.w = w;
    m.luminance = options.luminance;
    m.d_mm = diameter_mm;
    m.circles = {circle};
    m.vibrating_index = 1;
    m.plus = pair.plus;
    m.minus = pair.minus;
    m.px_per_mm = px_per_mm(profile);
    return out;
}

RgbImage render_inverted(const RgbImage& frame, const std::vector<Circle>& circles) {
    RgbImage out = frame;
    for (const auto& c : circles) {
        fill_circle(out, c, Srgb8{0, 0, 0});
    }
    return out;
}

RgbImage colorize_neutral(const GrayImage& image, XyChromaticity neutral) {
    std::array<Srgb8, 256> lut{};
    for (int g = 0; g < 256; ++g) {
        const double Y = gamma_decode(g / 255.0);
        lut[std::size_t(g)] = linear_to_srgb8_clamped(xyy_to_linear_rgb({neutral, Y}));
    }
    RgbImage out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            out.set(x, y, lut[image.at(x, y)]);
        }
    }
    return out;
}

double roi_eccentricity_mm(const DisplayProfile& profile, const GrayImage& image, const RoiSpec& roi) {
    const double dx = roi.cx_px - 0.5 * image.width();
    const double dy = roi.cy_px - 0.5 * image.height();
    return px_to_mm(profile, std::hypot(dx, dy));
}

double guidance_ratio(const ThresholdTable& table, GuidanceCondition condition, double l_mm,
                      const GuidanceOptions& options) {
    switch (condition) {
        case GuidanceCondition::UnobtrusiveVibration:
            return interpolate_threshold(table, Condition::Awareness, options.probability,
                                         options.threshold_diameter_mm, l_mm);
        case GuidanceCondition::ObtrusiveVibration:
            return interpolate_threshold(table, Condition::Discomfort, options.probability,
                                         options.threshold_diameter_mm, l_mm);
        default:
            return 0.0;
    }
}

StimulusFramePair render_guidance(const GuidanceInputs& in, const GuidanceOptions& options) {
    in.profile.validate();
    if (in.image.empty()) {
        throw EmptyImage("guidance image is empty");
    }
    if (in.roi.vibration_diameter_mm < in.roi.roi_diameter_mm) {
        throw GeometryOverflow("vibration circle must enclose the ROI");
    }
    const double scale = px_per_mm(in.profile);
    const Circle vib{in.roi.cx_px, in.roi.cy_px, in.roi.vibration_diameter_mm * scale};
    const Circle roi_circle{in.roi.cx_px, in.roi.cy_px, in.roi.roi_diameter_mm * scale};
    if (!vib.inside(in.image.width(), in.image.height())) {
        throw GeometryOverflow("vibration circle around (" + num(in.roi.cx_px) + ", " + num(in.roi.cy_px) +
                               ") leaves the image");
    }
    const double l_mm = roi_eccentricity_mm(in.profile, in.image, in.roi);

    StimulusFramePair out;
    auto& m = out.metadata;
    m.kind = "guidance";
    m.condition = in.condition;
    m.roi = in.roi;
    m.d_mm = in.roi.vibration_diameter_mm;
    m.l_mm = l_mm;
    m.l_deg = eccentricity_to_angle(in.profile, l_mm);
    m.circles = {vib};
    m.source_hash = in.source_hash;
    m.px_per_mm = scale;
    m.plus = m.minus = options.neutral;

    out.frame_a = colorize_neutral(in.image, options.neutral);

    switch (in.condition) {
        case GuidanceCondition::Unmodified:
            out.frame_b = out.frame_a;
            return out;
        case GuidanceCondition::ExplicitCircle: {
            const double outer = 0.5 * roi_circle.diameter;
            const double inner = std::max(0.0, outer - options.outline_px);
            for (int y = 0; y < in.image.height(); ++y) {
                for (int x = 0; x < in.image.width(); ++x) {
                    const double d = std::hypot(x + 0.5 - roi_circle.cx, y + 0.5 - roi_circle.cy);
                    if (d <= outer && d > inner) {
                        out.frame_a.set(x, y, options.outline);
                    }
                }
            }
            out.frame_b = out.frame_a;
            return out;
        }
        default:
            break;
    }

    // ROIs inside the central field use the l = 0 row.
    const double l_lookup = m.l_deg <= kCentralFieldDeg ? 0.0 : l_mm;
    const double r = guidance_ratio(in.table, in.condition, l_lookup, options);
    const WeightLookup wl = interpolate_weight(in.calibration, r);
    m.r = r;
    m.w = wl.weight;
    m.weight_outside_calibration = wl.outside_calibration;
    m.luminance = -1.0;  // per pixel

    // One pair per gray level; chromaticity is fixed unless clamping kicks in.
    struct LevelColors {
        bool ready = false;
        Srgb8 a, b;
        bool clamped = false;
    };
    std::array<LevelColors, 256> lut{};
    auto colors_for = [&](std::uint8_t g) -> const LevelColors& {
        auto& slot = lut[g];
        if (slot.ready) return slot;
        const double Y = gamma_decode(g / 255.0);
        VibrationPair pair = place_pair(in.ellipse, r, wl.weight, Y);
        if (!pair_in_gamut(pair)) {
            if (!options.clamp_per_pixel) {
                std::ostringstream os;
                os << "gray level " << int(g) << " (Y=" << Y << ") cannot carry r=" << r << ", w=" << wl.weight
                   << " inside the sRGB gamut";
                throw PerPixelGamutViolation(os.str());
            }
            double limit = 0.0;
            try {
                limit = max_gamut_ratio(in.ellipse, wl.weight, Y);
            } catch (const NoFeasibleRatio&) {
                limit = 0.0;
            }
            pair = place_pair(in.ellipse, std::min(r, limit), wl.weight, Y);
            slot.clamped = true;
        }
        slot.a = linear_to_srgb8_clamped(xyy_to_linear_rgb(pair.plus_color()));
        slot.b = linear_to_srgb8_clamped(xyy_to_linear_rgb(pair.minus_color()));
        slot.ready = true;
        return slot;
    };

    out.frame_b = out.frame_a;
    const double radius = 0.5 * vib.diameter;
    const int y0 = std::max(0, int(std::floor(vib.cy - radius)));
    const int y1 = std::min(in.image.height() - 1, int(std::ceil(vib.cy + radius)));
    const int x0 = std::max(0, int(std::floor(vib.cx - radius)));
    const int x1 = std::min(in.image.width() - 1, int(std::ceil(vib.cx + radius)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (!vib.contains(x, y)) continue;
            const auto& c = colors_for(in.image.at(x, y));
            out.frame_a.set(x, y, c.a);
            out.frame_b.set(x, y, c.b);
            if (c.clamped) ++m.clamped_pixels;
        }
    }
    const VibrationPair nominal = place_pair(in.ellipse, r, wl.weight, kBaseLuminance);
    m.plus = nominal.plus;
    m.minus = nominal.minus;
    return out;
}

std::string metadata_json(const StimulusFramePair& pair, const DisplayProfile& profile) {
    const auto& m = pair.metadata;
    const double scale = m.px_per_mm > 0.0 ? m.px_per_mm : px_per_mm(profile);
    json j;
    j["version"] = 1;
    j["kind"] = m.kind;
    j["condition"] = m.condition ? json(std::string(to_string(*m.condition))) : json(nullptr);
    j["r"] = m.r;
    j["w"] = m.w;
    j["luminance"] = m.luminance < 0.0 ? json("per-pixel") : json(m.luminance);
    j["d_mm"] = m.d_mm;
    j["l_mm"] = m.l_mm;
    j["l_deg"] = m.l_deg;
    j["px_per_mm"] = scale;
    j["vibrating_index"] = m.vibrating_index;
    j["plus_xy"] = {m.plus.x, m.plus.y};
    j["minus_xy"] = {m.minus.x, m.minus.y};
    j["circles"] = json::array();
    for (const auto& c : m.circles) {
        j["circles"].push_back(circle_json(c, scale));
    }
    if (m.roi) {
        j["roi"] = {{"cx_px", m.roi->cx_px},
                    {"cy_px", m.roi->cy_px},
                    {"roi_diameter_mm", m.roi->roi_diameter_mm},
                    {"roi_diameter_px", m.roi->roi_diameter_mm * scale},
                    {"vibration_diameter_mm", m.roi->vibration_diameter_mm},
                    {"vibration_diameter_px", m.roi->vibration_diameter_mm * scale}};
    }
    j["weight_outside_calibration"] = m.weight_outside_calibration;
    j["clamped_pixels"] = m.clamped_pixels;
    j["source_sha256"] = m.source_hash;
    j["frame_a_sha256"] = sha256_hex(pair.frame_a.bytes());
    j["frame_b_sha256"] = sha256_hex(pair.frame_b.bytes());
    j["display"] = {{"width_mm", profile.width_mm},
                    {"height_mm", profile.height_mm},
                    {"width_px", profile.width_px},
                    {"height_px", profile.height_px},
                    {"viewing_distance_mm", profile.viewing_distance_mm},
                    {"refresh_hz", profile.refresh_hz}};
    return j.dump(2);
}

}  // namespace chromavib
