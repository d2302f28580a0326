#pragma once

// Display geometry and frame-pair synthesis. A vibration stimulus is two
// frames that differ only inside one circle; the display alternates them at
// its refresh rate so the two isoluminant colors fuse.

#include "chromavib/psychometry.hpp"
#include "chromavib/raster.hpp"
#include "chromavib/vibration.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace chromavib {

/// Alternation must stay above the ~25 Hz chromatic fusion frequency, and
/// one full a/b cycle takes two refreshes.
inline constexpr double kColorFusionHz = 25.0;

struct DisplayProfile {
    double width_mm = 0.0;
    double height_mm = 0.0;
    int width_px = 0;
    int height_px = 0;
    double viewing_distance_mm = 0.0;
    double refresh_hz = 0.0;

    /// Throws InvalidProfile for non-positive fields or a refresh rate that
    /// cannot alternate faster than kColorFusionHz.
    void validate() const;

    /// 42.5-inch 16:9 3840 × 2160 panel at 500 mm, 60 Hz.
    static DisplayProfile reference_panel();
};

/// Fields width_mm, height_mm, width_px, height_px, viewing_distance_mm,
/// refresh_hz. Throws InvalidProfile.
DisplayProfile profile_from_json(const nlohmann::json& j);
DisplayProfile load_profile(const std::filesystem::path& path);

/// Pixels per millimetre. Throws AnisotropicPixels when horizontal and
/// vertical pitch disagree by more than 0.5 %.
double px_per_mm(const DisplayProfile& profile);
double mm_to_px(const DisplayProfile& profile, double length_mm);
double px_to_mm(const DisplayProfile& profile, double length_px);

/// Visual angle in degrees of a point l mm from the fixation point.
double eccentricity_to_angle(const DisplayProfile& profile, double l_mm);

/// On-screen radius (mm) of a disk subtending `diameter_deg` at the eye.
double visual_disk_radius_mm(const DisplayProfile& profile, double diameter_deg);

struct Circle {
    double cx = 0.0;  // px, continuous coordinates (pixel centers at +0.5)
    double cy = 0.0;
    double diameter = 0.0;  // px

    bool contains(int x, int y) const;
    bool inside(int width, int height) const;
};

enum class GuidanceCondition { Unmodified, UnobtrusiveVibration, ObtrusiveVibration, ExplicitCircle };

std::string_view to_string(GuidanceCondition c);
GuidanceCondition parse_guidance_condition(std::string_view s);

struct RoiSpec {
    double cx_px = 0.0;  // image coordinates
    double cy_px = 0.0;
    double roi_diameter_mm = 44.0;
    double vibration_diameter_mm = 80.0;

    friend bool operator==(const RoiSpec&, const RoiSpec&) = default;
};

struct StimulusMetadata {
    std::string kind;  // "threshold", "calibration", "guidance"
    std::optional<GuidanceCondition> condition;
    double r = 0.0;
    double w = 0.5;
    double luminance = kBaseLuminance;
    double d_mm = 0.0;
    double l_mm = 0.0;
    double l_deg = 0.0;
    std::vector<Circle> circles;  // px
    int vibrating_index = 0;      // 1-based; 0 when not applicable
    std::optional<RoiSpec> roi;
    XyChromaticity plus;
    XyChromaticity minus;
    std::string source_hash;
    bool weight_outside_calibration = false;
    long clamped_pixels = 0;
    double px_per_mm = 0.0;
};

struct StimulusFramePair {
    RgbImage frame_a;  // plus (yellowish) colors
    RgbImage frame_b;  // minus (bluish) colors
    StimulusMetadata metadata;
};

/// Luma grayscale, remapped affinely from [0, 255] to [60, 196] so that a
/// vibration pair fits in gamut at every pixel.
GrayImage prepare_image(const RgbImage& raster);

inline constexpr std::uint8_t kPreparedFloor = 60;
inline constexpr std::uint8_t kPreparedCeil = 196;

/// Circle centers for the threshold layout: one at the screen center for
/// l = 0, otherwise four at distance l (1 top, 2 right, 3 bottom, 4 left).
std::vector<Circle> threshold_layout(const DisplayProfile& profile, double d_mm, double l_mm);

struct ThresholdStimulusOptions {
    Srgb8 background{255, 255, 255};
    double luminance = kBaseLuminance;
};

/// Full-panel frames for one threshold trial. The vibrating circle carries the
/// (r, w) pair on the base ellipse; the others are the solid base color.
StimulusFramePair render_threshold_stimulus(const DisplayProfile& profile, const MacAdamEllipse& ellipse, double r,
                                            double w, double d_mm, double l_mm, int vibrating_index,
                                            const ThresholdStimulusOptions& options = {});

/// Split-circle calibration frames: left half solid base color, right half
/// vibrating at (r, w).
StimulusFramePair render_calibration_stimulus(const DisplayProfile& profile, const MacAdamEllipse& ellipse, double r,
                                              double w, double diameter_mm = 120.0,
                                              const ThresholdStimulusOptions& options = {});

/// Afterimage-suppression frame: every circle painted black.
RgbImage render_inverted(const RgbImage& frame, const std::vector<Circle>& circles);

/// ROIs at or within this eccentricity (degrees) count as central vision and
/// take the l = 0 threshold.
inline constexpr double kCentralFieldDeg = 5.0;

struct GuidanceOptions {
    XyChromaticity neutral = kBaseChromaticity;
    double probability = 0.75;
    double threshold_diameter_mm = 80.0;
    /// Lower r per pixel when the pair leaves the gamut instead of failing.
    bool clamp_per_pixel = false;
    int outline_px = 3;
    Srgb8 outline{255, 0, 0};
};

struct GuidanceInputs {
    const GrayImage& image;  // output of prepare_image
    RoiSpec roi;
    GuidanceCondition condition = GuidanceCondition::Unmodified;
    const ThresholdTable& table;
    const UserCalibration& calibration;
    const DisplayProfile& profile;
    const MacAdamEllipse& ellipse;
    std::string source_hash;
};

/// Eccentricity (mm) of an ROI when the image is shown centered on the panel.
double roi_eccentricity_mm(const DisplayProfile& profile, const GrayImage& image, const RoiSpec& roi);

/// Amplitude for a vibration condition at the ROI's eccentricity.
double guidance_ratio(const ThresholdTable& table, GuidanceCondition condition, double l_mm,
                      const GuidanceOptions& options = {});

StimulusFramePair render_guidance(const GuidanceInputs& in, const GuidanceOptions& options = {});

/// Gray image colorized at the neutral chromaticity; per-pixel Y is the
/// decoded gray level.
RgbImage colorize_neutral(const GrayImage& image, XyChromaticity neutral = kBaseChromaticity);

/// Sidecar record describing a rendered pair (geometry in mm and px).
std::string metadata_json(const StimulusFramePair& pair, const DisplayProfile& profile);

}  // namespace chromavib
