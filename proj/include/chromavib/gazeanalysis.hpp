#pragma once

// Offline gaze analysis: eye-tracker scene-camera samples are mapped into
// stimulus-image pixels through a homography fitted to four fiducial corners,
// then reduced to completion time and explored-area ratio.

#include "chromavib/error.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chromavib {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

struct GazeSample {
    double t = 0.0;  // seconds since trial start
    Point2 p;        // tracker camera coordinates
    bool valid = true;
};

struct MarkerObservation {
    double t = 0.0;
    std::array<Point2, 4> camera;   // detected corner positions
    std::array<Point2, 4> display;  // known display/image positions
};

class Homography {
public:
    Homography();  // identity
    /// Row-major 3×3; normalized so that m[2][2] == 1.
    explicit Homography(const std::array<double, 9>& m);

    const std::array<double, 9>& matrix() const noexcept { return m_; }
    double operator()(int row, int col) const { return m_[std::size_t(row * 3 + col)]; }

    /// Projective image of p, or nullopt when the homogeneous w is ~0.
    std::optional<Point2> apply(Point2 p) const;
    Homography inverse() const;
    double determinant() const;

private:
    std::array<double, 9> m_;
};

/// Exact four-point direct linear transform. Throws DegenerateConfiguration
/// when three source or three target points are collinear or coincide.
Homography estimate_homography(const MarkerObservation& obs);

struct MappedGaze {
    std::vector<Point2> points;
    std::vector<double> times;
    int dropped_invalid = 0;
    int dropped_at_infinity = 0;
    int dropped_no_homography = 0;
};

/// Perspective-maps every valid sample; invalid and degenerate ones are
/// dropped and counted.
MappedGaze map_gaze(const Homography& h, std::span<const GazeSample> samples);

/// Like map_gaze, but each sample uses the latest marker observation at or
/// before its timestamp (zero-order hold). Samples before the first
/// observation are dropped. Samples after `until_s` are ignored.
MappedGaze map_gaze_tracked(std::span<const MarkerObservation> markers, std::span<const GazeSample> samples,
                            std::optional<double> until_s = std::nullopt);

struct PixelRect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

/// Fraction of `region` covered by the union of radius-`disk_radius_px` disks
/// around the gaze points that fall inside it.
double explored_ratio(std::span<const Point2> points, const PixelRect& region, double disk_radius_px);

inline constexpr double kSearchLimitS = 30.0;

struct GuidanceOutcome {
    std::optional<double> latency_s;  // click time; empty on timeout
    bool correct = false;
};

/// Correct responses keep their latency; wrong clicks and timeouts score the
/// limit.
double completion_time(const GuidanceOutcome& outcome, double limit_s = kSearchLimitS);

// Line-delimited records. Gaze: {"t","x","y","valid"}; markers:
// {"t","camera":[[x,y]x4],"display":[[x,y]x4]}. Trial metadata:
// {"trial","click_s"|null,"correct","gaze"?,"markers"?}, the last two naming
// per-trial recording files.
std::vector<GazeSample> read_gaze(std::istream& in);
std::vector<MarkerObservation> read_markers(std::istream& in);

struct GazeTrialMeta {
    std::string trial;
    GuidanceOutcome outcome;
    std::optional<std::string> gaze_file;
    std::optional<std::string> markers_file;
};
std::vector<GazeTrialMeta> read_trial_meta(std::istream& in);

}  // namespace chromavib
