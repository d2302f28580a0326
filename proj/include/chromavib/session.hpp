#pragma once

// Experiment protocol: trial schedules, the calibration adjustment loop, the
// per-trial phase machines and the records they seal.

#include "chromavib/gazeanalysis.hpp"
#include "chromavib/psychometry.hpp"
#include "chromavib/stimulus.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chromavib {

// ---------------------------------------------------------------------------
// Schedules

inline constexpr std::array<double, 11> kThresholdRatios{0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
inline constexpr int kThresholdTrialCount = 132;
inline constexpr int kThresholdBreakEvery = 10;
inline constexpr int kGuidanceImageSets = 6;
inline constexpr int kGuidanceImagesPerSet = 4;
inline constexpr int kGuidanceBreakEvery = 6;

struct ThresholdTrialSpec {
    int index = 0;
    double r = 0.0;
    double d_mm = 0.0;
    double l_mm = 0.0;
    int vibrating_index = 0;  // 1..4 for l > 0, 0 for the central circle

    friend bool operator==(const ThresholdTrialSpec&, const ThresholdTrialSpec&) = default;
};

struct GuidanceTrialSpec {
    int index = 0;
    int image_set = 0;    // 0-based
    int image_index = 0;  // 0-based within the set
    GuidanceCondition condition = GuidanceCondition::Unmodified;

    friend bool operator==(const GuidanceTrialSpec&, const GuidanceTrialSpec&) = default;
};

enum class PlanKind { ThresholdStudy, GuidanceStudy };

struct ProtocolPlan {
    PlanKind kind = PlanKind::ThresholdStudy;
    std::uint64_t seed = 0;
    int break_every = 0;
    std::vector<ThresholdTrialSpec> threshold_trials;
    std::vector<GuidanceTrialSpec> guidance_trials;

    std::size_t size() const noexcept;
    /// True when a rest screen precedes trial `index`.
    bool break_before(int index) const noexcept;

    friend bool operator==(const ProtocolPlan&, const ProtocolPlan&) = default;
};

/// Every (r, d, l) combination once, in a seeded random order.
ProtocolPlan plan_threshold_study(std::uint64_t seed);

/// `sets` image sets of four images each. Set order and the order inside each
/// set are shuffled; each set shows every condition once, rotated by set so
/// that every image meets every condition across participants.
ProtocolPlan plan_guidance_study(std::uint64_t seed, int sets = kGuidanceImageSets);

// ---------------------------------------------------------------------------
// Calibration

inline constexpr std::array<double, 5> kCalibrationRatios{50, 40, 30, 20, 10};
inline constexpr double kWeightStep = 0.02;
/// w = 0.5 + k * step with |k| <= 24, i.e. w in [0.02, 0.98].
inline constexpr int kMaxWeightSteps = 24;
inline constexpr int kInvertedFlashMs = 100;

enum class CalibrationInput { Increase, Decrease, Accept };
std::string_view to_string(CalibrationInput in);
CalibrationInput parse_calibration_input(std::string_view s);

struct CalibrationFit {
    double r = 0.0;
    int steps = 0;  // signed number of 0.02 steps from 0.5
    double w() const noexcept { return 0.5 + kWeightStep * steps; }

    friend bool operator==(const CalibrationFit&, const CalibrationFit&) = default;
};

struct CalibrationState {
    std::size_t r_index = 0;
    int steps = 0;
    std::vector<CalibrationFit> fits;

    bool complete() const noexcept { return r_index >= kCalibrationRatios.size(); }
    double r() const;  // throws SequenceViolation once complete
    double w() const noexcept { return 0.5 + kWeightStep * steps; }

    friend bool operator==(const CalibrationState&, const CalibrationState&) = default;
};

struct CalibrationStep {
    CalibrationState state;
    bool clamped = false;                   // adjustment hit the w bound
    std::optional<CalibrationFit> accepted;  // set on Accept
    int inverted_flash_ms = 0;              // flash to schedule before the next r
};

/// Throws SequenceViolation when calibration is already complete.
CalibrationStep step_calibration(const CalibrationState& state, CalibrationInput input);

UserCalibration to_user_calibration(const CalibrationState& state, const std::string& participant);

// ---------------------------------------------------------------------------
// Trial records

struct LikertRatings {
    int naturalness = 0;    // 1 very unnatural .. 7 very natural
    int obtrusiveness = 0;  // 1 not obtrusive .. 7 very obtrusive

    friend bool operator==(const LikertRatings&, const LikertRatings&) = default;
};

/// Throws InvalidResponse unless both values are in 1..7.
void validate_likert(const LikertRatings& l);

struct ThresholdRecord {
    ThresholdTrialSpec spec;
    PerceptState state = PerceptState::SolidColor;
    std::optional<int> location;
    double t_presented = 0.0;  // seconds, trial-relative
    double t_response = 0.0;

    double latency_s() const noexcept { return t_response - t_presented; }
    TrialResponse to_response(const std::string& participant) const;

    friend bool operator==(const ThresholdRecord&, const ThresholdRecord&) = default;
};

struct GuidanceRecord {
    GuidanceTrialSpec spec;
    std::string image;
    RoiSpec roi;
    double r = 0.0;
    double w = 0.5;
    // Phase starts, trial-relative seconds.
    double t_fixation = 0.0;
    double t_target = 0.0;
    double t_search = 0.0;
    double t_response = 0.0;  // click, or search start + limit on timeout
    std::optional<Point2> click;  // image px
    bool correct = false;
    bool timeout = false;
    LikertRatings likert;

    GuidanceOutcome outcome() const;
    double completion_s() const { return completion_time(outcome()); }

    friend bool operator==(const GuidanceRecord&, const GuidanceRecord&) = default;
};

nlohmann::json to_json(const ThresholdRecord& r);
nlohmann::json to_json(const GuidanceRecord& r);
nlohmann::json to_json(const CalibrationFit& f, int index);
/// Throw RecordFormatError on schema violations (including unordered
/// timestamps or Likert values out of range).
ThresholdRecord threshold_record_from_json(const nlohmann::json& j);
GuidanceRecord guidance_record_from_json(const nlohmann::json& j);
CalibrationFit calibration_fit_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Phase machines. Times are seconds on the service's monotonic clock.

enum class ThresholdPhase { Presentation, Sealed };

class ThresholdTrial {
public:
    ThresholdTrial(ThresholdTrialSpec spec, double now);

    ThresholdPhase phase() const noexcept { return phase_; }
    const ThresholdTrialSpec& spec() const noexcept { return spec_; }

    /// Location (1..4) is required for peripheral trials and refused for the
    /// central one. Throws SequenceViolation once sealed, InvalidResponse on a
    /// malformed answer.
    const ThresholdRecord& respond(PerceptState state, std::optional<int> location, double now);
    const std::optional<ThresholdRecord>& record() const noexcept { return record_; }

private:
    ThresholdTrialSpec spec_;
    double opened_;
    ThresholdPhase phase_ = ThresholdPhase::Presentation;
    std::optional<ThresholdRecord> record_;
};

enum class GuidancePhase { Fixation, Target, Search, Questionnaire, Sealed };
std::string_view to_string(GuidancePhase p);

struct GuidanceTiming {
    double fixation_s = 1.0;
    double search_limit_s = kSearchLimitS;
};

class GuidanceTrial {
public:
    /// `roi_circle` is the ROI disk in image px used to score clicks.
    GuidanceTrial(GuidanceTrialSpec spec, std::string image, RoiSpec roi, Circle roi_circle, double r, double w,
                  double now, GuidanceTiming timing = {});

    /// Applies time-driven transitions: fixation ends after its duration and
    /// search ends at the limit. Transition times are the scheduled instants.
    void tick(double now);

    GuidancePhase phase() const noexcept { return phase_; }
    const GuidanceRecord& draft() const noexcept { return rec_; }

    /// The participant has seen the target preview; search starts.
    void confirm_target(double now);
    /// Click in image px ends the search.
    void click(Point2 p, double now);
    /// Seals the record. Throws InvalidResponse for values outside 1..7 and
    /// leaves the phase unchanged so the UI can re-prompt.
    const GuidanceRecord& rate(const LikertRatings& likert, double now);

    /// Seconds remaining in a timed phase, for display.
    std::optional<double> remaining(double now) const;

private:
    void require(GuidancePhase p, const char* what) const;
    double rel(double now) const { return now - opened_; }

    GuidanceRecord rec_;
    Circle roi_circle_;
    GuidanceTiming timing_;
    double opened_;
    GuidancePhase phase_ = GuidancePhase::Fixation;
};

}  // namespace chromavib
