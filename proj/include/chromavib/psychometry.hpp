#pragma once

// Psychometric analysis of threshold-study responses: binarization per
// condition, logistic maximum-likelihood fits, threshold tables and the
// interpolation used to pick guidance amplitudes.

#include "chromavib/error.hpp"

#include <array>
#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chromavib {

enum class PerceptState { SolidColor, DifferentNotFlickering, ClearlyFlickering };

enum class Condition { Awareness, Discomfort };

std::string_view to_string(PerceptState s);
std::string_view to_string(Condition c);
PerceptState parse_percept_state(std::string_view s);
Condition parse_condition(std::string_view s);

inline constexpr std::array<double, 3> kDiametersMm{60.0, 80.0, 100.0};
inline constexpr std::array<double, 4> kEccentricitiesMm{0.0, 71.0, 121.0, 171.0};
inline constexpr std::array<double, 2> kThresholdProbabilities{0.5, 0.75};

struct TrialResponse {
    double r = 0.0;
    double d_mm = 0.0;
    double l_mm = 0.0;
    PerceptState state = PerceptState::SolidColor;
    std::optional<int> location_chosen;  // 1..4, peripheral trials only
    std::optional<int> location_actual;
    std::string participant;
    double latency_s = 0.0;

    friend bool operator==(const TrialResponse&, const TrialResponse&) = default;
};

/// Whether a response counts as a detection under `condition`.
bool is_positive(const TrialResponse& t, Condition condition);

/// Peripheral trials where the participant picked the wrong circle are
/// re-labelled SolidColor: a mislocated report is not a detection.
std::vector<TrialResponse> filter_peripheral_misses(std::span<const TrialResponse> responses);

struct PsychometricCurve {
    double midpoint = 0.0;  // r at p = 0.5
    double slope = 0.0;     // logistic steepness per unit r
    int n_trials = 0;
    int n_levels = 0;
    Condition condition = Condition::Awareness;
    bool separated = false;  // data perfectly separable; slope is the cap
    int iterations = 0;
};

struct FitOptions {
    int max_iterations = 100;
    double gradient_tolerance = 1e-10;
    int max_step_halvings = 40;
    /// Slope reported when the data are perfectly separable and the
    /// likelihood has no finite maximizer.
    double separation_slope = 1e3;
};

/// Two-parameter logistic fit p(r) = 1 / (1 + exp(−slope·(r − midpoint))) by
/// maximum likelihood (Newton with step halving). All responses must share
/// one (d, l) cell.
PsychometricCurve fit_curve(std::span<const TrialResponse> responses, Condition condition,
                            const FitOptions& options = {});

/// r at which the fitted curve reaches probability p.
double threshold_at(const PsychometricCurve& curve, double p);

struct ThresholdKey {
    Condition condition = Condition::Awareness;
    double probability = 0.5;
    double d_mm = 0.0;
    double l_mm = 0.0;

    friend auto operator<=>(const ThresholdKey&, const ThresholdKey&) = default;
};

class ThresholdTable {
public:
    void set(const ThresholdKey& key, double r_th);
    std::optional<double> find(const ThresholdKey& key) const;
    const std::map<ThresholdKey, double>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }

    /// Distinct d values present in the table.
    std::vector<double> diameters() const;

    /// Cells where r_th increases with d at fixed (condition, probability, l).
    /// Thresholds are expected to fall as the stimulus grows; violations are
    /// reported, not rejected.
    std::vector<std::string> trend_warnings() const;

    friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;

private:
    std::map<ThresholdKey, double> entries_;
};

struct CellDiagnostic {
    double d_mm = 0.0;
    double l_mm = 0.0;
    Condition condition = Condition::Awareness;
    std::string message;
};

struct TableBuild {
    ThresholdTable table;
    std::vector<CellDiagnostic> diagnostics;
    std::vector<std::pair<ThresholdKey, PsychometricCurve>> curves;  // key.probability unused (0.5)
};

/// Pooled fits for every (d, l) cell present in `responses`, both conditions,
/// at 50 % and 75 %. Degenerate cells are left out of the table and reported.
TableBuild build_table(std::span<const TrialResponse> responses, const FitOptions& options = {});

/// Standard-design (d, l) cells with no responses, formatted "d=60 l=71".
std::vector<std::string> missing_cells(std::span<const TrialResponse> responses);

/// r_th for an ROI at eccentricity l. l = 0 reads the central entry; l in
/// [71, 171] interpolates linearly between the peripheral grid entries.
double interpolate_threshold(const ThresholdTable& table, Condition condition, double probability, double d_mm,
                             double l_mm);

struct UserCalibration {
    std::string participant;
    std::map<int, double> fits;  // r -> w, r in {10, 20, 30, 40, 50}

    friend bool operator==(const UserCalibration&, const UserCalibration&) = default;
};

struct WeightLookup {
    double weight = 0.5;
    bool outside_calibration = false;
};

/// Per-user weight at amplitude r by linear interpolation of the calibration
/// fits, clamped to [0.01, 0.99]. Outside the calibrated r span the nearest
/// endpoint is returned and flagged.
WeightLookup interpolate_weight(const UserCalibration& cal, double r);

// Line-delimited response records.
void write_responses(std::ostream& out, std::span<const TrialResponse> responses);
std::vector<TrialResponse> read_responses(std::istream& in);
std::vector<TrialResponse> read_responses_file(const std::filesystem::path& path);

// Flat threshold table: `condition,probability,d_mm,l_mm,r_th`.
void write_table(std::ostream& out, const ThresholdTable& table);
ThresholdTable read_table(std::istream& in);
ThresholdTable read_table_file(const std::filesystem::path& path);

// Calibration file: JSON {"participant": ..., "fits": {"50": w, ...}}.
UserCalibration read_calibration_file(const std::filesystem::path& path);
void write_calibration(std::ostream& out, const UserCalibration& cal);

}  // namespace chromavib
