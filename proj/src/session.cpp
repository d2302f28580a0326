#include "chromavib/session.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace chromavib {

using nlohmann::json;

namespace {

// mt19937_64 output is fixed by the standard; the distributions are not, so
// draws are derived by hand to keep plans identical across toolchains.
class PlanRng {
public:
    explicit PlanRng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    std::size_t below(std::size_t n) {
        return std::min(n - 1, std::size_t(uniform() * double(n)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

constexpr std::array<GuidanceCondition, 4> kGuidanceConditions{
    GuidanceCondition::Unmodified, GuidanceCondition::UnobtrusiveVibration,
    GuidanceCondition::ObtrusiveVibration, GuidanceCondition::ExplicitCircle};

[[noreturn]] void bad_record(const std::string& what) { throw RecordFormatError(what); }

json opt_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Schedules

std::size_t ProtocolPlan::size() const noexcept {
    return kind == PlanKind::ThresholdStudy ? threshold_trials.size() : guidance_trials.size();
}

bool ProtocolPlan::break_before(int index) const noexcept {
    return break_every > 0 && index > 0 && index < int(size()) && index % break_every == 0;
}

ProtocolPlan plan_threshold_study(std::uint64_t seed) {
    ProtocolPlan plan;
    plan.kind = PlanKind::ThresholdStudy;
    plan.seed = seed;
    plan.break_every = kThresholdBreakEvery;
    for (double r : kThresholdRatios) {
        for (double d : kDiametersMm) {
            for (double l : kEccentricitiesMm) {
                plan.threshold_trials.push_back({0, r, d, l, 0});
            }
        }
    }
    PlanRng rng(seed);
    rng.shuffle(plan.threshold_trials);
    for (std::size_t i = 0; i < plan.threshold_trials.size(); ++i) {
        auto& t = plan.threshold_trials[i];
        t.index = int(i);
        if (t.l_mm > 0.0) {
            t.vibrating_index = 1 + int(rng.below(4));
        }
    }
    return plan;
}

ProtocolPlan plan_guidance_study(std::uint64_t seed, int sets) {
    if (sets <= 0) {
        throw std::invalid_argument("guidance study needs at least one image set");
    }
    ProtocolPlan plan;
    plan.kind = PlanKind::GuidanceStudy;
    plan.seed = seed;
    plan.break_every = kGuidanceBreakEvery;
    PlanRng rng(seed);
    const std::size_t rotation = rng.below(kGuidanceConditions.size());
    std::vector<int> set_order(static_cast<std::size_t>(sets));
    for (int s = 0; s < sets; ++s) set_order[std::size_t(s)] = s;
    rng.shuffle(set_order);
    for (int s : set_order) {
        std::vector<int> images{0, 1, 2, 3};
        rng.shuffle(images);
        for (int k : images) {
            const auto c = kGuidanceConditions[(std::size_t(k) + std::size_t(s) + rotation) % 4];
            plan.guidance_trials.push_back({int(plan.guidance_trials.size()), s, k, c});
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Calibration

std::string_view to_string(CalibrationInput in) {
    switch (in) {
        case CalibrationInput::Increase: return "increase";
        case CalibrationInput::Decrease: return "decrease";
        case CalibrationInput::Accept: return "accept";
    }
    return "?";
}

CalibrationInput parse_calibration_input(std::string_view s) {
    if (s == "increase") return CalibrationInput::Increase;
    if (s == "decrease") return CalibrationInput::Decrease;
    if (s == "accept") return CalibrationInput::Accept;
    throw InvalidResponse("calibration input must be increase, decrease or accept, got `" + std::string(s) + "`");
}

double CalibrationState::r() const {
    if (complete()) {
        throw SequenceViolation("calibration is complete");
    }
    return kCalibrationRatios[r_index];
}

CalibrationStep step_calibration(const CalibrationState& state, CalibrationInput input) {
    if (state.complete()) {
        throw SequenceViolation("calibration is complete; no further input accepted");
    }
    CalibrationStep out{state, false, std::nullopt, 0};
    auto& s = out.state;
    switch (input) {
        case CalibrationInput::Increase:
            if (s.steps >= kMaxWeightSteps) {
                out.clamped = true;
            } else {
                ++s.steps;
            }
            break;
        case CalibrationInput::Decrease:
            if (s.steps <= -kMaxWeightSteps) {
                out.clamped = true;
            } else {
                --s.steps;
            }
            break;
        case CalibrationInput::Accept: {
            CalibrationFit fit{kCalibrationRatios[s.r_index], s.steps};
            s.fits.push_back(fit);
            out.accepted = fit;
            out.inverted_flash_ms = kInvertedFlashMs;
            ++s.r_index;
            s.steps = 0;
            break;
        }
    }
    return out;
}

UserCalibration to_user_calibration(const CalibrationState& state, const std::string& participant) {
    UserCalibration cal;
    cal.participant = participant;
    for (const auto& f : state.fits) {
        cal.fits[int(std::lround(f.r))] = f.w();
    }
    return cal;
}

// ---------------------------------------------------------------------------
// Records

void validate_likert(const LikertRatings& l) {
    auto ok = [](int v) { return v >= 1 && v <= 7; };
    if (!ok(l.naturalness) || !ok(l.obtrusiveness)) {
        throw InvalidResponse("Likert ratings must be integers in 1..7 (got naturalness " +
                              std::to_string(l.naturalness) + ", obtrusiveness " +
                              std::to_string(l.obtrusiveness) + ")");
    }
}

TrialResponse ThresholdRecord::to_response(const std::string& participant) const {
    TrialResponse t;
    t.r = spec.r;
    t.d_mm = spec.d_mm;
    t.l_mm = spec.l_mm;
    t.state = state;
    if (spec.l_mm > 0.0) {
        t.location_chosen = location;
        t.location_actual = spec.vibrating_index;
    }
    t.participant = participant;
    t.latency_s = latency_s();
    return t;
}

GuidanceOutcome GuidanceRecord::outcome() const {
    GuidanceOutcome o;
    if (!timeout) {
        o.latency_s = t_response - t_search;
    }
    o.correct = correct;
    return o;
}

json to_json(const ThresholdRecord& r) {
    return json{{"kind", "threshold"},
                {"index", r.spec.index},
                {"r", r.spec.r},
                {"d_mm", r.spec.d_mm},
                {"l_mm", r.spec.l_mm},
                {"vibrating_index", r.spec.vibrating_index},
                {"state", to_string(r.state)},
                {"location", opt_int(r.location)},
                {"t", {{"presented", r.t_presented}, {"response", r.t_response}}}};
}

json to_json(const GuidanceRecord& r) {
    json j{{"kind", "guidance"},
           {"index", r.spec.index},
           {"image_set", r.spec.image_set},
           {"image_index", r.spec.image_index},
           {"condition", to_string(r.spec.condition)},
           {"image", r.image},
           {"roi",
            {{"cx_px", r.roi.cx_px},
             {"cy_px", r.roi.cy_px},
             {"roi_diameter_mm", r.roi.roi_diameter_mm},
             {"vibration_diameter_mm", r.roi.vibration_diameter_mm}}},
           {"r", r.r},
           {"w", r.w},
           {"t",
            {{"fixation", r.t_fixation},
             {"target", r.t_target},
             {"search", r.t_search},
             {"response", r.t_response}}},
           {"correct", r.correct},
           {"timeout", r.timeout},
           {"completion_s", r.completion_s()},
           {"likert", {{"naturalness", r.likert.naturalness}, {"obtrusiveness", r.likert.obtrusiveness}}}};
    j["click"] = r.click ? json{{"x_px", r.click->x}, {"y_px", r.click->y}} : json(nullptr);
    return j;
}

json to_json(const CalibrationFit& f, int index) {
    return json{{"kind", "calibration"}, {"index", index}, {"r", f.r}, {"steps", f.steps}, {"w", f.w()}};
}

ThresholdRecord threshold_record_from_json(const json& j) {
    try {
        ThresholdRecord r;
        r.spec.index = j.at("index").get<int>();
        r.spec.r = j.at("r").get<double>();
        r.spec.d_mm = j.at("d_mm").get<double>();
        r.spec.l_mm = j.at("l_mm").get<double>();
        r.spec.vibrating_index = j.at("vibrating_index").get<int>();
        r.state = parse_percept_state(j.at("state").get<std::string>());
        if (!j.at("location").is_null()) r.location = j["location"].get<int>();
        r.t_presented = j.at("t").at("presented").get<double>();
        r.t_response = j.at("t").at("response").get<double>();
        if (!(r.t_response > r.t_presented)) bad_record("threshold record timestamps are not increasing");
        if ((r.spec.l_mm > 0.0) != r.location.has_value()) {
            bad_record("threshold record location must be present exactly for peripheral trials");
        }
        return r;
    } catch (const json::exception& e) {
        bad_record(std::string("threshold record: ") + e.what());
    } catch (const std::invalid_argument& e) {
        bad_record(std::string("threshold record: ") + e.what());
    }
}

GuidanceRecord guidance_record_from_json(const json& j) {
    try {
        GuidanceRecord r;
        r.spec.index = j.at("index").get<int>();
        r.spec.image_set = j.at("image_set").get<int>();
        r.spec.image_index = j.at("image_index").get<int>();
        r.spec.condition = parse_guidance_condition(j.at("condition").get<std::string>());
        r.image = j.at("image").get<std::string>();
        const auto& roi = j.at("roi");
        r.roi = {roi.at("cx_px").get<double>(), roi.at("cy_px").get<double>(),
                 roi.at("roi_diameter_mm").get<double>(), roi.at("vibration_diameter_mm").get<double>()};
        r.r = j.at("r").get<double>();
        r.w = j.at("w").get<double>();
        const auto& t = j.at("t");
        r.t_fixation = t.at("fixation").get<double>();
        r.t_target = t.at("target").get<double>();
        r.t_search = t.at("search").get<double>();
        r.t_response = t.at("response").get<double>();
        if (!j.at("click").is_null()) {
            r.click = Point2{j["click"].at("x_px").get<double>(), j["click"].at("y_px").get<double>()};
        }
        r.correct = j.at("correct").get<bool>();
        r.timeout = j.at("timeout").get<bool>();
        r.likert = {j.at("likert").at("naturalness").get<int>(), j.at("likert").at("obtrusiveness").get<int>()};
        if (!(r.t_fixation < r.t_target && r.t_target < r.t_search && r.t_search < r.t_response)) {
            bad_record("guidance record timestamps are not strictly increasing");
        }
        if (r.timeout == r.click.has_value()) {
            bad_record("guidance record must have a click unless it timed out");
        }
        try {
            validate_likert(r.likert);
        } catch (const InvalidResponse& e) {
            bad_record(e.what());
        }
        return r;
    } catch (const json::exception& e) {
        bad_record(std::string("guidance record: ") + e.what());
    } catch (const std::invalid_argument& e) {
        bad_record(std::string("guidance record: ") + e.what());
    }
}

CalibrationFit calibration_fit_from_json(const json& j) {
    try {
        CalibrationFit f{j.at("r").get<double>(), j.at("steps").get<int>()};
        if (std::abs(f.steps) > kMaxWeightSteps) bad_record("calibration steps out of range");
        return f;
    } catch (const json::exception& e) {
        bad_record(std::string("calibration record: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Threshold trial

ThresholdTrial::ThresholdTrial(ThresholdTrialSpec spec, double now) : spec_(spec), opened_(now) {}

const ThresholdRecord& ThresholdTrial::respond(PerceptState state, std::optional<int> location, double now) {
    if (phase_ != ThresholdPhase::Presentation) {
        throw SequenceViolation("threshold trial " + std::to_string(spec_.index) + " is already answered");
    }
    const bool peripheral = spec_.l_mm > 0.0;
    if (peripheral && !location) {
        throw InvalidResponse("peripheral trial needs the location (1..4) of the vibrating circle");
    }
    if (!peripheral && location) {
        throw InvalidResponse("central trial takes no location");
    }
    if (location && (*location < 1 || *location > 4)) {
        throw InvalidResponse("location must be 1..4");
    }
    if (!(now > opened_)) {
        throw SequenceViolation("response precedes stimulus presentation");
    }
    record_ = ThresholdRecord{spec_, state, location, 0.0, now - opened_};
    phase_ = ThresholdPhase::Sealed;
    return *record_;
}

// ---------------------------------------------------------------------------
// Guidance trial

std::string_view to_string(GuidancePhase p) {
    switch (p) {
        case GuidancePhase::Fixation: return "fixation";
        case GuidancePhase::Target: return "target";
        case GuidancePhase::Search: return "search";
        case GuidancePhase::Questionnaire: return "questionnaire";
        case GuidancePhase::Sealed: return "sealed";
    }
    return "?";
}

GuidanceTrial::GuidanceTrial(GuidanceTrialSpec spec, std::string image, RoiSpec roi, Circle roi_circle, double r,
                             double w, double now, GuidanceTiming timing)
    : roi_circle_(roi_circle), timing_(timing), opened_(now) {
    if (!(timing.fixation_s > 0.0) || !(timing.search_limit_s > 0.0)) {
        throw std::invalid_argument("phase durations must be positive");
    }
    rec_.spec = spec;
    rec_.image = std::move(image);
    rec_.roi = roi;
    rec_.r = r;
    rec_.w = w;
}

void GuidanceTrial::tick(double now) {
    if (phase_ == GuidancePhase::Fixation && rel(now) >= timing_.fixation_s) {
        rec_.t_target = rec_.t_fixation + timing_.fixation_s;
        phase_ = GuidancePhase::Target;
    }
    if (phase_ == GuidancePhase::Search && rel(now) >= rec_.t_search + timing_.search_limit_s) {
        rec_.t_response = rec_.t_search + timing_.search_limit_s;
        rec_.timeout = true;
        rec_.correct = false;
        phase_ = GuidancePhase::Questionnaire;
    }
}

void GuidanceTrial::require(GuidancePhase p, const char* what) const {
    if (phase_ != p) {
        throw SequenceViolation(std::string(what) + " is not accepted in the " + std::string(to_string(phase_)) +
                                " phase");
    }
}

void GuidanceTrial::confirm_target(double now) {
    tick(now);
    require(GuidancePhase::Target, "target confirmation");
    if (!(rel(now) > rec_.t_target)) {
        throw SequenceViolation("target confirmation precedes target presentation");
    }
    rec_.t_search = rel(now);
    phase_ = GuidancePhase::Search;
}

void GuidanceTrial::click(Point2 p, double now) {
    tick(now);
    require(GuidancePhase::Search, "a search click");
    if (!(rel(now) > rec_.t_search)) {
        throw SequenceViolation("click precedes search start");
    }
    rec_.t_response = rel(now);
    rec_.click = p;
    rec_.correct = std::hypot(p.x - roi_circle_.cx, p.y - roi_circle_.cy) <= roi_circle_.diameter / 2.0;
    phase_ = GuidancePhase::Questionnaire;
}

const GuidanceRecord& GuidanceTrial::rate(const LikertRatings& likert, double now) {
    tick(now);
    require(GuidancePhase::Questionnaire, "a questionnaire answer");
    validate_likert(likert);
    rec_.likert = likert;
    phase_ = GuidancePhase::Sealed;
    return rec_;
}

std::optional<double> GuidanceTrial::remaining(double now) const {
    switch (phase_) {
        case GuidancePhase::Fixation: return std::max(0.0, timing_.fixation_s - rel(now));
        case GuidancePhase::Search:
            return std::max(0.0, rec_.t_search + timing_.search_limit_s - rel(now));
        default: return std::nullopt;
    }
}

}  // namespace chromavib
