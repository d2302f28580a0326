#include "chromavib/session.hpp"
#include "chromavib/session_log.hpp"

#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

using namespace chromavib;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("chromavib-session-" + std::to_string(::getpid()) + "-" +
                                            std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

ThresholdRecord answered(const ThresholdTrialSpec& spec, double latency) {
    ThresholdTrial t(spec, 100.0);
    return t.respond(PerceptState::DifferentNotFlickering,
                     spec.l_mm > 0 ? std::optional<int>(spec.vibrating_index) : std::nullopt, 100.0 + latency);
}

GuidanceTrial guidance_trial(double now = 0.0) {
    GuidanceTrialSpec spec{3, 1, 2, GuidanceCondition::UnobtrusiveVibration};
    RoiSpec roi{500, 300, 44, 80};
    return GuidanceTrial(spec, "set1/img2.png", roi, Circle{500, 300, 180}, 36.0, 0.51, now);
}

}  // namespace

TEST_CASE("threshold plan covers every combination once") {
    const auto plan = plan_threshold_study(42);
    REQUIRE(plan.size() == 132);
    CHECK(plan.threshold_trials.size() == 132);
    std::set<std::tuple<double, double, double>> combos;
    for (std::size_t i = 0; i < plan.threshold_trials.size(); ++i) {
        const auto& t = plan.threshold_trials[i];
        CHECK(t.index == int(i));
        combos.insert({t.r, t.d_mm, t.l_mm});
        if (t.l_mm > 0) {
            CHECK(t.vibrating_index >= 1);
            CHECK(t.vibrating_index <= 4);
        } else {
            CHECK(t.vibrating_index == 0);
        }
    }
    CHECK(combos.size() == 132);
    CHECK(plan.break_every == 10);
    CHECK_FALSE(plan.break_before(0));
    CHECK(plan.break_before(10));
    CHECK_FALSE(plan.break_before(11));
}

TEST_CASE("plans are deterministic per seed") {
    CHECK(plan_threshold_study(7) == plan_threshold_study(7));
    CHECK_FALSE(plan_threshold_study(7) == plan_threshold_study(8));
    CHECK(plan_guidance_study(7) == plan_guidance_study(7));
    CHECK_FALSE(plan_guidance_study(7).guidance_trials == plan_guidance_study(9).guidance_trials);
}

TEST_CASE("guidance plan shows each condition once per set") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto plan = plan_guidance_study(seed);
        REQUIRE(plan.guidance_trials.size() == 24);
        CHECK(plan.break_every == 6);
        std::set<std::pair<int, int>> images;
        for (int s = 0; s < 6; ++s) {
            std::set<GuidanceCondition> conds;
            std::set<int> sets;
            for (int k = 0; k < 4; ++k) {
                const auto& t = plan.guidance_trials[std::size_t(4 * s + k)];
                conds.insert(t.condition);
                sets.insert(t.image_set);
                images.insert({t.image_set, t.image_index});
            }
            CHECK(conds.size() == 4);
            CHECK(sets.size() == 1);  // sets are shown contiguously
        }
        CHECK(images.size() == 24);
    }
    // across seeds every image meets every condition
    std::set<GuidanceCondition> seen;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        for (const auto& t : plan_guidance_study(seed).guidance_trials) {
            if (t.image_set == 0 && t.image_index == 0) seen.insert(t.condition);
        }
    }
    CHECK(seen.size() == 4);
    CHECK_THROWS_AS(plan_guidance_study(1, 0), std::invalid_argument);
}

TEST_CASE("calibration steps in 0.02 increments and clamps at the bounds") {
    CalibrationState s;
    CHECK(s.r() == 50);
    CHECK(s.w() == 0.5);
    auto step = step_calibration(s, CalibrationInput::Increase);
    CHECK(step.state.w() == doctest::Approx(0.52));
    CHECK_FALSE(step.clamped);
    step = step_calibration(step.state, CalibrationInput::Decrease);
    step = step_calibration(step.state, CalibrationInput::Decrease);
    CHECK(step.state.w() == doctest::Approx(0.48));

    CalibrationState top;
    top.steps = kMaxWeightSteps;
    step = step_calibration(top, CalibrationInput::Increase);
    CHECK(step.clamped);
    CHECK(step.state.steps == kMaxWeightSteps);
    CHECK(step.state.w() == doctest::Approx(0.98));
    CalibrationState bottom;
    bottom.steps = -kMaxWeightSteps;
    CHECK(step_calibration(bottom, CalibrationInput::Decrease).clamped);
}

TEST_CASE("five accepts complete calibration") {
    CalibrationState s;
    const int adjust[5] = {1, -2, 0, 3, -1};
    for (int k = 0; k < 5; ++k) {
        CHECK(s.r() == kCalibrationRatios[std::size_t(k)]);
        for (int i = 0; i < std::abs(adjust[k]); ++i)
            s = step_calibration(s, adjust[k] > 0 ? CalibrationInput::Increase : CalibrationInput::Decrease).state;
        const auto st = step_calibration(s, CalibrationInput::Accept);
        REQUIRE(st.accepted);
        CHECK(st.accepted->steps == adjust[k]);
        CHECK(st.inverted_flash_ms == 100);
        CHECK(st.state.steps == 0);
        s = st.state;
    }
    CHECK(s.complete());
    CHECK_THROWS_AS(s.r(), SequenceViolation);
    CHECK_THROWS_AS(step_calibration(s, CalibrationInput::Increase), SequenceViolation);
    const auto cal = to_user_calibration(s, "P1");
    CHECK(cal.fits.size() == 5);
    CHECK(cal.fits.at(50) == doctest::Approx(0.52));
    CHECK(cal.fits.at(40) == doctest::Approx(0.46));
    CHECK(cal.fits.at(10) == doctest::Approx(0.48));
    CHECK(parse_calibration_input("accept") == CalibrationInput::Accept);
    CHECK_THROWS(parse_calibration_input("sideways"));
}

TEST_CASE("threshold trial validates its answer") {
    const ThresholdTrialSpec central{0, 10, 80, 0, 0};
    const ThresholdTrialSpec peripheral{1, 10, 80, 71, 2};
    ThresholdTrial c(central, 5.0);
    CHECK_THROWS_AS(c.respond(PerceptState::SolidColor, 1, 6.0), InvalidResponse);
    const auto& rec = c.respond(PerceptState::SolidColor, std::nullopt, 6.5);
    CHECK(rec.latency_s() == 1.5);
    CHECK(c.phase() == ThresholdPhase::Sealed);
    CHECK_THROWS_AS(c.respond(PerceptState::SolidColor, std::nullopt, 7.0), SequenceViolation);

    ThresholdTrial p(peripheral, 5.0);
    CHECK_THROWS_AS(p.respond(PerceptState::SolidColor, std::nullopt, 6.0), InvalidResponse);
    CHECK_THROWS_AS(p.respond(PerceptState::SolidColor, 5, 6.0), InvalidResponse);
    CHECK_THROWS_AS(p.respond(PerceptState::SolidColor, 2, 5.0), SequenceViolation);
    const auto& pr = p.respond(PerceptState::ClearlyFlickering, 3, 6.0);
    const auto tr = pr.to_response("P9");
    CHECK(tr.location_chosen == 3);
    CHECK(tr.location_actual == 2);
    CHECK(tr.participant == "P9");
}

TEST_CASE("guidance trial: click inside the ROI at 9 s") {
    auto t = guidance_trial(10.0);
    CHECK(t.phase() == GuidancePhase::Fixation);
    CHECK(*t.remaining(10.4) == doctest::Approx(0.6));
    CHECK_THROWS_AS(t.confirm_target(10.5), SequenceViolation);
    t.tick(11.0);
    CHECK(t.phase() == GuidancePhase::Target);
    CHECK_THROWS_AS(t.click({500, 300}, 11.5), SequenceViolation);
    t.confirm_target(12.0);
    CHECK(t.phase() == GuidancePhase::Search);
    t.click({560, 330}, 21.0);
    CHECK(t.phase() == GuidancePhase::Questionnaire);
    CHECK_THROWS_AS(t.rate({9, 4}, 22.0), InvalidResponse);
    CHECK(t.phase() == GuidancePhase::Questionnaire);
    const auto rec = t.rate({5, 3}, 22.0);
    CHECK(t.phase() == GuidancePhase::Sealed);
    CHECK(rec.correct);
    CHECK_FALSE(rec.timeout);
    CHECK(rec.t_fixation == 0.0);
    CHECK(rec.t_target == 1.0);
    CHECK(rec.t_search == 2.0);
    CHECK(rec.t_response == 11.0);
    CHECK(rec.completion_s() == 9.0);
    CHECK_THROWS_AS(t.rate({5, 3}, 23.0), SequenceViolation);
}

TEST_CASE("guidance trial: wrong click and timeout score the limit") {
    auto wrong = guidance_trial();
    wrong.tick(1.0);
    wrong.confirm_target(1.5);
    wrong.click({700, 300}, 5.0);
    const auto w = wrong.rate({4, 4}, 6.0);
    CHECK_FALSE(w.correct);
    CHECK(w.completion_s() == 30.0);

    auto slow = guidance_trial();
    slow.tick(1.0);
    slow.confirm_target(2.0);
    CHECK_THROWS_AS(slow.click({500, 300}, 40.0), SequenceViolation);
    CHECK(slow.phase() == GuidancePhase::Questionnaire);
    const auto rec = slow.rate({2, 6}, 41.0);
    CHECK(rec.timeout);
    CHECK_FALSE(rec.click);
    CHECK(rec.t_response == 32.0);
    CHECK(rec.completion_s() == 30.0);
}

TEST_CASE("record json round-trips and rejects bad orderings") {
    const auto spec = plan_threshold_study(3).threshold_trials[5];
    const auto rec = answered(spec, 2.25);
    CHECK(threshold_record_from_json(to_json(rec)) == rec);

    auto g = guidance_trial();
    g.tick(1.0);
    g.confirm_target(1.5);
    g.click({510, 290}, 4.0);
    const auto grec = g.rate({6, 2}, 5.0);
    CHECK(guidance_record_from_json(to_json(grec)) == grec);

    auto bad = to_json(grec);
    bad["t"]["search"] = 0.5;
    CHECK_THROWS_AS(guidance_record_from_json(bad), RecordFormatError);
    bad = to_json(grec);
    bad["likert"]["naturalness"] = 8;
    CHECK_THROWS_AS(guidance_record_from_json(bad), RecordFormatError);
    auto tbad = to_json(rec);
    tbad.erase("location");
    if (spec.l_mm > 0) CHECK_THROWS_AS(threshold_record_from_json(tbad), RecordFormatError);

    const CalibrationFit fit{30, -3};
    CHECK(calibration_fit_from_json(to_json(fit, 2)) == fit);
}

TEST_CASE("session log persists a full threshold session") {
    TempDir dir;
    const auto path = dir.path / "s.log";
    const auto plan = plan_threshold_study(11);
    std::vector<ThresholdRecord> written;
    {
        SessionLog log(path);
        for (const auto& spec : plan.threshold_trials) {
            written.push_back(answered(spec, 1.0 + spec.index * 0.01));
            log.append(to_json(written.back()));
        }
        CHECK(log.records().size() == 132);
        CHECK(log.contains("threshold", 131));
        CHECK_THROWS_AS(log.append(to_json(written[4])), DuplicateRecord);
    }
    SessionLog reopened(path);
    REQUIRE(reopened.records().size() == 132);
    CHECK(reopened.warnings().empty());
    for (std::size_t i = 0; i < written.size(); ++i) {
        CHECK(threshold_record_from_json(reopened.records()[i]) == written[i]);
    }
    CHECK(reopened.serialize() == slurp(path));
}

TEST_CASE("a torn final line is cut off with a warning") {
    TempDir dir;
    const auto path = dir.path / "s.log";
    {
        SessionLog log(path);
        log.append({{"kind", "x"}, {"index", 0}});
        log.append({{"kind", "x"}, {"index", 1}});
    }
    const auto intact = slurp(path);
    {
        std::ofstream out(path, std::ios::app | std::ios::binary);
        out << "deadbeef {\"kind\":\"x\",\"ind";
    }
    SessionLog log(path);
    CHECK(log.records().size() == 2);
    CHECK(log.warnings().size() == 1);
    CHECK(slurp(path) == intact);
    log.append({{"kind", "x"}, {"index", 2}});
    CHECK(SessionLog(path).records().size() == 3);
}

TEST_CASE("damage before the final line is a storage failure") {
    TempDir dir;
    const auto path = dir.path / "s.log";
    {
        SessionLog log(path);
        for (int i = 0; i < 3; ++i) log.append({{"kind", "x"}, {"index", i}});
    }
    auto text = slurp(path);
    const auto pos = text.find("\"index\":1");
    REQUIRE(pos != std::string::npos);
    text[pos + 8] = '7';
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << text;
    }
    CHECK_THROWS_AS(SessionLog{path}, StorageFailure);

    const auto foreign = dir.path / "other.log";
    {
        std::ofstream out(foreign);
        out << "hello\nworld\n";
    }
    CHECK_THROWS_AS(SessionLog{foreign}, StorageFailure);
}

TEST_CASE("log line encoding") {
    const nlohmann::json rec{{"kind", "k"}, {"index", 4}, {"b", 1}, {"a", 2}};
    const auto line = encode_log_line(rec);
    CHECK(line.size() > 9);
    CHECK(line[8] == ' ');
    CHECK(line.substr(9) == rec.dump());
    CHECK(*decode_log_line(line) == rec);
    auto flipped = line;
    flipped[0] = flipped[0] == '0' ? '1' : '0';
    CHECK_FALSE(decode_log_line(flipped));
    CHECK_FALSE(decode_log_line("nonsense"));
}

TEST_CASE("append rejects records without a key") {
    TempDir dir;
    SessionLog log(dir.path / "s.log");
    CHECK_THROWS(log.append({{"kind", "x"}}));
    CHECK_THROWS(log.append({{"kind", 3}, {"index", 0}}));
}
