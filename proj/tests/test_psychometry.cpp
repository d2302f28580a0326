#include "chromavib/psychometry.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace chromavib;

namespace {

using oracle::grid_mle;
using oracle::synthetic_responses;

double nll(const std::vector<TrialResponse>& d, double m, double s) { return oracle::negative_log_likelihood(d, m, s); }

TrialResponse resp(double r, PerceptState s, double d = 80, double l = 0) {
    TrialResponse t;
    t.r = r;
    t.d_mm = d;
    t.l_mm = l;
    t.state = s;
    return t;
}

ThresholdTable published_table() {
    ThresholdTable t;
    const double aw50[] = {25.22, 16.73, 14.29};
    const double aw75[] = {38.50, 35.65, 25.61};
    const double di50[] = {15.25, 12.08, 10.68};
    const double di75[] = {25.22, 16.73, 14.29};
    for (int i = 0; i < 3; ++i) {
        const double d = kDiametersMm[std::size_t(i)];
        t.set({Condition::Awareness, 0.5, d, 71}, aw50[i]);
        t.set({Condition::Awareness, 0.75, d, 71}, aw75[i]);
        t.set({Condition::Discomfort, 0.5, d, 71}, di50[i]);
        t.set({Condition::Discomfort, 0.75, d, 71}, di75[i]);
        for (double l : {0.0, 121.0, 171.0}) {
            t.set({Condition::Awareness, 0.5, d, l}, aw50[i] + l / 50 + 3);
            t.set({Condition::Awareness, 0.75, d, l}, aw75[i] + l / 50 + 3);
            t.set({Condition::Discomfort, 0.5, d, l}, di50[i] + l / 40 + 2);
            t.set({Condition::Discomfort, 0.75, d, l}, di75[i] + l / 40 + 2);
        }
    }
    return t;
}

}  // namespace

TEST_CASE("binarization per condition") {
    const auto solid = resp(10, PerceptState::SolidColor);
    const auto diff = resp(10, PerceptState::DifferentNotFlickering);
    const auto flick = resp(10, PerceptState::ClearlyFlickering);
    CHECK_FALSE(is_positive(solid, Condition::Awareness));
    CHECK(is_positive(diff, Condition::Awareness));
    CHECK(is_positive(flick, Condition::Awareness));
    CHECK_FALSE(is_positive(diff, Condition::Discomfort));
    CHECK(is_positive(flick, Condition::Discomfort));
}

TEST_CASE("mislocated peripheral detections become misses") {
    auto hit = resp(20, PerceptState::ClearlyFlickering, 80, 71);
    hit.location_actual = 3;
    hit.location_chosen = 3;
    auto miss = hit;
    miss.location_chosen = 1;
    const auto central = resp(20, PerceptState::ClearlyFlickering, 80, 0);
    const std::vector<TrialResponse> in{hit, miss, central};
    const auto out = filter_peripheral_misses(in);
    CHECK(out[0].state == PerceptState::ClearlyFlickering);
    CHECK(out[1].state == PerceptState::SolidColor);
    CHECK(out[2].state == PerceptState::ClearlyFlickering);
}

TEST_CASE("fit agrees with a grid-search likelihood maximum") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto data = synthetic_responses(20, 0.3, 40, seed);
        const auto curve = fit_curve(data, Condition::Awareness);
        const auto [m, s] = grid_mle(data);
        CHECK(curve.midpoint == doctest::Approx(m).epsilon(1e-4));
        CHECK(curve.slope == doctest::Approx(s).epsilon(1e-3));
        CHECK(curve.n_trials == int(data.size()));
        CHECK(curve.n_levels == 11);
        CHECK_FALSE(curve.separated);
        CHECK(nll(data, curve.midpoint, curve.slope) <= nll(data, m, s) + 1e-9);
    }
}

TEST_CASE("midpoint error shrinks with more trials") {
    double mae[3] = {0, 0, 0};
    const int ns[3] = {50, 200, 1000};
    for (int k = 0; k < 3; ++k) {
        for (std::uint64_t seed = 100; seed < 120; ++seed) {
            const auto curve = fit_curve(synthetic_responses(20, 0.3, ns[k], seed), Condition::Awareness);
            mae[k] += std::abs(curve.midpoint - 20) / 20.0;
        }
    }
    CHECK(mae[1] < mae[0]);
    CHECK(mae[2] < mae[1]);
    CHECK(mae[2] < 0.2);
}

TEST_CASE("threshold_at inverts the logistic") {
    PsychometricCurve c;
    c.midpoint = 20;
    c.slope = 0.3;
    CHECK(threshold_at(c, 0.5) == 20);
    CHECK(threshold_at(c, 0.75) - threshold_at(c, 0.5) == doctest::Approx(std::log(3.0) / 0.3).epsilon(1e-12));
    CHECK_THROWS_AS(threshold_at(c, 0.0), ProbabilityOutOfRange);
    CHECK_THROWS_AS(threshold_at(c, 1.0), ProbabilityOutOfRange);
}

TEST_CASE("degenerate data") {
    std::vector<TrialResponse> none;
    CHECK_THROWS_AS(fit_curve(none, Condition::Awareness), DegenerateData);
    std::vector<TrialResponse> one_level{resp(10, PerceptState::SolidColor), resp(10, PerceptState::ClearlyFlickering)};
    CHECK_THROWS_AS(fit_curve(one_level, Condition::Awareness), DegenerateData);
    std::vector<TrialResponse> all_neg{resp(0, PerceptState::SolidColor), resp(50, PerceptState::SolidColor)};
    CHECK_THROWS_AS(fit_curve(all_neg, Condition::Awareness), DegenerateData);
    std::vector<TrialResponse> all_pos{resp(0, PerceptState::ClearlyFlickering), resp(50, PerceptState::ClearlyFlickering)};
    CHECK_THROWS_AS(fit_curve(all_pos, Condition::Awareness), DegenerateData);
    std::vector<TrialResponse> falling{resp(0, PerceptState::ClearlyFlickering), resp(50, PerceptState::SolidColor)};
    CHECK_THROWS_AS(fit_curve(falling, Condition::Awareness), DegenerateData);
    std::vector<TrialResponse> mixed{resp(0, PerceptState::SolidColor), resp(50, PerceptState::ClearlyFlickering, 60)};
    CHECK_THROWS_AS(fit_curve(mixed, Condition::Awareness), std::invalid_argument);
}

TEST_CASE("separable data report the gap midpoint") {
    std::vector<TrialResponse> data;
    for (int r : {0, 5, 10}) data.push_back(resp(r, PerceptState::SolidColor));
    for (int r : {20, 25}) data.push_back(resp(r, PerceptState::DifferentNotFlickering));
    const auto c = fit_curve(data, Condition::Awareness);
    CHECK(c.separated);
    CHECK(c.midpoint == doctest::Approx(15.0));
    CHECK(c.slope == doctest::Approx(1e3));
}

TEST_CASE("table build covers both conditions and both probabilities") {
    std::vector<TrialResponse> data;
    for (std::uint64_t s = 0; s < 2; ++s) {
        auto part = synthetic_responses(20 + 5.0 * double(s), 0.3, 30, 7 + s, s ? 60.0 : 80.0, 0.0);
        for (auto& t : part) {
            if (t.state != PerceptState::SolidColor && t.r >= 25) t.state = PerceptState::ClearlyFlickering;
        }
        data.insert(data.end(), part.begin(), part.end());
    }
    const auto build = build_table(data);
    CHECK(build.table.find({Condition::Awareness, 0.5, 80, 0}));
    CHECK(build.table.find({Condition::Awareness, 0.75, 60, 0}));
    CHECK(build.table.find({Condition::Discomfort, 0.75, 80, 0}));
    const auto missing = missing_cells(data);
    CHECK(missing.size() == 10);
    CHECK(std::find(missing.begin(), missing.end(), "d=100 l=171") != missing.end());
}

TEST_CASE("table build reports degenerate cells instead of fitting them") {
    std::vector<TrialResponse> data;
    for (int r = 0; r <= 50; r += 5) data.push_back(resp(r, PerceptState::SolidColor, 100, 171));
    const auto build = build_table(data);
    CHECK(build.table.empty());
    REQUIRE(build.diagnostics.size() == 2);
    CHECK(build.diagnostics[0].message.rfind("absent", 0) == 0);
}

TEST_CASE("interpolation reproduces grid values and midpoints") {
    const auto t = published_table();
    for (const auto& [k, v] : t.entries()) {
        CHECK(interpolate_threshold(t, k.condition, k.probability, k.d_mm, k.l_mm) == v);
    }
    const double at121 = *t.find({Condition::Awareness, 0.5, 60, 121});
    CHECK(interpolate_threshold(t, Condition::Awareness, 0.5, 60, 96) == doctest::Approx((25.22 + at121) / 2).epsilon(1e-15));
    const double at171 = *t.find({Condition::Discomfort, 0.75, 80, 171});
    CHECK(interpolate_threshold(t, Condition::Discomfort, 0.75, 80, 146) ==
          doctest::Approx((*t.find({Condition::Discomfort, 0.75, 80, 121}) + at171) / 2).epsilon(1e-15));
    CHECK_THROWS_AS(interpolate_threshold(t, Condition::Awareness, 0.5, 80, 200), OutsideInterpolationRange);
    CHECK_THROWS_AS(interpolate_threshold(t, Condition::Awareness, 0.5, 80, 40), OutsideInterpolationRange);
    CHECK_THROWS_AS(interpolate_threshold(t, Condition::Awareness, 0.5, 70, 71), UnknownDiameter);
    ThresholdTable sparse;
    sparse.set({Condition::Awareness, 0.5, 80, 71}, 10);
    CHECK_THROWS_AS(interpolate_threshold(sparse, Condition::Awareness, 0.5, 80, 100), CellAbsent);
}

TEST_CASE("trend warnings flag thresholds that grow with d") {
    ThresholdTable t;
    t.set({Condition::Awareness, 0.5, 60, 71}, 10);
    t.set({Condition::Awareness, 0.5, 80, 71}, 12);
    CHECK(t.trend_warnings().size() == 1);
    CHECK(published_table().trend_warnings().empty());
}

TEST_CASE("weight interpolation") {
    UserCalibration cal{"P", {{10, 0.40}, {20, 0.50}, {30, 0.60}, {40, 0.62}, {50, 0.995}}};
    CHECK(interpolate_weight(cal, 15).weight == doctest::Approx(0.45));
    CHECK_FALSE(interpolate_weight(cal, 15).outside_calibration);
    CHECK(interpolate_weight(cal, 20).weight == 0.50);
    CHECK(interpolate_weight(cal, 5).weight == 0.40);
    CHECK(interpolate_weight(cal, 5).outside_calibration);
    CHECK(interpolate_weight(cal, 50).weight == 0.99);
    CHECK(interpolate_weight(cal, 60).outside_calibration);
    CHECK_THROWS_AS(interpolate_weight(UserCalibration{}, 10), std::invalid_argument);
}

TEST_CASE("response, table and calibration files round-trip") {
    auto data = synthetic_responses(20, 0.3, 2, 5, 60, 121);
    data[0].participant = "P07";
    data[0].latency_s = 1.25;
    std::stringstream rs;
    write_responses(rs, data);
    CHECK(read_responses(rs) == data);

    const auto t = published_table();
    std::stringstream ts;
    write_table(ts, t);
    CHECK(read_table(ts) == t);

    ThresholdTable one;
    one.set({Condition::Awareness, 0.5, 80, 71}, 10);
    std::stringstream bad;
    write_table(bad, one);
    bad << "awareness,0.5,80,121,-1\n";
    CHECK_THROWS_AS(read_table(bad), RecordFormatError);

    std::istringstream missing_loc(R"({"format":"chromavib-responses","version":1}
{"r":5,"d_mm":80,"l_mm":71,"state":"solid","participant":"","latency_s":0,"location_chosen":null,"location_actual":null})");
    CHECK_THROWS_AS(read_responses(missing_loc), RecordFormatError);
}
