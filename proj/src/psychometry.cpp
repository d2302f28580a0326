#include "chromavib/psychometry.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace chromavib {

using nlohmann::json;

namespace {

constexpr std::string_view kResponsesFormat = "chromavib-responses";
constexpr int kResponsesVersion = 1;
constexpr std::string_view kTableHeader = "# chromavib-thresholds v1";
constexpr double kWeightFloor = 0.01;
constexpr double kWeightCeil = 0.99;

std::string fmt_mm(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

struct Level {
    double r = 0.0;
    double n = 0.0;
    double k = 0.0;  // positives
};

double log_likelihood(const std::vector<Level>& levels, double center, double b0, double b1) {
    double ll = 0.0;
    for (const auto& lv : levels) {
        const double eta = b0 + b1 * (lv.r - center);
        // log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
        const double log_p = -std::log1p(std::exp(-eta));
        const double log_q = -std::log1p(std::exp(eta));
        if (lv.k > 0) ll += lv.k * log_p;
        if (lv.n - lv.k > 0) ll += (lv.n - lv.k) * log_q;
    }
    return ll;
}

}  // namespace

std::string_view to_string(PerceptState s) {
    switch (s) {
        case PerceptState::SolidColor: return "solid";
        case PerceptState::DifferentNotFlickering: return "different";
        case PerceptState::ClearlyFlickering: return "flicker";
    }
    return "?";
}

std::string_view to_string(Condition c) {
    return c == Condition::Awareness ? "awareness" : "discomfort";
}

PerceptState parse_percept_state(std::string_view s) {
    if (s == "solid") return PerceptState::SolidColor;
    if (s == "different") return PerceptState::DifferentNotFlickering;
    if (s == "flicker") return PerceptState::ClearlyFlickering;
    throw RecordFormatError("unknown perceptual state `" + std::string(s) + "` (solid|different|flicker)");
}

Condition parse_condition(std::string_view s) {
    if (s == "awareness") return Condition::Awareness;
    if (s == "discomfort") return Condition::Discomfort;
    throw RecordFormatError("unknown condition `" + std::string(s) + "` (awareness|discomfort)");
}

bool is_positive(const TrialResponse& t, Condition condition) {
    if (condition == Condition::Awareness) {
        return t.state != PerceptState::SolidColor;
    }
    return t.state == PerceptState::ClearlyFlickering;
}

std::vector<TrialResponse> filter_peripheral_misses(std::span<const TrialResponse> responses) {
    std::vector<TrialResponse> out(responses.begin(), responses.end());
    for (auto& t : out) {
        if (t.l_mm > 0.0 && t.location_chosen != t.location_actual) {
            t.state = PerceptState::SolidColor;
        }
    }
    return out;
}

PsychometricCurve fit_curve(std::span<const TrialResponse> responses, Condition condition,
                            const FitOptions& options) {
    if (responses.empty()) {
        throw DegenerateData("no responses to fit");
    }
    const double d = responses.front().d_mm;
    const double l = responses.front().l_mm;
    std::map<double, Level> by_r;
    double max_negative = -std::numeric_limits<double>::infinity();
    double min_positive = std::numeric_limits<double>::infinity();
    double min_negative = std::numeric_limits<double>::infinity();
    double max_positive = -std::numeric_limits<double>::infinity();
    // min_negative/max_positive catch data separated the wrong way round.
    for (const auto& t : responses) {
        if (t.d_mm != d || t.l_mm != l) {
            throw std::invalid_argument("fit_curve: responses mix several (d, l) cells");
        }
        auto& lv = by_r[t.r];
        lv.r = t.r;
        lv.n += 1.0;
        if (is_positive(t, condition)) {
            lv.k += 1.0;
            min_positive = std::min(min_positive, t.r);
            max_positive = std::max(max_positive, t.r);
        } else {
            max_negative = std::max(max_negative, t.r);
            min_negative = std::min(min_negative, t.r);
        }
    }

    PsychometricCurve curve;
    curve.condition = condition;
    curve.n_trials = int(responses.size());
    curve.n_levels = int(by_r.size());

    const std::string cell = "cell d=" + fmt_mm(d) + " l=" + fmt_mm(l) + " (" + std::string(to_string(condition)) + ")";
    if (by_r.size() < 2) {
        throw DegenerateData(cell + ": need at least two distinct r levels");
    }
    if (!std::isfinite(min_positive)) {
        throw DegenerateData(cell + ": no positive responses");
    }
    if (!std::isfinite(max_negative)) {
        throw DegenerateData(cell + ": every response is positive");
    }
    if (max_negative <= min_positive) {
        // Perfect (or quasi-perfect) separation: the likelihood keeps rising
        // as the slope grows, so report the gap center with a capped slope.
        curve.midpoint = 0.5 * (max_negative + min_positive);
        curve.slope = options.separation_slope;
        curve.separated = true;
        return curve;
    }
    if (max_positive <= min_negative) {
        throw DegenerateData(cell + ": detections decrease with r");
    }

    std::vector<Level> levels;
    double total = 0.0;
    double positives = 0.0;
    double weighted_r = 0.0;
    for (const auto& [r, lv] : by_r) {
        levels.push_back(lv);
        total += lv.n;
        positives += lv.k;
        weighted_r += lv.n * r;
    }
    const double center = weighted_r / total;
    const double rate = positives / total;
    double b0 = std::log(rate / (1.0 - rate));
    double b1 = 0.0;
    double ll = log_likelihood(levels, center, b0, b1);

    bool converged = false;
    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (const auto& lv : levels) {
            const double x = lv.r - center;
            const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x)));
            const double resid = lv.k - lv.n * p;
            const double wgt = lv.n * p * (1.0 - p);
            g0 += resid;
            g1 += resid * x;
            h00 += wgt;
            h01 += wgt * x;
            h11 += wgt * x * x;
        }
        if (std::max(std::abs(g0), std::abs(g1)) / total <= options.gradient_tolerance) {
            converged = true;
            break;
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 0.0) || !std::isfinite(det)) {
            break;
        }
        // Newton direction: (-H)^-1 g for the concave log-likelihood.
        const double s0 = (h11 * g0 - h01 * g1) / det;
        const double s1 = (h00 * g1 - h01 * g0) / det;
        // Newton decrement: once the predicted gain is below the rounding
        // level of the log-likelihood the line search can no longer see
        // progress, so take the final full step and stop.
        if (g0 * s0 + g1 * s1 <= 1e-12 * (1.0 + std::abs(ll))) {
            b0 += s0;
            b1 += s1;
            converged = true;
            break;
        }
        double step = 1.0;
        bool improved = false;
        for (int h = 0; h <= options.max_step_halvings; ++h, step *= 0.5) {
            const double nb0 = b0 + step * s0;
            const double nb1 = b1 + step * s1;
            const double nll = log_likelihood(levels, center, nb0, nb1);
            if (nll >= ll) {
                b0 = nb0;
                b1 = nb1;
                ll = nll;
                improved = true;
                break;
            }
        }
        if (!improved) {
            // At the optimum to machine precision; re-test the gradient.
            converged = std::max(std::abs(g0), std::abs(g1)) / total <= 1e3 * options.gradient_tolerance;
            break;
        }
    }
    curve.iterations = iter;
    if (!converged) {
        throw ConvergenceFailure(cell + ": logistic fit did not converge within " +
                                 std::to_string(options.max_iterations) + " iterations");
    }
    if (!(b1 > 0.0)) {
        throw DegenerateData(cell + ": fitted slope is not positive");
    }
    curve.slope = b1;
    curve.midpoint = center - b0 / b1;
    return curve;
}

double threshold_at(const PsychometricCurve& curve, double p) {
    if (!(p > 0.0 && p < 1.0)) {
        std::ostringstream os;
        os << "probability " << p << " must lie strictly between 0 and 1";
        throw ProbabilityOutOfRange(os.str());
    }
    return curve.midpoint + std::log(p / (1.0 - p)) / curve.slope;
}

void ThresholdTable::set(const ThresholdKey& key, double r_th) {
    entries_[key] = r_th;
}

std::optional<double> ThresholdTable::find(const ThresholdKey& key) const {
    if (auto it = entries_.find(key); it != entries_.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::vector<double> ThresholdTable::diameters() const {
    std::set<double> ds;
    for (const auto& [k, v] : entries_) {
        ds.insert(k.d_mm);
    }
    return {ds.begin(), ds.end()};
}

std::vector<std::string> ThresholdTable::trend_warnings() const {
    std::vector<std::string> out;
    // entries_ is ordered by (condition, probability, d, l); regroup by l.
    std::map<std::tuple<Condition, double, double>, std::vector<std::pair<double, double>>> rows;
    for (const auto& [k, v] : entries_) {
        rows[{k.condition, k.probability, k.l_mm}].push_back({k.d_mm, v});
    }
    for (const auto& [row, values] : rows) {
        for (std::size_t i = 1; i < values.size(); ++i) {
            if (values[i].second > values[i - 1].second) {
                std::ostringstream os;
                os << to_string(std::get<0>(row)) << " p=" << std::get<1>(row) << " l=" << std::get<2>(row)
                   << ": r_th rises from " << values[i - 1].second << " (d=" << values[i - 1].first << ") to "
                   << values[i].second << " (d=" << values[i].first << ")";
                out.push_back(os.str());
            }
        }
    }
    return out;
}

TableBuild build_table(std::span<const TrialResponse> responses, const FitOptions& options) {
    std::map<std::pair<double, double>, std::vector<TrialResponse>> cells;
    for (const auto& t : responses) {
        cells[{t.d_mm, t.l_mm}].push_back(t);
    }
    TableBuild out;
    for (const auto& [cell, trials] : cells) {
        const auto [d, l] = cell;
        for (Condition c : {Condition::Awareness, Condition::Discomfort}) {
            try {
                const PsychometricCurve curve = fit_curve(trials, c, options);
                out.curves.push_back({ThresholdKey{c, 0.5, d, l}, curve});
                for (double p : kThresholdProbabilities) {
                    out.table.set({c, p, d, l}, threshold_at(curve, p));
                }
                if (curve.separated) {
                    out.diagnostics.push_back({d, l, c, "responses perfectly separated; slope capped"});
                }
            } catch (const DegenerateData& e) {
                out.diagnostics.push_back({d, l, c, std::string("absent: ") + e.what()});
            } catch (const ConvergenceFailure& e) {
                out.diagnostics.push_back({d, l, c, std::string("absent: ") + e.what()});
            }
        }
    }
    return out;
}

std::vector<std::string> missing_cells(std::span<const TrialResponse> responses) {
    std::set<std::pair<double, double>> present;
    for (const auto& t : responses) {
        present.insert({t.d_mm, t.l_mm});
    }
    std::vector<std::string> out;
    for (double d : kDiametersMm) {
        for (double l : kEccentricitiesMm) {
            if (!present.contains({d, l})) {
                out.push_back("d=" + fmt_mm(d) + " l=" + fmt_mm(l));
            }
        }
    }
    return out;
}

double interpolate_threshold(const ThresholdTable& table, Condition condition, double probability, double d_mm,
                             double l_mm) {
    const auto ds = table.diameters();
    if (std::find(ds.begin(), ds.end(), d_mm) == ds.end()) {
        throw UnknownDiameter("d=" + fmt_mm(d_mm) + " mm is not a diameter in the threshold table");
    }
    auto lookup = [&](double l) {
        const ThresholdKey key{condition, probability, d_mm, l};
        if (auto v = table.find(key)) {
            return *v;
        }
        std::ostringstream os;
        os << "threshold cell " << to_string(condition) << " p=" << probability << " d=" << d_mm << " l=" << l
           << " is absent";
        throw CellAbsent(os.str());
    };
    constexpr double kNear = kEccentricitiesMm[1];
    constexpr double kFar = kEccentricitiesMm[3];
    if (l_mm == 0.0) {
        return lookup(0.0);
    }
    if (!(l_mm >= kNear && l_mm <= kFar)) {
        throw OutsideInterpolationRange("eccentricity l=" + fmt_mm(l_mm) +
                                        " mm is outside the supported range (0 or 71..171 mm)");
    }
    for (std::size_t i = 1; i + 1 < kEccentricitiesMm.size(); ++i) {
        const double l0 = kEccentricitiesMm[i];
        const double l1 = kEccentricitiesMm[i + 1];
        if (l_mm == l0) return lookup(l0);
        if (l_mm == l1) return lookup(l1);
        if (l_mm > l0 && l_mm < l1) {
            const double v0 = lookup(l0);
            const double v1 = lookup(l1);
            const double t = (l_mm - l0) / (l1 - l0);
            return (1.0 - t) * v0 + t * v1;
        }
    }
    throw OutsideInterpolationRange("eccentricity l=" + fmt_mm(l_mm) + " mm could not be bracketed");
}

WeightLookup interpolate_weight(const UserCalibration& cal, double r) {
    if (cal.fits.empty()) {
        throw std::invalid_argument("calibration for `" + cal.participant + "` has no fitted weights");
    }
    auto clamp = [](double w) { return std::clamp(w, kWeightFloor, kWeightCeil); };
    const auto& fits = cal.fits;
    const double lo_r = fits.begin()->first;
    const double hi_r = fits.rbegin()->first;
    if (r < lo_r) return {clamp(fits.begin()->second), true};
    if (r > hi_r) return {clamp(fits.rbegin()->second), true};
    auto upper = fits.lower_bound(int(std::ceil(r)));
    if (double(upper->first) == r || upper == fits.begin()) {
        return {clamp(upper->second), false};
    }
    auto lower = std::prev(upper);
    const double r0 = lower->first;
    const double r1 = upper->first;
    const double w = (lower->second * (r1 - r) + upper->second * (r - r0)) / (r1 - r0);
    return {clamp(w), false};
}

void write_responses(std::ostream& out, std::span<const TrialResponse> responses) {
    out << json{{"format", kResponsesFormat}, {"version", kResponsesVersion}}.dump() << '\n';
    for (const auto& t : responses) {
        json j{{"r", t.r},
               {"d_mm", t.d_mm},
               {"l_mm", t.l_mm},
               {"state", to_string(t.state)},
               {"participant", t.participant},
               {"latency_s", t.latency_s}};
        j["location_chosen"] = t.location_chosen ? json(*t.location_chosen) : json(nullptr);
        j["location_actual"] = t.location_actual ? json(*t.location_actual) : json(nullptr);
        out << j.dump() << '\n';
    }
}

std::vector<TrialResponse> read_responses(std::istream& in) {
    std::string line;
    int line_no = 0;
    std::vector<TrialResponse> out;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "responses:" + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw RecordFormatError(where + e.what());
        }
        if (!header_seen) {
            if (j.value("format", "") != kResponsesFormat) {
                throw RecordFormatError(where + "missing `chromavib-responses` header");
            }
            if (j.value("version", 0) != kResponsesVersion) {
                throw RecordFormatError(where + "unsupported responses version");
            }
            header_seen = true;
            continue;
        }
        try {
            TrialResponse t;
            t.r = j.at("r").get<double>();
            t.d_mm = j.at("d_mm").get<double>();
            t.l_mm = j.at("l_mm").get<double>();
            t.state = parse_percept_state(j.at("state").get<std::string>());
            t.participant = j.value("participant", "");
            t.latency_s = j.value("latency_s", 0.0);
            if (j.contains("location_chosen") && !j["location_chosen"].is_null())
                t.location_chosen = j["location_chosen"].get<int>();
            if (j.contains("location_actual") && !j["location_actual"].is_null())
                t.location_actual = j["location_actual"].get<int>();
            const bool peripheral = t.l_mm > 0.0;
            if (peripheral != t.location_actual.has_value()) {
                throw RecordFormatError("location fields must be present exactly when l > 0");
            }
            out.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw RecordFormatError(where + e.what());
        } catch (const RecordFormatError& e) {
            throw RecordFormatError(where + e.what());
        }
    }
    if (!header_seen) {
        throw RecordFormatError("responses: empty input");
    }
    return out;
}

std::vector<TrialResponse> read_responses_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw RecordFormatError("cannot open responses file " + path.string());
    }
    return read_responses(in);
}

void write_table(std::ostream& out, const ThresholdTable& table) {
    out << kTableHeader << '\n' << "condition,probability,d_mm,l_mm,r_th\n";
    out << std::setprecision(17);
    for (const auto& [k, v] : table.entries()) {
        out << to_string(k.condition) << ',' << k.probability << ',' << k.d_mm << ',' << k.l_mm << ',' << v << '\n';
    }
}

ThresholdTable read_table(std::istream& in) {
    ThresholdTable table;
    std::string line;
    int line_no = 0;
    bool columns_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        if (!columns_seen) {
            if (line != "condition,probability,d_mm,l_mm,r_th") {
                throw RecordFormatError("thresholds:" + std::to_string(line_no) + ": unexpected column header");
            }
            columns_seen = true;
            continue;
        }
        std::istringstream fields(line);
        std::string cond, prob, d, l, r;
        if (!std::getline(fields, cond, ',') || !std::getline(fields, prob, ',') || !std::getline(fields, d, ',') ||
            !std::getline(fields, l, ',') || !std::getline(fields, r)) {
            throw RecordFormatError("thresholds:" + std::to_string(line_no) + ": expected 5 columns");
        }
        try {
            const double r_th = std::stod(r);
            if (!(r_th > 0.0)) {
                throw RecordFormatError("thresholds:" + std::to_string(line_no) + ": r_th must be positive");
            }
            table.set({parse_condition(cond), std::stod(prob), std::stod(d), std::stod(l)}, r_th);
        } catch (const std::logic_error&) {
            throw RecordFormatError("thresholds:" + std::to_string(line_no) + ": malformed number");
        }
    }
    if (!columns_seen) {
        throw RecordFormatError("thresholds: empty input");
    }
    return table;
}

ThresholdTable read_table_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw RecordFormatError("cannot open threshold table " + path.string());
    }
    return read_table(in);
}

UserCalibration read_calibration_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw RecordFormatError("cannot open calibration " + path.string());
    }
    try {
        const json j = json::parse(in);
        UserCalibration cal;
        cal.participant = j.value("participant", "");
        for (const auto& [r, w] : j.at("fits").items()) {
            const double wv = w.get<double>();
            if (!(wv > 0.0 && wv < 1.0)) {
                throw RecordFormatError("calibration weight for r=" + r + " is outside (0, 1)");
            }
            cal.fits[std::stoi(r)] = wv;
        }
        return cal;
    } catch (const json::exception& e) {
        throw RecordFormatError("calibration " + path.string() + ": " + e.what());
    }
}

void write_calibration(std::ostream& out, const UserCalibration& cal) {
    json fits = json::object();
    for (const auto& [r, w] : cal.fits) {
        fits[std::to_string(r)] = w;
    }
    out << json{{"participant", cal.participant}, {"fits", fits}}.dump(2) << '\n';
}

}  // namespace chromavib
