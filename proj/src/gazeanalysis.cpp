#include "chromavib/gazeanalysis.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>

namespace chromavib {

using nlohmann::json;

namespace {

constexpr double kCollinearEps = 1e-9;
constexpr double kMinHomogeneousW = 1e-12;

// Twice the signed triangle area, relative to the squared extent of the set.
bool any_three_collinear(const std::array<Point2, 4>& pts) {
    double extent = 0.0;
    for (const auto& a : pts) {
        for (const auto& b : pts) {
            extent = std::max(extent, std::hypot(a.x - b.x, a.y - b.y));
        }
    }
    if (!(extent > 0.0)) {
        return true;
    }
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            for (int k = j + 1; k < 4; ++k) {
                const auto& a = pts[std::size_t(i)];
                const auto& b = pts[std::size_t(j)];
                const auto& c = pts[std::size_t(k)];
                const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if (std::abs(cross) <= kCollinearEps * extent * extent) {
                    return true;
                }
            }
        }
    }
    return false;
}

// Similarity that moves the centroid to the origin and sets the mean distance
// to sqrt(2).
Eigen::Matrix3d normalizer(const std::array<Point2, 4>& pts) {
    double mx = 0.0, my = 0.0;
    for (const auto& p : pts) {
        mx += p.x;
        my += p.y;
    }
    mx /= 4.0;
    my /= 4.0;
    double mean = 0.0;
    for (const auto& p : pts) {
        mean += std::hypot(p.x - mx, p.y - my);
    }
    mean /= 4.0;
    const double s = std::sqrt(2.0) / mean;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
}

Point2 transform(const Eigen::Matrix3d& t, Point2 p) {
    const Eigen::Vector3d v = t * Eigen::Vector3d(p.x, p.y, 1.0);
    return {v.x() / v.z(), v.y() / v.z()};
}

std::array<Point2, 4> read_quad(const json& j) {
    if (!j.is_array() || j.size() != 4) {
        throw json::type_error::create(302, "expected 4 corner points", &j);
    }
    std::array<Point2, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = {j[i].at(0).get<double>(), j[i].at(1).get<double>()};
    }
    return out;
}

template <typename F>
void for_each_record(std::istream& in, const char* what, F&& f) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        try {
            f(json::parse(line));
        } catch (const json::exception& e) {
            throw RecordFormatError(std::string(what) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

}  // namespace

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) {
    if (m_[8] == 0.0) {
        throw DegenerateConfiguration("homography cannot be normalized: bottom-right entry is 0");
    }
    const double s = m_[8];
    for (auto& v : m_) {
        v /= s;
    }
}

std::optional<Point2> Homography::apply(Point2 p) const {
    const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
    if (std::abs(w) < kMinHomogeneousW) {
        return std::nullopt;
    }
    return Point2{(m_[0] * p.x + m_[1] * p.y + m_[2]) / w, (m_[3] * p.x + m_[4] * p.y + m_[5]) / w};
}

double Homography::determinant() const {
    const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> m(m_.data());
    return m.determinant();
}

Homography Homography::inverse() const {
    const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> m(m_.data());
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> inv;
    bool invertible = false;
    double det = 0.0;
    m.computeInverseAndDetWithCheck(inv, det, invertible, 1e-14);
    if (!invertible) {
        throw DegenerateConfiguration("homography is singular");
    }
    std::array<double, 9> out{};
    std::copy(inv.data(), inv.data() + 9, out.begin());
    return Homography(out);
}

Homography estimate_homography(const MarkerObservation& obs) {
    if (any_three_collinear(obs.camera) || any_three_collinear(obs.display)) {
        throw DegenerateConfiguration("marker corners are collinear or coincident");
    }
    const Eigen::Matrix3d ts = normalizer(obs.camera);
    const Eigen::Matrix3d td = normalizer(obs.display);

    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const Point2 s = transform(ts, obs.camera[std::size_t(i)]);
        const Point2 d = transform(td, obs.display[std::size_t(i)]);
        a.row(2 * i) << s.x, s.y, 1, 0, 0, 0, -d.x * s.x, -d.x * s.y;
        a.row(2 * i + 1) << 0, 0, 0, s.x, s.y, 1, -d.y * s.x, -d.y * s.y;
        b(2 * i) = d.x;
        b(2 * i + 1) = d.y;
    }
    const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (!lu.isInvertible()) {
        throw DegenerateConfiguration("marker correspondences do not determine a homography");
    }
    const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
    Eigen::Matrix3d hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
    const Eigen::Matrix3d full = td.inverse() * hn * ts;
    if (std::abs(full(2, 2)) < kMinHomogeneousW) {
        throw DegenerateConfiguration("homography maps the camera origin to infinity");
    }
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out[std::size_t(r * 3 + c)] = full(r, c);
        }
    }
    return Homography(out);
}

MappedGaze map_gaze(const Homography& h, std::span<const GazeSample> samples) {
    MappedGaze out;
    for (const auto& s : samples) {
        if (!s.valid) {
            ++out.dropped_invalid;
            continue;
        }
        if (auto p = h.apply(s.p)) {
            out.points.push_back(*p);
            out.times.push_back(s.t);
        } else {
            ++out.dropped_at_infinity;
        }
    }
    return out;
}

MappedGaze map_gaze_tracked(std::span<const MarkerObservation> markers, std::span<const GazeSample> samples,
                            std::optional<double> until_s) {
    std::vector<MarkerObservation> sorted(markers.begin(), markers.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    std::vector<Homography> fitted;
    fitted.reserve(sorted.size());
    for (const auto& m : sorted) {
        fitted.push_back(estimate_homography(m));
    }

    MappedGaze out;
    std::size_t next = 0;
    const Homography* current = nullptr;
    for (const auto& s : samples) {
        if (until_s && s.t > *until_s) {
            break;
        }
        while (next < sorted.size() && sorted[next].t <= s.t) {
            current = &fitted[next];
            ++next;
        }
        if (!s.valid) {
            ++out.dropped_invalid;
            continue;
        }
        if (!current) {
            ++out.dropped_no_homography;
            continue;
        }
        if (auto p = current->apply(s.p)) {
            out.points.push_back(*p);
            out.times.push_back(s.t);
        } else {
            ++out.dropped_at_infinity;
        }
    }
    return out;
}

double explored_ratio(std::span<const Point2> points, const PixelRect& region, double disk_radius_px) {
    if (!(disk_radius_px > 0.0)) {
        throw std::invalid_argument("disk radius must be positive");
    }
    if (region.width <= 0 || region.height <= 0) {
        throw std::invalid_argument("region must be non-empty");
    }
    std::vector<std::uint8_t> covered(std::size_t(region.width) * std::size_t(region.height), 0);
    const double r2 = disk_radius_px * disk_radius_px;
    for (const auto& p : points) {
        const double lx = p.x - region.x;
        const double ly = p.y - region.y;
        if (lx < 0.0 || ly < 0.0 || lx >= region.width || ly >= region.height) {
            continue;
        }
        const int x0 = std::max(0, int(std::floor(lx - disk_radius_px)));
        const int x1 = std::min(region.width - 1, int(std::ceil(lx + disk_radius_px)));
        const int y0 = std::max(0, int(std::floor(ly - disk_radius_px)));
        const int y1 = std::min(region.height - 1, int(std::ceil(ly + disk_radius_px)));
        for (int y = y0; y <= y1; ++y) {
            const double dy = y + 0.5 - ly;
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - lx;
                if (dx * dx + dy * dy <= r2) {
                    covered[std::size_t(y) * std::size_t(region.width) + std::size_t(x)] = 1;
                }
            }
        }
    }
    const auto hits = std::count(covered.begin(), covered.end(), std::uint8_t{1});
    return double(hits) / double(covered.size());
}

double completion_time(const GuidanceOutcome& outcome, double limit_s) {
    if (outcome.correct && outcome.latency_s && *outcome.latency_s <= limit_s) {
        return *outcome.latency_s;
    }
    return limit_s;
}

std::vector<GazeSample> read_gaze(std::istream& in) {
    std::vector<GazeSample> out;
    for_each_record(in, "gaze", [&](const json& j) {
        GazeSample s;
        s.t = j.at("t").get<double>();
        s.valid = j.value("valid", true);
        if (s.valid) {
            s.p = {j.at("x").get<double>(), j.at("y").get<double>()};
        }
        if (!out.empty() && s.t < out.back().t) {
            throw RecordFormatError("gaze timestamps must be non-decreasing");
        }
        out.push_back(s);
    });
    return out;
}

std::vector<MarkerObservation> read_markers(std::istream& in) {
    std::vector<MarkerObservation> out;
    for_each_record(in, "markers", [&](const json& j) {
        MarkerObservation m;
        m.t = j.value("t", 0.0);
        m.camera = read_quad(j.at("camera"));
        m.display = read_quad(j.at("display"));
        out.push_back(m);
    });
    return out;
}

std::vector<GazeTrialMeta> read_trial_meta(std::istream& in) {
    std::vector<GazeTrialMeta> out;
    for_each_record(in, "trials", [&](const json& j) {
        GazeTrialMeta m;
        m.trial = j.at("trial").is_string() ? j["trial"].get<std::string>() : j["trial"].dump();
        if (j.contains("click_s") && !j["click_s"].is_null()) {
            m.outcome.latency_s = j["click_s"].get<double>();
        }
        m.outcome.correct = j.value("correct", false);
        if (j.contains("gaze")) m.gaze_file = j["gaze"].get<std::string>();
        if (j.contains("markers")) m.markers_file = j["markers"].get<std::string>();
        out.push_back(m);
    });
    return out;
}

}  // namespace chromavib
