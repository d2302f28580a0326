#include "chromavib/cli.hpp"

#include "chromavib/gazeanalysis.hpp"
#include "chromavib/service.hpp"
#include "chromavib/stimulus.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <thread>

#ifndef CHROMAVIB_DEFAULT_CATALOG
#define CHROMAVIB_DEFAULT_CATALOG "macadam1942.txt"
#endif

namespace chromavib {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// A usage problem detected after parsing (missing companion flag etc.).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json color_json(const XyChromaticity& xy, const Srgb8& c) {
    return json{{"x", xy.x}, {"y", xy.y}, {"srgb8", {c.r, c.g, c.b}}};
}

EllipseCatalog open_catalog(const std::string& path) {
    return load_catalog_file(path.empty() ? fs::path(CHROMAVIB_DEFAULT_CATALOG) : fs::path(path));
}

DisplayProfile open_profile(const std::string& path) {
    return path.empty() ? DisplayProfile::reference_panel() : load_profile(path);
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw ImageIoError("cannot open " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// All outputs are staged next to their targets and renamed only once every
// file has been written, so a failure leaves no partial results behind.
void commit_files(const std::vector<std::pair<fs::path, std::string>>& files) {
    std::vector<fs::path> staged;
    try {
        for (const auto& [path, bytes] : files) {
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            fs::path tmp = path;
            tmp += ".partial";
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            staged.push_back(tmp);
            if (!out.write(bytes.data(), std::streamsize(bytes.size())) || !out.flush()) {
                throw ImageIoError("cannot write " + tmp.string());
            }
        }
        for (std::size_t i = 0; i < files.size(); ++i) {
            fs::rename(staged[i], files[i].first);
        }
    } catch (...) {
        std::error_code ec;
        for (const auto& p : staged) fs::remove(p, ec);
        throw;
    }
}

std::string png_string(const RgbImage& img) {
    const auto bytes = encode_png(img);
    return {bytes.begin(), bytes.end()};
}

CLI::Validator open_unit_interval() {
    return CLI::Validator(
        [](std::string& s) -> std::string {
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(s, &used);
                if (used != s.size()) return "not a number: " + s;
            } catch (const std::exception&) {
                return "not a number: " + s;
            }
            return (v > 0.0 && v < 1.0) ? "" : "must lie strictly between 0 and 1";
        },
        "(0,1)");
}

/// Resolves a geometric quantity given either in mm or in px.
double length_mm(const DisplayProfile& p, std::optional<double> mm, std::optional<double> px, double fallback_mm) {
    if (mm) return *mm;
    if (px) return px_to_mm(p, *px);
    return fallback_mm;
}

// ---------------------------------------------------------------------------

struct PairArgs {
    double x = kBaseChromaticity.x;
    double y = kBaseChromaticity.y;
    double Y = kBaseLuminance;
    double r = 0.0;
    double w = 0.5;
    std::string catalog;
};

int cmd_pair(const PairArgs& a, std::ostream& out, std::ostream& err) {
    const auto catalog = open_catalog(a.catalog);
    const auto* e = catalog.find_center({a.x, a.y});
    if (!e) {
        err << "error: no catalog ellipse is centered at (" << a.x << ", " << a.y << ")\n";
        return kExitDomain;
    }
    try {
        const auto pair = weighted_pair(*e, a.r, a.w, a.Y);
        const auto [plus, minus] = pair_to_display(pair);
        const double max_r = max_gamut_ratio(*e, a.w, a.Y);
        out << json{{"record", "pair"},
                    {"ellipse", e->index},
                    {"r", a.r},
                    {"w", a.w},
                    {"Y", a.Y},
                    {"plus", color_json(pair.plus, plus)},
                    {"minus", color_json(pair.minus, minus)},
                    {"max_r", max_r},
                    {"gamut_margin_r", max_r - a.r}}
                   .dump()
            << '\n';
        return kExitOk;
    } catch (const OutOfGamut& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitDomain;
    } catch (const WeightOutOfRange& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    }
}

struct ConvertArgs {
    double x = kBaseChromaticity.x;
    double y = kBaseChromaticity.y;
    double Y = kBaseLuminance;
};

int cmd_convert(const ConvertArgs& a, std::ostream& out) {
    const XyYColor c{{a.x, a.y}, a.Y};
    const auto xyz = xyy_to_xyz(c);
    const auto lin = xyz_to_linear_rgb(xyz);
    const bool ok = in_gamut(lin);
    const auto rgb = linear_to_srgb8_clamped(lin);
    out << json{{"record", "color"},
                {"xyY", {a.x, a.y, a.Y}},
                {"XYZ", {xyz.X, xyz.Y, xyz.Z}},
                {"linear_rgb", {lin.r, lin.g, lin.b}},
                {"in_gamut", ok},
                {"srgb8", {rgb.r, rgb.g, rgb.b}},
                {"clamped", !ok}}
               .dump()
        << '\n';
    return kExitOk;
}

struct StimulusArgs {
    std::string kind = "guidance";
    std::string profile;
    std::string catalog;
    std::string out_dir = ".";
    std::string prefix = "stimulus";
    // guidance
    std::string image;
    std::string condition = "unmodified";
    std::string table;
    std::string calibration;
    std::optional<double> roi_x, roi_y, roi_x_px, roi_y_px;
    double roi_diameter = 44.0;
    double vibration_diameter = 80.0;
    bool clamp = false;
    // threshold / calibration
    double r = 0.0;
    double w = 0.5;
    std::optional<double> d, d_px, l, l_px;
    int index = 1;
    std::optional<double> diameter, diameter_px;
};

int cmd_stimulus(const StimulusArgs& a, std::ostream& out) {
    const auto profile = open_profile(a.profile);
    StimulusFramePair pair;
    if (a.kind == "guidance") {
        if (a.image.empty()) throw UsageError("--image is required for guidance stimuli");
        if (!(a.roi_x || a.roi_x_px) || !(a.roi_y || a.roi_y_px)) {
            throw UsageError("ROI position needs --roi-x/--roi-y (mm) or --roi-x-px/--roi-y-px");
        }
        const auto condition = parse_guidance_condition(a.condition);
        const bool vibrating = condition == GuidanceCondition::UnobtrusiveVibration ||
                               condition == GuidanceCondition::ObtrusiveVibration;
        if (vibrating && (a.table.empty() || a.calibration.empty())) {
            throw UsageError("vibration conditions need --table and --calibration");
        }
        const auto catalog = open_catalog(a.catalog);
        const auto bytes = slurp(a.image);
        const auto gray = prepare_image(read_image(a.image));
        const ThresholdTable table = a.table.empty() ? ThresholdTable{} : read_table_file(a.table);
        const UserCalibration cal = a.calibration.empty() ? UserCalibration{} : read_calibration_file(a.calibration);
        RoiSpec roi;
        roi.cx_px = a.roi_x ? mm_to_px(profile, *a.roi_x) : *a.roi_x_px;
        roi.cy_px = a.roi_y ? mm_to_px(profile, *a.roi_y) : *a.roi_y_px;
        roi.roi_diameter_mm = a.roi_diameter;
        roi.vibration_diameter_mm = a.vibration_diameter;
        const GuidanceInputs in{gray, roi, condition, table, cal, profile, catalog.base(), sha256_hex(bytes)};
        GuidanceOptions opts;
        opts.clamp_per_pixel = a.clamp;
        pair = render_guidance(in, opts);
    } else if (a.kind == "threshold") {
        const auto catalog = open_catalog(a.catalog);
        const double d = length_mm(profile, a.d, a.d_px, 80.0);
        const double l = length_mm(profile, a.l, a.l_px, 0.0);
        pair = render_threshold_stimulus(profile, catalog.base(), a.r, a.w, d, l, l > 0.0 ? a.index : 0);
    } else if (a.kind == "calibration") {
        const auto catalog = open_catalog(a.catalog);
        const double d = length_mm(profile, a.diameter, a.diameter_px, 120.0);
        pair = render_calibration_stimulus(profile, catalog.base(), a.r, a.w, d);
    } else {
        throw UsageError("--kind must be guidance, threshold or calibration");
    }

    const fs::path dir(a.out_dir);
    const fs::path pa = dir / (a.prefix + "_a.png");
    const fs::path pb = dir / (a.prefix + "_b.png");
    const fs::path pm = dir / (a.prefix + ".json");
    commit_files({{pa, png_string(pair.frame_a)}, {pb, png_string(pair.frame_b)}, {pm, metadata_json(pair, profile)}});
    out << json{{"record", "stimulus"},
                {"kind", pair.metadata.kind},
                {"frame_a", pa.string()},
                {"frame_b", pb.string()},
                {"metadata", pm.string()},
                {"r", pair.metadata.r},
                {"w", pair.metadata.w},
                {"identical", pair.frame_a == pair.frame_b}}
               .dump()
        << '\n';
    return kExitOk;
}

struct FitArgs {
    std::string responses;
    std::string out;
    bool keep_misses = false;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    auto responses = read_responses_file(a.responses);
    if (responses.empty()) {
        err << "error: " << a.responses << " holds no responses\n";
        return kExitDomain;
    }
    if (!a.keep_misses) {
        responses = filter_peripheral_misses(responses);
    }
    const auto missing = missing_cells(responses);
    const auto build = build_table(responses);

    std::vector<std::string> degenerate;
    for (const auto& dgn : build.diagnostics) {
        json rec{{"record", "diagnostic"},
                 {"condition", to_string(dgn.condition)},
                 {"d_mm", dgn.d_mm},
                 {"l_mm", dgn.l_mm},
                 {"message", dgn.message}};
        out << rec.dump() << '\n';
        if (dgn.message.rfind("absent", 0) == 0) {
            std::ostringstream cell;
            cell << to_string(dgn.condition) << " d=" << dgn.d_mm << " l=" << dgn.l_mm;
            degenerate.push_back(cell.str());
        }
    }
    if (!missing.empty() || !degenerate.empty()) {
        err << "error: threshold table incomplete;";
        for (const auto& m : missing) err << " missing cell " << m << ";";
        for (const auto& d : degenerate) err << " degenerate cell " << d << ";";
        err << " no table written\n";
        return kExitDomain;
    }
    for (const auto& [key, curve] : build.curves) {
        out << json{{"record", "curve"},
                    {"condition", to_string(key.condition)},
                    {"d_mm", key.d_mm},
                    {"l_mm", key.l_mm},
                    {"midpoint", curve.midpoint},
                    {"slope", curve.slope},
                    {"n_trials", curve.n_trials},
                    {"n_levels", curve.n_levels},
                    {"separated", curve.separated},
                    {"r_50", threshold_at(curve, 0.5)},
                    {"r_75", threshold_at(curve, 0.75)}}
                   .dump()
            << '\n';
    }
    for (const auto& w : build.table.trend_warnings()) {
        err << "warning: " << w << '\n';
    }
    std::ostringstream table;
    write_table(table, build.table);
    commit_files({{fs::path(a.out), table.str()}});
    out << json{{"record", "table"}, {"path", a.out}, {"entries", build.table.entries().size()}}.dump() << '\n';
    return kExitOk;
}

struct GazeArgs {
    std::string trials;
    std::string profile;
    std::optional<int> width_px, height_px;
    double disk_deg = 5.0;
    std::optional<double> disk_radius_px;
};

int cmd_gaze(const GazeArgs& a, std::ostream& out) {
    const auto profile = open_profile(a.profile);
    const int width = a.width_px.value_or(profile.width_px);
    const int height = a.height_px.value_or(profile.height_px);
    const double radius_px =
        a.disk_radius_px ? *a.disk_radius_px : mm_to_px(profile, visual_disk_radius_mm(profile, a.disk_deg));
    std::ifstream tin(a.trials);
    if (!tin) throw ImageIoError("cannot open " + a.trials);
    const auto trials = read_trial_meta(tin);
    const fs::path base = fs::path(a.trials).parent_path();

    std::ostringstream buffer;
    for (const auto& t : trials) {
        std::vector<GazeSample> gaze;
        if (t.gaze_file) {
            std::ifstream g(base / *t.gaze_file);
            if (!g) throw ImageIoError("cannot open " + (base / *t.gaze_file).string());
            gaze = read_gaze(g);
        }
        // Explored area accumulates until the response click, or over the
        // whole search window on timeout.
        const double until = t.outcome.latency_s.value_or(kSearchLimitS);
        MappedGaze mapped;
        if (t.markers_file) {
            std::ifstream m(base / *t.markers_file);
            if (!m) throw ImageIoError("cannot open " + (base / *t.markers_file).string());
            const auto markers = read_markers(m);
            mapped = map_gaze_tracked(markers, gaze, until);
        } else {
            std::vector<GazeSample> window;
            for (const auto& s : gaze) {
                if (s.t <= until) window.push_back(s);
            }
            mapped = map_gaze(Homography{}, window);
        }
        const double ratio = explored_ratio(mapped.points, PixelRect{0, 0, width, height}, radius_px);
        buffer << json{{"record", "trial"},
                       {"trial", t.trial},
                       {"completion_s", completion_time(t.outcome)},
                       {"correct", t.outcome.correct},
                       {"timeout", !t.outcome.latency_s.has_value()},
                       {"explored_ratio", ratio},
                       {"explored_until_s", until},
                       {"explored_until", t.outcome.latency_s ? "response" : "limit"},
                       {"samples", gaze.size()},
                       {"mapped", mapped.points.size()},
                       {"dropped_invalid", mapped.dropped_invalid},
                       {"dropped_no_homography", mapped.dropped_no_homography},
                       {"dropped_at_infinity", mapped.dropped_at_infinity},
                       {"disk_radius_px", radius_px}}
                      .dump()
               << '\n';
    }
    out << buffer.str();
    return kExitOk;
}

struct ServeArgs {
    std::string config;
    std::optional<int> port;
};

std::atomic<bool> g_stop_requested{false};

extern "C" void request_stop(int) { g_stop_requested.store(true); }

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
    std::string path = a.config;
    if (path.empty()) {
        if (const char* env = std::getenv(kConfigEnvVar)) path = env;
    }
    if (path.empty()) {
        throw UsageError(std::string("serve needs --config or the ") + kConfigEnvVar + " environment variable");
    }
    auto config = load_service_config(path);
    if (a.port) config.port = *a.port;
    ExperimentSession session(config);
    for (const auto& w : session.log().warnings()) err << "warning: " << w << '\n';
    HttpService http(session);
    if (!http.bind(config.host, config.port)) {
        err << "error: cannot bind " << config.host << ":" << config.port << '\n';
        return kExitDomain;
    }
    out << json{{"record", "serving"},
                {"host", config.host},
                {"port", http.port()},
                {"log", config.log.string()},
                {"stage", to_string(session.stage())}}
               .dump()
        << std::endl;

    g_stop_requested.store(false);
    std::signal(SIGINT, request_stop);
    std::signal(SIGTERM, request_stop);
    std::atomic<bool> finished{false};
    std::thread watcher([&] {
        while (!finished.load()) {
            if (g_stop_requested.load()) {
                http.stop();
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    });
    http.run();
    finished.store(true);
    watcher.join();
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
    out << json{{"record", "stopped"}, {"stage", to_string(session.stage())}}.dump() << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Color-vibration gaze guidance toolkit. Output: one JSON record per line on stdout.", "chromavib"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "chromavib 1.0");

    PairArgs pa;
    auto* pair = app.add_subcommand("pair", "Vibration pair on the ellipse centered at (x, y)");
    pair->add_option("--x", pa.x, "Center chromaticity x (CIE 1931)")->capture_default_str();
    pair->add_option("--y", pa.y, "Center chromaticity y (CIE 1931)")->capture_default_str();
    pair->add_option("--Y", pa.Y, "Relative luminance in [0,1]")->capture_default_str();
    pair->add_option("--r", pa.r, "Amplitude ratio (multiples of the major semi-axis), >= 0")
        ->required()
        ->check(CLI::NonNegativeNumber);
    pair->add_option("--w", pa.w, "Weight toward the yellowish endpoint, in (0,1)")
        ->check(open_unit_interval())
        ->capture_default_str();
    pair->add_option("--catalog", pa.catalog, "Ellipse catalog file (default: bundled)");

    ConvertArgs ca;
    auto* convert = app.add_subcommand("convert", "Convert one xyY color to XYZ, linear RGB and 8-bit sRGB");
    convert->add_option("--x", ca.x, "Chromaticity x")->capture_default_str();
    convert->add_option("--y", ca.y, "Chromaticity y")->capture_default_str();
    convert->add_option("--Y", ca.Y, "Relative luminance in [0,1]")->capture_default_str();

    StimulusArgs sa;
    auto* stim = app.add_subcommand("stimulus", "Render a frame pair (PREFIX_a.png, PREFIX_b.png) and sidecar PREFIX.json");
    stim->add_option("--kind", sa.kind, "guidance | threshold | calibration")->capture_default_str();
    stim->add_option("--profile", sa.profile, "Display profile JSON (default: 42.5\" 3840x2160 at 500 mm)");
    stim->add_option("--catalog", sa.catalog, "Ellipse catalog file (default: bundled)");
    stim->add_option("--out-dir", sa.out_dir, "Output directory")->capture_default_str();
    stim->add_option("--prefix", sa.prefix, "Output file prefix")->capture_default_str();
    stim->add_option("--image", sa.image, "[guidance] source image (PNG, PGM or PPM)");
    stim->add_option("--condition", sa.condition, "[guidance] unmodified | unobtrusive | obtrusive | explicit")
        ->capture_default_str();
    stim->add_option("--table", sa.table, "[guidance] threshold table CSV");
    stim->add_option("--calibration", sa.calibration, "[guidance] per-user calibration JSON");
    auto* rx = stim->add_option("--roi-x", sa.roi_x, "[guidance] ROI center x in mm from the image's left edge");
    auto* ry = stim->add_option("--roi-y", sa.roi_y, "[guidance] ROI center y in mm from the image's top edge");
    stim->add_option("--roi-x-px", sa.roi_x_px, "[guidance] ROI center x in image px")->excludes(rx);
    stim->add_option("--roi-y-px", sa.roi_y_px, "[guidance] ROI center y in image px")->excludes(ry);
    stim->add_option("--roi-diameter", sa.roi_diameter, "[guidance] ROI diameter in mm")->capture_default_str();
    stim->add_option("--vibration-diameter", sa.vibration_diameter, "[guidance] vibrating circle diameter in mm")
        ->capture_default_str();
    stim->add_flag("--clamp-per-pixel", sa.clamp, "[guidance] lower r per pixel instead of failing on gamut");
    stim->add_option("--r", sa.r, "[threshold|calibration] amplitude ratio")->check(CLI::NonNegativeNumber);
    stim->add_option("--w", sa.w, "[threshold|calibration] weight in (0,1)")
        ->check(open_unit_interval())
        ->capture_default_str();
    auto* d = stim->add_option("--d", sa.d, "[threshold] circle diameter in mm (default 80)");
    stim->add_option("--d-px", sa.d_px, "[threshold] circle diameter in px")->excludes(d);
    auto* l = stim->add_option("--l", sa.l, "[threshold] eccentricity in mm from the screen center (default 0)");
    stim->add_option("--l-px", sa.l_px, "[threshold] eccentricity in px")->excludes(l);
    stim->add_option("--index", sa.index, "[threshold] vibrating circle 1 top, 2 right, 3 bottom, 4 left")
        ->check(CLI::Range(1, 4))
        ->capture_default_str();
    auto* dia = stim->add_option("--diameter", sa.diameter, "[calibration] circle diameter in mm (default 120)");
    stim->add_option("--diameter-px", sa.diameter_px, "[calibration] circle diameter in px")->excludes(dia);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit psychometric curves and write a threshold table");
    fit->add_option("--responses", fa.responses, "Response records (JSONL)")->required();
    fit->add_option("--out", fa.out, "Threshold table CSV to write")->required();
    fit->add_flag("--keep-misses", fa.keep_misses, "Do not relabel mislocated peripheral detections");

    GazeArgs ga;
    auto* gaze = app.add_subcommand("gaze", "Per-trial completion time and explored-area ratio");
    gaze->add_option("--trials", ga.trials, "Trial metadata (JSONL) naming per-trial gaze/marker files")->required();
    gaze->add_option("--profile", ga.profile, "Display profile JSON (px/mm scale, viewing distance)");
    gaze->add_option("--width-px", ga.width_px, "Stimulus width in px (default: profile width)");
    gaze->add_option("--height-px", ga.height_px, "Stimulus height in px (default: profile height)");
    auto* deg = gaze->add_option("--disk-deg", ga.disk_deg, "Explored disk diameter in degrees of visual angle")
                    ->capture_default_str();
    gaze->add_option("--disk-radius-px", ga.disk_radius_px, "Explored disk radius in px")->excludes(deg);

    ServeArgs va;
    auto* serve = app.add_subcommand("serve", "Run the local experiment service");
    serve->add_option("--config", va.config, std::string("Service config JSON (or set ") + kConfigEnvVar + ")");
    serve->add_option("--port", va.port, "Override the configured TCP port")->check(CLI::Range(0, 65535));

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        if (!rev.empty()) rev.pop_back();  // program name
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*pair) return cmd_pair(pa, out, err);
        if (*convert) return cmd_convert(ca, out);
        if (*stim) return cmd_stimulus(sa, out);
        if (*fit) return cmd_fit(fa, out, err);
        if (*gaze) return cmd_gaze(ga, out);
        if (*serve) return cmd_serve(va, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitDomain;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace chromavib
