#include "chromavib/service.hpp"

#include "httplib.h"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iterator>

#ifndef CHROMAVIB_DEFAULT_CATALOG
#define CHROMAVIB_DEFAULT_CATALOG "macadam1942.txt"
#endif

namespace chromavib {

using nlohmann::json;

namespace {

constexpr std::size_t kRetainedFrameSets = 4;

void check_version(const json& body) {
    if (!body.is_object()) {
        throw InvalidResponse("request body must be a JSON object");
    }
    if (!body.contains("version") || body["version"] != kApiVersion) {
        throw InvalidResponse("request must carry \"version\": " + std::to_string(kApiVersion));
    }
}

json envelope(json j) {
    j["version"] = kApiVersion;
    return j;
}

json frame_refs(const std::string& id) {
    return json{{"id", id}, {"a", "/stimulus/" + id + "/a"}, {"b", "/stimulus/" + id + "/b"}};
}

template <typename F>
auto parsing(const char* what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw InvalidResponse(std::string(what) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw InvalidResponse(std::string(what) + ": " + e.what());
    }
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw ImageIoError("cannot open " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

double steady_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::NotStarted: return "not_started";
        case Stage::Calibration: return "calibration";
        case Stage::Threshold: return "threshold";
        case Stage::Guidance: return "guidance";
        case Stage::Complete: return "complete";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    if (s == "calibration") return Stage::Calibration;
    if (s == "threshold") return Stage::Threshold;
    if (s == "guidance") return Stage::Guidance;
    throw ConfigError("unknown stage `" + std::string(s) + "` (calibration, threshold, guidance)");
}

// ---------------------------------------------------------------------------
// Configuration

void ServiceConfig::validate() const {
    profile.validate();
    if (log.empty()) throw ConfigError("config needs a session log path (`log`)");
    if (port < 0 || port > 65535) throw ConfigError("port must be 0..65535");
    if (!(fixation_s > 0.0)) throw ConfigError("fixation_s must be positive");
    if (stages.empty()) throw ConfigError("config must list at least one stage");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (std::count(stages.begin(), stages.end(), stages[i]) > 1) {
            throw ConfigError("stage `" + std::string(to_string(stages[i])) + "` is listed twice");
        }
    }
    const auto has = [&](Stage s) { return std::find(stages.begin(), stages.end(), s); };
    if (has(Stage::Guidance) != stages.end()) {
        if (!thresholds) throw ConfigError("the guidance stage needs a threshold table (`thresholds`)");
        const auto cal = has(Stage::Calibration);
        if (!calibration && (cal == stages.end() || cal > has(Stage::Guidance))) {
            throw ConfigError("the guidance stage needs a calibration stage before it or a `calibration` file");
        }
        if (image_sets.empty()) throw ConfigError("the guidance stage needs `image_sets`");
        for (const auto& set : image_sets) {
            if (set.size() != std::size_t(kGuidanceImagesPerSet)) {
                throw ConfigError("every image set must hold exactly 4 images");
            }
        }
    }
}

ServiceConfig parse_service_config(const json& j, const std::filesystem::path& base_dir) {
    ServiceConfig c;
    auto resolve = [&](const std::string& s) {
        std::filesystem::path p(s);
        return p.is_absolute() ? p : base_dir / p;
    };
    try {
        if (!j.is_object() || j.value("version", 0) != kApiVersion) {
            throw ConfigError("config must be a JSON object with \"version\": 1");
        }
        if (j.contains("display")) {
            const auto& d = j["display"];
            c.profile = d.is_string() ? load_profile(resolve(d.get<std::string>())) : profile_from_json(d);
        }
        c.catalog = j.contains("catalog") ? resolve(j["catalog"].get<std::string>())
                                          : std::filesystem::path(CHROMAVIB_DEFAULT_CATALOG);
        if (j.contains("thresholds")) c.thresholds = resolve(j["thresholds"].get<std::string>());
        if (j.contains("calibration")) c.calibration = resolve(j["calibration"].get<std::string>());
        c.log = resolve(j.at("log").get<std::string>());
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.seed = j.value("seed", c.seed);
        c.participant = j.value("participant", c.participant);
        c.fixation_s = j.value("fixation_s", c.fixation_s);
        c.clamp_per_pixel = j.value("clamp_per_pixel", c.clamp_per_pixel);
        if (j.contains("stages")) {
            c.stages.clear();
            for (const auto& s : j["stages"]) c.stages.push_back(parse_stage(s.get<std::string>()));
        }
        if (j.contains("image_sets")) {
            for (const auto& set : j["image_sets"]) {
                std::vector<GuidanceImage> images;
                for (const auto& e : set) {
                    GuidanceImage g;
                    g.image = resolve(e.at("image").get<std::string>());
                    g.roi.cx_px = e.at("roi_x_px").get<double>();
                    g.roi.cy_px = e.at("roi_y_px").get<double>();
                    g.roi.roi_diameter_mm = e.value("roi_diameter_mm", g.roi.roi_diameter_mm);
                    g.roi.vibration_diameter_mm = e.value("vibration_diameter_mm", g.roi.vibration_diameter_mm);
                    if (e.contains("target")) g.target = resolve(e["target"].get<std::string>());
                    images.push_back(std::move(g));
                }
                c.image_sets.push_back(std::move(images));
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_service_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Engine

ExperimentSession::ExperimentSession(ServiceConfig config, Clock clock)
    : config_(std::move(config)),
      clock_(std::move(clock)),
      log_(std::make_unique<SessionLog>(config_.log)),
      catalog_(load_catalog_file(config_.catalog)) {
    config_.validate();
    if (config_.thresholds) table_ = read_table_file(*config_.thresholds);
    if (config_.calibration) file_calibration_ = read_calibration_file(*config_.calibration);
    replay();
}

ExperimentSession::~ExperimentSession() = default;

void ExperimentSession::replay() {
    const auto fail = [&](const std::string& msg) {
        throw StorageFailure("session log " + log_->path().string() + ": " + msg);
    };
    for (const auto& rec : log_->records()) {
        const std::string kind = rec.at("kind").get<std::string>();
        const int index = rec.at("index").get<int>();
        if (kind == "session_start") {
            if (started_ || index != 0) fail("unexpected session_start record");
            try {
                participant_ = rec.at("participant").get<std::string>();
                seed_ = rec.at("seed").get<std::uint64_t>();
                for (const auto& s : rec.at("stages")) stages_.push_back(parse_stage(s.get<std::string>()));
            } catch (const std::exception& e) {
                fail(std::string("bad session_start: ") + e.what());
            }
            threshold_plan_ = plan_threshold_study(seed_);
            guidance_plan_ = plan_guidance_study(seed_, int(std::max<std::size_t>(1, config_.image_sets.size())));
            started_ = true;
            continue;
        }
        if (!started_) fail("record before session_start");
        try {
            if (kind == "calibration") {
                const auto fit = calibration_fit_from_json(rec);
                if (calibration_.complete() || index != int(calibration_.fits.size()) ||
                    fit.r != kCalibrationRatios[calibration_.r_index]) {
                    fail("calibration record " + std::to_string(index) + " is out of sequence");
                }
                calibration_.fits.push_back(fit);
                ++calibration_.r_index;
            } else if (kind == "threshold") {
                const auto r = threshold_record_from_json(rec);
                if (index != int(threshold_records_.size()) || std::size_t(index) >= threshold_plan_.size() ||
                    !(r.spec == threshold_plan_.threshold_trials[std::size_t(index)])) {
                    fail("threshold record " + std::to_string(index) + " does not match the seeded plan");
                }
                threshold_records_.push_back(r);
            } else if (kind == "guidance") {
                const auto r = guidance_record_from_json(rec);
                if (index != int(guidance_records_.size()) || std::size_t(index) >= guidance_plan_.size() ||
                    !(r.spec == guidance_plan_.guidance_trials[std::size_t(index)])) {
                    fail("guidance record " + std::to_string(index) + " does not match the seeded plan");
                }
                guidance_records_.push_back(r);
            } else {
                fail("unknown record kind `" + kind + "`");
            }
        } catch (const RecordFormatError& e) {
            fail(e.what());
        }
    }
    advance_stage();
}

void ExperimentSession::advance_stage() {
    if (!started_) {
        stage_ = Stage::NotStarted;
        return;
    }
    for (Stage s : stages_) {
        const bool done = (s == Stage::Calibration && calibration_.complete()) ||
                          (s == Stage::Threshold && threshold_records_.size() == threshold_plan_.size()) ||
                          (s == Stage::Guidance && guidance_records_.size() == guidance_plan_.size());
        if (!done) {
            stage_ = s;
            return;
        }
    }
    stage_ = Stage::Complete;
}

void ExperimentSession::require_stage(Stage s, const char* what) const {
    if (stage_ != s) {
        throw SequenceViolation(std::string(what) + " is not accepted in stage " + std::string(to_string(stage_)));
    }
}

UserCalibration ExperimentSession::user_calibration() const {
    if (!calibration_.fits.empty()) return to_user_calibration(calibration_, participant_);
    if (file_calibration_) return *file_calibration_;
    return UserCalibration{participant_, {}};
}

double ExperimentSession::weight_for(double r) const {
    const auto cal = user_calibration();
    return cal.fits.empty() ? 0.5 : interpolate_weight(cal, r).weight;
}

std::string ExperimentSession::publish(const std::string& id, const RgbImage& a, const RgbImage& b) {
    auto pa = std::make_shared<const std::vector<std::uint8_t>>(encode_png(a));
    auto pb = a == b ? pa : std::make_shared<const std::vector<std::uint8_t>>(encode_png(b));
    std::unique_lock lock(frames_mutex_);
    frames_[id] = Frames{pa, pb};
    return id;
}

// Frames are kept for the current and a few previous ids so a slow download
// of a just-replaced stimulus still succeeds.
void ExperimentSession::retire_frames() {
    std::unique_lock lock(frames_mutex_);
    while (frames_.size() > kRetainedFrameSets) {
        frames_.erase(frames_.begin());
    }
}

std::optional<std::shared_ptr<const std::vector<std::uint8_t>>> ExperimentSession::frame(const std::string& id,
                                                                                         char which) const {
    std::shared_lock lock(frames_mutex_);
    const auto it = frames_.find(id);
    if (it == frames_.end() || (which != 'a' && which != 'b')) return std::nullopt;
    return which == 'a' ? it->second.a : it->second.b;
}

json ExperimentSession::state() const {
    json progress{{"calibration", {{"done", calibration_.fits.size()}, {"total", kCalibrationRatios.size()}}},
                  {"threshold", {{"done", threshold_records_.size()}, {"total", threshold_plan_.size()}}},
                  {"guidance", {{"done", guidance_records_.size()}, {"total", guidance_plan_.size()}}}};
    json stages = json::array();
    for (Stage s : started_ ? stages_ : config_.stages) stages.push_back(to_string(s));
    return envelope({{"started", started_},
                     {"participant", started_ ? json(participant_) : json(nullptr)},
                     {"seed", started_ ? json(seed_) : json(nullptr)},
                     {"stage", to_string(stage_)},
                     {"stages", stages},
                     {"progress", progress},
                     {"warnings", log_->warnings()},
                     {"display",
                      {{"width_px", config_.profile.width_px},
                       {"height_px", config_.profile.height_px},
                       {"refresh_hz", config_.profile.refresh_hz}}}});
}

json ExperimentSession::start(const json& body) {
    check_version(body);
    if (started_) {
        throw SequenceViolation("session already started for participant `" + participant_ + "`");
    }
    const auto [participant, seed] = parsing("start", [&] {
        return std::pair{body.value("participant", config_.participant), body.value("seed", config_.seed)};
    });
    if (participant.empty()) {
        throw InvalidResponse("a participant id is required");
    }
    json stages = json::array();
    for (Stage s : config_.stages) stages.push_back(to_string(s));
    log_->append(json{{"kind", "session_start"},
                      {"index", 0},
                      {"participant", participant},
                      {"seed", seed},
                      {"stages", stages}});
    participant_ = participant;
    seed_ = seed;
    stages_ = config_.stages;
    threshold_plan_ = plan_threshold_study(seed_);
    guidance_plan_ = plan_guidance_study(seed_, int(std::max<std::size_t>(1, config_.image_sets.size())));
    started_ = true;
    advance_stage();
    return state();
}

json ExperimentSession::calibration_view() {
    const double r = calibration_.r();
    const double w = calibration_.w();
    const std::string id = "cal-" + std::to_string(calibration_.r_index) + "-" +
                           std::to_string(calibration_.steps + kMaxWeightSteps);
    if (!frame(id, 'a')) {
        const auto pair = render_calibration_stimulus(config_.profile, catalog_.base(), r, w);
        publish(id, pair.frame_a, pair.frame_b);
        retire_frames();
    }
    return envelope({{"stage", "calibration"},
                     {"calibration",
                      {{"round", calibration_.r_index + 1},
                       {"rounds", kCalibrationRatios.size()},
                       {"r", r},
                       {"w", w},
                       {"steps", calibration_.steps},
                       {"step", kWeightStep}}},
                     {"stimulus", frame_refs(id)}});
}

json ExperimentSession::threshold_view() {
    const auto& spec = threshold_plan_.threshold_trials[threshold_records_.size()];
    const std::string id = "thr-" + std::to_string(spec.index);
    const auto layout = threshold_layout(config_.profile, spec.d_mm, spec.l_mm);
    if (!threshold_active_) {
        const auto pair = render_threshold_stimulus(config_.profile, catalog_.base(), spec.r, weight_for(spec.r),
                                                    spec.d_mm, spec.l_mm, spec.vibrating_index);
        publish(id, pair.frame_a, pair.frame_b);
        retire_frames();
        threshold_active_.emplace(spec, clock_());
    }
    json circles = json::array();
    for (std::size_t i = 0; i < layout.size(); ++i) {
        circles.push_back({{"index", layout.size() == 1 ? 0 : int(i) + 1},
                           {"cx_px", layout[i].cx},
                           {"cy_px", layout[i].cy},
                           {"diameter_px", layout[i].diameter}});
    }
    return envelope({{"stage", "threshold"},
                     {"phase", "presentation"},
                     {"trial",
                      {{"index", spec.index},
                       {"count", threshold_plan_.size()},
                       {"r", spec.r},
                       {"d_mm", spec.d_mm},
                       {"l_mm", spec.l_mm},
                       {"peripheral", spec.l_mm > 0.0},
                       {"break_before", threshold_plan_.break_before(spec.index)}}},
                     {"circles", circles},
                     {"stimulus", frame_refs(id)}});
}

json ExperimentSession::guidance_view() {
    const auto& spec = guidance_plan_.guidance_trials[guidance_records_.size()];
    const auto& entry = config_.image_sets.at(std::size_t(spec.image_set)).at(std::size_t(spec.image_index));
    const std::string id = "gd-" + std::to_string(spec.index);
    if (!guidance_active_) {
        const auto source = read_image(entry.image);
        const auto gray = prepare_image(source);
        const auto cal = user_calibration();
        const GuidanceInputs in{gray,      entry.roi,        spec.condition, *table_,
                                cal,       config_.profile,  catalog_.base(),
                                sha256_hex(read_bytes(entry.image))};
        GuidanceOptions opts;
        opts.clamp_per_pixel = config_.clamp_per_pixel;
        const auto pair = render_guidance(in, opts);
        publish(id, pair.frame_a, pair.frame_b);
        if (entry.target) {
            const auto target = read_image(*entry.target);
            publish(id + "-target", target, target);
        }
        retire_frames();
        const Circle roi_circle{entry.roi.cx_px, entry.roi.cy_px, mm_to_px(config_.profile, entry.roi.roi_diameter_mm)};
        guidance_active_.emplace(spec, entry.image.string(), entry.roi, roi_circle, pair.metadata.r, pair.metadata.w,
                                 clock_(), GuidanceTiming{config_.fixation_s, kSearchLimitS});
        guidance_active_id_ = id;
    }
    const double now = clock_();
    guidance_active_->tick(now);
    const auto remaining = guidance_active_->remaining(now);
    return envelope({{"stage", "guidance"},
                     {"phase", to_string(guidance_active_->phase())},
                     {"remaining_s", remaining ? json(*remaining) : json(nullptr)},
                     {"trial",
                      {{"index", spec.index},
                       {"count", guidance_plan_.size()},
                       {"image_set", spec.image_set},
                       {"image_index", spec.image_index},
                       {"break_before", guidance_plan_.break_before(spec.index)}}},
                     {"stimulus", frame_refs(id)},
                     {"target", entry.target ? frame_refs(id + "-target") : json(nullptr)}});
}

json ExperimentSession::current_trial() {
    switch (stage_) {
        case Stage::NotStarted: throw SequenceViolation("session has not started");
        case Stage::Calibration: return calibration_view();
        case Stage::Threshold: return threshold_view();
        case Stage::Guidance: return guidance_view();
        case Stage::Complete: return envelope({{"stage", "complete"}});
    }
    return {};
}

void ExperimentSession::seal_threshold(const ThresholdRecord& rec) {
    log_->append(to_json(rec));
    threshold_records_.push_back(rec);
    threshold_active_.reset();
    advance_stage();
}

void ExperimentSession::seal_guidance(const GuidanceRecord& rec) {
    log_->append(to_json(rec));
    guidance_records_.push_back(rec);
    guidance_active_.reset();
    guidance_active_id_.clear();
    advance_stage();
}

json ExperimentSession::respond(const json& body) {
    check_version(body);
    if (stage_ == Stage::Threshold) {
        if (!threshold_active_) throw SequenceViolation("no threshold trial is being presented");
        const auto [state, location] = parsing("threshold response", [&] {
            std::optional<int> loc;
            if (body.contains("location") && !body["location"].is_null()) loc = body["location"].get<int>();
            return std::pair{parse_percept_state(body.at("state").get<std::string>()), loc};
        });
        auto trial = *threshold_active_;
        const auto rec = trial.respond(state, location, clock_());
        seal_threshold(rec);
        return envelope({{"accepted", true}, {"record", to_json(rec)}, {"stage", to_string(stage_)}});
    }
    if (stage_ == Stage::Guidance) {
        if (!guidance_active_) throw SequenceViolation("no guidance trial is open");
        const std::string event = parsing("guidance response", [&] { return body.at("event").get<std::string>(); });
        const double now = clock_();
        if (event == "target_confirmed") {
            guidance_active_->confirm_target(now);
        } else if (event == "click") {
            const Point2 p = parsing("click", [&] {
                return Point2{body.at("x_px").get<double>(), body.at("y_px").get<double>()};
            });
            guidance_active_->click(p, now);
        } else {
            throw InvalidResponse("guidance event must be target_confirmed or click");
        }
        const auto& d = guidance_active_->draft();
        json out{{"accepted", true}, {"phase", to_string(guidance_active_->phase())}};
        if (guidance_active_->phase() == GuidancePhase::Questionnaire) {
            out["correct"] = d.correct;
            out["timeout"] = d.timeout;
        }
        return envelope(out);
    }
    throw SequenceViolation("trial responses are not accepted in stage " + std::string(to_string(stage_)));
}

json ExperimentSession::questionnaire(const json& body) {
    check_version(body);
    require_stage(Stage::Guidance, "a questionnaire answer");
    if (!guidance_active_) throw SequenceViolation("no guidance trial is open");
    const LikertRatings likert = parsing("questionnaire", [&] {
        return LikertRatings{body.at("naturalness").get<int>(), body.at("obtrusiveness").get<int>()};
    });
    auto trial = *guidance_active_;
    const auto rec = trial.rate(likert, clock_());
    seal_guidance(rec);
    return envelope({{"accepted", true}, {"record", to_json(rec)}, {"stage", to_string(stage_)}});
}

json ExperimentSession::calibration_step(const json& body) {
    check_version(body);
    require_stage(Stage::Calibration, "a calibration step");
    const auto input =
        parsing("calibration step", [&] { return parse_calibration_input(body.at("input").get<std::string>()); });
    auto step = step_calibration(calibration_, input);
    std::string clamp_reason = step.clamped ? "weight_bound" : "";
    const double r = calibration_.r();
    const auto& e = catalog_.base();
    if (input != CalibrationInput::Accept && !step.clamped &&
        !pair_in_gamut(place_pair(e, r, step.state.w(), kBaseLuminance))) {
        step.state = calibration_;
        step.clamped = true;
        clamp_reason = "gamut";
    }
    json flash = nullptr;
    if (step.accepted) {
        log_->append(to_json(*step.accepted, int(calibration_.fits.size())));
        const auto pair = render_calibration_stimulus(config_.profile, e, step.accepted->r, step.accepted->w());
        const auto inverted = render_inverted(pair.frame_a, pair.metadata.circles);
        const std::string id = "inv-" + std::to_string(calibration_.r_index);
        publish(id, inverted, inverted);
        flash = {{"duration_ms", step.inverted_flash_ms}, {"stimulus", frame_refs(id)}};
    }
    calibration_ = step.state;
    advance_stage();
    json out{{"accepted", true},
             {"input", to_string(input)},
             {"clamped", step.clamped},
             {"clamp_reason", step.clamped ? json(clamp_reason) : json(nullptr)},
             {"fit", step.accepted ? to_json(*step.accepted, int(calibration_.fits.size()) - 1) : json(nullptr)},
             {"inverted_flash", flash},
             {"complete", calibration_.complete()},
             {"stage", to_string(stage_)}};
    if (!calibration_.complete()) {
        out["next"] = calibration_view();
    }
    return envelope(out);
}

json ExperimentSession::snapshot() const {
    json stages = json::array();
    for (Stage s : stages_) stages.push_back(to_string(s));
    json cal = json::array();
    for (std::size_t i = 0; i < calibration_.fits.size(); ++i) cal.push_back(to_json(calibration_.fits[i], int(i)));
    json thr = json::array();
    for (const auto& r : threshold_records_) thr.push_back(to_json(r));
    json gd = json::array();
    for (const auto& r : guidance_records_) gd.push_back(to_json(r));
    return json{{"started", started_},
                {"participant", participant_},
                {"seed", seed_},
                {"stages", stages},
                {"stage", to_string(stage_)},
                {"calibration", cal},
                {"threshold", thr},
                {"guidance", gd}};
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

struct ErrorInfo {
    int status;
    const char* type;
};

ErrorInfo classify(const std::exception& e) {
    if (dynamic_cast<const SequenceViolation*>(&e)) return {409, "SequenceViolation"};
    if (dynamic_cast<const DuplicateRecord*>(&e)) return {409, "DuplicateRecord"};
    if (dynamic_cast<const InvalidResponse*>(&e)) return {400, "InvalidResponse"};
    if (dynamic_cast<const StorageFailure*>(&e)) return {503, "StorageFailure"};
    if (dynamic_cast<const OutsideInterpolationRange*>(&e)) return {422, "OutsideInterpolationRange"};
    if (dynamic_cast<const OutOfGamut*>(&e)) return {422, "OutOfGamut"};
    if (dynamic_cast<const PerPixelGamutViolation*>(&e)) return {422, "PerPixelGamutViolation"};
    if (dynamic_cast<const Error*>(&e)) return {422, "DomainError"};
    return {500, "InternalError"};
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

HttpService::HttpService(ExperimentSession& session)
    : session_(session), server_(std::make_unique<httplib::Server>()) {
    using httplib::Request;
    using httplib::Response;
    using Handler = std::function<json(const json&)>;

    auto command = [this](Handler fn) {
        return [this, fn](const Request& req, Response& res) {
            std::lock_guard lock(command_mutex_);
            json body = json::object();
            if (!req.body.empty()) {
                body = json::parse(req.body, nullptr, false);
                if (body.is_discarded()) {
                    send_json(res, 400,
                              envelope({{"error", {{"type", "InvalidResponse"}, {"message", "body is not JSON"}}}}));
                    return;
                }
            }
            try {
                send_json(res, 200, fn(body));
            } catch (const std::exception& e) {
                const auto info = classify(e);
                send_json(res, info.status, envelope({{"error", {{"type", info.type}, {"message", e.what()}}}}));
            }
        };
    };

    server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}, {"Cache-Control", "no-store"}});
    server_->Options(R"(/.*)", [](const Request&, Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
    server_->Get("/session/state", command([this](const json&) { return session_.state(); }));
    server_->Post("/session/start", command([this](const json& b) { return session_.start(b); }));
    server_->Get("/trial/current", command([this](const json&) { return session_.current_trial(); }));
    server_->Post("/trial/response", command([this](const json& b) { return session_.respond(b); }));
    server_->Post("/calibration/step", command([this](const json& b) { return session_.calibration_step(b); }));
    server_->Post("/questionnaire", command([this](const json& b) { return session_.questionnaire(b); }));
    server_->Get(R"(/stimulus/([A-Za-z0-9_-]+)/([ab]))", [this](const Request& req, Response& res) {
        const auto bytes = session_.frame(req.matches[1].str(), req.matches[2].str()[0]);
        if (!bytes) {
            send_json(res, 404,
                      envelope({{"error", {{"type", "NotFound"}, {"message", "unknown stimulus " + req.path}}}}));
            return;
        }
        const auto& data = **bytes;
        res.set_content(reinterpret_cast<const char*>(data.data()), data.size(), "image/png");
    });
}

HttpService::~HttpService() { stop(); }

bool HttpService::bind(const std::string& host, int port) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
        return port_ > 0;
    }
    if (!server_->bind_to_port(host, port)) return false;
    port_ = port;
    return true;
}

void HttpService::run() { server_->listen_after_bind(); }

void HttpService::stop() {
    if (server_) server_->stop();
}

}  // namespace chromavib
