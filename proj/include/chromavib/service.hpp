#pragma once

// Session engine and its local HTTP/JSON front end. The engine owns the
// protocol state, the monotonic clock and the log; the HTTP layer serializes
// commands onto it and serves rendered frames.

#include "chromavib/session.hpp"
#include "chromavib/session_log.hpp"

#include "json.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace chromavib {

inline constexpr int kApiVersion = 1;
inline constexpr const char* kConfigEnvVar = "CHROMAVIB_CONFIG";

struct GuidanceImage {
    std::filesystem::path image;
    RoiSpec roi;
    std::optional<std::filesystem::path> target;  // optional preview shown before search
};

enum class Stage { NotStarted, Calibration, Threshold, Guidance, Complete };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct ServiceConfig {
    DisplayProfile profile = DisplayProfile::reference_panel();
    std::filesystem::path catalog;
    std::optional<std::filesystem::path> thresholds;
    std::optional<std::filesystem::path> calibration;  // used when no calibration stage runs
    std::filesystem::path log;
    std::string host = "127.0.0.1";
    int port = 8765;
    std::uint64_t seed = 1;
    std::string participant;
    double fixation_s = 1.0;
    std::vector<Stage> stages{Stage::Calibration, Stage::Threshold};
    std::vector<std::vector<GuidanceImage>> image_sets;
    bool clamp_per_pixel = false;

    /// Throws ConfigError for inconsistent settings.
    void validate() const;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
ServiceConfig parse_service_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
ServiceConfig load_service_config(const std::filesystem::path& path);

/// Seconds on std::chrono::steady_clock.
double steady_seconds();

class ExperimentSession {
public:
    using Clock = std::function<double()>;

    /// Opens the log named in the config and replays it. Throws StorageFailure
    /// when the log disagrees with the configured protocol.
    explicit ExperimentSession(ServiceConfig config, Clock clock = steady_seconds);
    ~ExperimentSession();

    // Command handlers; every body must carry "version": 1.
    nlohmann::json state() const;
    nlohmann::json start(const nlohmann::json& body);
    nlohmann::json current_trial();
    nlohmann::json respond(const nlohmann::json& body);
    nlohmann::json calibration_step(const nlohmann::json& body);
    nlohmann::json questionnaire(const nlohmann::json& body);

    /// PNG bytes of a rendered frame ('a' or 'b'); nullopt for unknown ids.
    /// Safe to call concurrently with the command handlers.
    std::optional<std::shared_ptr<const std::vector<std::uint8_t>>> frame(const std::string& id, char which) const;

    Stage stage() const noexcept { return stage_; }
    const SessionLog& log() const noexcept { return *log_; }
    const ServiceConfig& config() const noexcept { return config_; }
    UserCalibration user_calibration() const;

    /// Everything a replay must reproduce, as canonical JSON.
    nlohmann::json snapshot() const;

private:
    struct Frames {
        std::shared_ptr<const std::vector<std::uint8_t>> a;
        std::shared_ptr<const std::vector<std::uint8_t>> b;
    };

    void replay();
    void advance_stage();
    void require_stage(Stage s, const char* what) const;
    std::string publish(const std::string& id, const RgbImage& a, const RgbImage& b);
    void retire_frames();
    double weight_for(double r) const;
    nlohmann::json calibration_view();
    nlohmann::json threshold_view();
    nlohmann::json guidance_view();
    void seal_threshold(const ThresholdRecord& rec);
    void seal_guidance(const GuidanceRecord& rec);

    ServiceConfig config_;
    Clock clock_;
    std::unique_ptr<SessionLog> log_;
    EllipseCatalog catalog_;
    std::optional<ThresholdTable> table_;
    std::optional<UserCalibration> file_calibration_;

    bool started_ = false;
    std::string participant_;
    std::uint64_t seed_ = 0;
    std::vector<Stage> stages_;
    Stage stage_ = Stage::NotStarted;

    CalibrationState calibration_;
    ProtocolPlan threshold_plan_;
    ProtocolPlan guidance_plan_;
    std::vector<ThresholdRecord> threshold_records_;
    std::vector<GuidanceRecord> guidance_records_;
    std::optional<ThresholdTrial> threshold_active_;
    std::optional<GuidanceTrial> guidance_active_;
    std::string guidance_active_id_;

    mutable std::shared_mutex frames_mutex_;
    std::map<std::string, Frames> frames_;
};

/// HTTP front end. Command routes run one at a time; frame downloads do not
/// take the command lock.
class HttpService {
public:
    explicit HttpService(ExperimentSession& session);
    ~HttpService();

    /// Binds without serving. Port 0 picks a free port. Returns false when the
    /// address cannot be bound.
    bool bind(const std::string& host, int port);
    int port() const noexcept { return port_; }
    /// Serves until stop(); blocks.
    void run();
    void stop();

private:
    ExperimentSession& session_;
    std::unique_ptr<httplib::Server> server_;
    std::mutex command_mutex_;
    int port_ = -1;
};

}  // namespace chromavib
