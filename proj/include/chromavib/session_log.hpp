#pragma once

// Append-only session log. One record per line:
//
//   <crc32 of the JSON text, 8 lowercase hex digits> <JSON object>
//
// The first record is a header {"format":"chromavib-session-log","version":1}.
// Every record carries "kind" and "index"; (kind, index) is unique.

#include "chromavib/error.hpp"

#include "json.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace chromavib {

inline constexpr const char* kSessionLogFormat = "chromavib-session-log";
inline constexpr int kSessionLogVersion = 1;

/// `<crc> <json>` without the trailing newline.
std::string encode_log_line(const nlohmann::json& record);

/// Parses one line; nullopt when the checksum or JSON is bad.
std::optional<nlohmann::json> decode_log_line(const std::string& line);

class SessionLog {
public:
    /// Opens or creates the log. An existing log is verified: a damaged final
    /// line (a torn write) is cut off and reported in warnings(); damage
    /// anywhere else throws StorageFailure.
    explicit SessionLog(std::filesystem::path path);

    const std::filesystem::path& path() const noexcept { return path_; }

    /// Records after the header, in file order.
    const std::vector<nlohmann::json>& records() const noexcept { return records_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    /// Writes one line with a single append and fsyncs. Throws DuplicateRecord
    /// when (kind, index) already exists and StorageFailure on I/O errors.
    void append(const nlohmann::json& record);

    bool contains(const std::string& kind, int index) const;

    /// Canonical bytes of the whole log as it would be written from memory.
    std::string serialize() const;

private:
    void write_line(const std::string& line);

    std::filesystem::path path_;
    std::vector<nlohmann::json> records_;
    std::set<std::pair<std::string, int>> keys_;
    std::vector<std::string> warnings_;
};

}  // namespace chromavib
