#include "chromavib/session_log.hpp"

#include <zlib.h>

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace chromavib {

using nlohmann::json;

namespace {

json header_record() { return json{{"format", kSessionLogFormat}, {"version", kSessionLogVersion}}; }

std::string hex8(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

std::uint32_t crc_of(const std::string& text) {
    return std::uint32_t(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()), uInt(text.size())));
}

std::string sys_error(const std::string& what, const std::filesystem::path& p) {
    return what + " " + p.string() + ": " + std::strerror(errno);
}

std::pair<std::string, int> key_of(const json& record) {
    if (!record.is_object() || !record.contains("kind") || !record.contains("index") ||
        !record["kind"].is_string() || !record["index"].is_number_integer()) {
        throw std::invalid_argument("log records need a string `kind` and an integer `index`");
    }
    return {record["kind"].get<std::string>(), record["index"].get<int>()};
}

}  // namespace

std::string encode_log_line(const json& record) {
    const std::string text = record.dump();
    return hex8(crc_of(text)) + " " + text;
}

std::optional<json> decode_log_line(const std::string& line) {
    if (line.size() < 10 || line[8] != ' ') {
        return std::nullopt;
    }
    const std::string text = line.substr(9);
    if (hex8(crc_of(text)) != line.substr(0, 8)) {
        return std::nullopt;
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    return j;
}

SessionLog::SessionLog(std::filesystem::path path) : path_(std::move(path)) {
    std::error_code ec;
    const bool exists = std::filesystem::exists(path_, ec);
    if (!exists || std::filesystem::file_size(path_, ec) == 0) {
        write_line(encode_log_line(header_record()));
        return;
    }

    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        throw StorageFailure(sys_error("cannot read session log", path_));
    }
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    in.close();

    std::size_t pos = 0;
    std::size_t good_end = 0;
    int line_no = 0;
    while (pos < bytes.size()) {
        const std::size_t nl = bytes.find('\n', pos);
        const bool terminated = nl != std::string::npos;
        const std::size_t end = terminated ? nl : bytes.size();
        const std::string line = bytes.substr(pos, end - pos);
        const std::size_t next = terminated ? nl + 1 : bytes.size();
        ++line_no;
        const bool last = next >= bytes.size();

        auto rec = terminated ? decode_log_line(line) : std::nullopt;
        if (!rec) {
            if (last && line_no > 1) {
                warnings_.push_back("session log " + path_.string() + ": dropped damaged final record at line " +
                                    std::to_string(line_no));
                break;
            }
            throw StorageFailure("session log " + path_.string() + ": corrupt record at line " +
                                 std::to_string(line_no));
        }
        if (line_no == 1) {
            if (*rec != header_record()) {
                throw StorageFailure("session log " + path_.string() + ": unsupported header " + rec->dump());
            }
        } else {
            std::pair<std::string, int> key;
            try {
                key = key_of(*rec);
            } catch (const std::invalid_argument& e) {
                throw StorageFailure("session log " + path_.string() + ":" + std::to_string(line_no) + ": " +
                                     e.what());
            }
            if (!keys_.insert(key).second) {
                throw StorageFailure("session log " + path_.string() + ": duplicate record " + key.first + "#" +
                                     std::to_string(key.second) + " at line " + std::to_string(line_no));
            }
            records_.push_back(std::move(*rec));
        }
        good_end = next;
        pos = next;
    }

    if (good_end < bytes.size()) {
        std::filesystem::resize_file(path_, good_end, ec);
        if (ec) {
            throw StorageFailure("cannot truncate damaged tail of " + path_.string() + ": " + ec.message());
        }
    }
}

bool SessionLog::contains(const std::string& kind, int index) const { return keys_.count({kind, index}) > 0; }

void SessionLog::append(const json& record) {
    const auto key = key_of(record);
    if (keys_.count(key)) {
        throw DuplicateRecord("record " + key.first + "#" + std::to_string(key.second) + " is already logged");
    }
    write_line(encode_log_line(record));
    keys_.insert(key);
    records_.push_back(record);
}

void SessionLog::write_line(const std::string& line) {
    const std::string payload = line + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw StorageFailure(sys_error("cannot open session log", path_));
    }
    const ssize_t n = ::write(fd, payload.data(), payload.size());
    const bool wrote = n == ssize_t(payload.size());
    const int saved = errno;
    const bool synced = wrote && ::fsync(fd) == 0;
    ::close(fd);
    if (!wrote || !synced) {
        errno = wrote ? errno : saved;
        throw StorageFailure(sys_error(wrote ? "cannot sync session log" : "short write to session log", path_));
    }
}

std::string SessionLog::serialize() const {
    std::string out = encode_log_line(header_record()) + "\n";
    for (const auto& r : records_) {
        out += encode_log_line(r) + "\n";
    }
    return out;
}

}  // namespace chromavib
