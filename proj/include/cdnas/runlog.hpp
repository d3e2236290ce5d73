#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdnas/tensor.hpp"

namespace cdnas {

// Append-only experiment log: one JSON object per line. Appends are single
// O_APPEND writes of whole lines, so concurrent writers interleave records,
// never bytes. Readers quarantine any line that does not parse (e.g. the tail
// left by a killed process) instead of failing.

struct RunRecord {
    std::string timestamp;  // ISO 8601 UTC
    uint64_t config_hash = 0;
    std::string command;
    std::map<std::string, double> metrics;
    std::string note;
};

inline std::string utc_timestamp_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string run_record_to_line(const RunRecord& r) {
    nlohmann::json j;
    j["timestamp"] = r.timestamp;
    j["config_hash"] = r.config_hash;
    j["command"] = r.command;
    j["metrics"] = r.metrics;
    if (!r.note.empty()) j["note"] = r.note;
    return j.dump();
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config_hash = j.at("config_hash").get<uint64_t>();
    r.command = j.at("command").get<std::string>();
    if (j.contains("metrics"))
        for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = v.get<double>();
    if (j.contains("note")) r.note = j.at("note").get<std::string>();
    return r;
}

inline void append_run_record(const std::string& path, const RunRecord& r) {
    const std::string line = run_record_to_line(r) + "\n";
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    require(fd >= 0, "runlog: cannot open " + path);
    const ssize_t n = ::write(fd, line.data(), line.size());
    ::close(fd);
    require(n == static_cast<ssize_t>(line.size()), "runlog: short write to " + path);
}

// Reads all intact records; broken or truncated lines land in `quarantined`.
inline std::vector<RunRecord> read_run_log(const std::string& path,
                                           std::vector<std::string>* quarantined = nullptr) {
    std::vector<RunRecord> out;
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "runlog: cannot open " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t pos = 0;
    while (pos < content.size()) {
        const size_t nl = content.find('\n', pos);
        const bool complete = nl != std::string::npos;
        const std::string line = content.substr(pos, complete ? nl - pos : std::string::npos);
        pos = complete ? nl + 1 : content.size();
        if (line.empty()) continue;
        if (!complete) {  // no trailing newline: a writer died mid-line
            if (quarantined) quarantined->push_back(line);
            continue;
        }
        try {
            out.push_back(run_record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
            if (quarantined) quarantined->push_back(line);
        }
    }
    return out;
}

}  // namespace cdnas
