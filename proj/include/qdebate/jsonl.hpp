#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qdebate/error.hpp"

namespace qdebate::jsonl {

using json = nlohmann::json;

/// Reads every record of a line-delimited JSON stream. Blank lines are skipped.
/// A truncated final line (no trailing newline and not parseable) is ignored when
/// `tolerate_torn_tail` is set, which is how append-only logs survive a crash.
inline std::vector<json> read(std::istream& in, bool tolerate_torn_tail = false) {
    std::vector<json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            if (tolerate_torn_tail && in.eof())
                break;
            throw ParseError(lineno, e.what());
        }
    }
    return out;
}

inline std::vector<json> read_file(const std::filesystem::path& path, bool tolerate_torn_tail = false) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path.string());
    return read(in, tolerate_torn_tail);
}

inline void write_file(const std::filesystem::path& path, const std::vector<json>& records) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    for (const auto& r : records)
        out << r.dump() << '\n';
}

/// Append-only writer with a single-writer contract: every `append` call lands as
/// one contiguous write followed by a flush.
class Appender {
public:
    explicit Appender(std::filesystem::path path) : path_(std::move(path)) {
        if (path_.has_parent_path())
            std::filesystem::create_directories(path_.parent_path());
        out_.open(path_, std::ios::app);
        if (!out_)
            throw DataError("cannot open " + path_.string() + " for append");
    }

    void append(const std::vector<json>& records) {
        std::string buf;
        for (const auto& r : records) {
            buf += r.dump();
            buf += '\n';
        }
        std::lock_guard lock(mu_);
        out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        out_.flush();
        if (!out_)
            throw DataError("write failed on " + path_.string());
    }

    void append(const json& record) { append(std::vector<json>{record}); }

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mu_;
};

} // namespace qdebate::jsonl
