#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cftclip/errors.hpp"
#include "cftclip/rng.hpp"

namespace cftclip {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Writes via a sibling temp file + rename so readers never observe a torn file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
    namespace fs = std::filesystem;
    fs::path dir = path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) raise(ErrorCode::IoError, "cannot open temp file for " + path.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) raise(ErrorCode::IoError, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

// One JSON value per non-empty line. The callback gets (1-based line, parsed value).
inline void for_each_jsonl_line(const std::filesystem::path& path,
                                const std::function<void(int, const json&)>& fn) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json value = json::parse(line, nullptr, false);
        if (value.is_discarded())
            throw SchemaError(lineno, "<line>", "not valid JSON");
        fn(lineno, value);
    }
}

inline std::string to_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const json& row : rows) {
        out += row.dump();
        out += '\n';
    }
    return out;
}

// Artifact timestamps honor SOURCE_DATE_EPOCH (reproducible-builds convention)
// and default to 0 so that re-runs stay byte-identical.
inline std::int64_t artifact_timestamp() {
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
        char* end = nullptr;
        long long v = std::strtoll(env, &end, 10);
        if (end && *end == '\0') return static_cast<std::int64_t>(v);
    }
    return 0;
}

// Content digest used in run manifests (FNV-1a 64, hex; not cryptographic).
inline std::string file_digest(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return std::string("fnv1a64:") + buf;
}

} // namespace cftclip
