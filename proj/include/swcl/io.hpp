#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swcl/error.hpp"
#include "swcl/rng.hpp"
#include "swcl/tensor.hpp"

namespace swcl {

using json = nlohmann::json;

/// Writes content to a temp file in the target directory, then renames into
/// place so readers never observe partial artifacts.
inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ValidationError("cannot open for writing: " + tmp.string());
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw ValidationError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_save_tensor(const std::filesystem::path& path, const Tensor& t) {
    auto tmp = path;
    tmp += ".tmp";
    save_tensor_f32(tmp, t);
    std::filesystem::rename(tmp, path);
}

inline void atomic_save_checkpoint(const std::filesystem::path& path,
                                   const NetworkParams& params) {
    auto tmp = path;
    tmp += ".tmp";
    save_checkpoint(tmp, params);
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("missing file: " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("missing manifest: " + path.string());
    std::vector<json> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        lines.push_back(json::parse(line));
    }
    return lines;
}

inline std::string to_jsonl(const std::vector<json>& lines) {
    std::string out;
    for (const auto& j : lines) {
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string hash_text(const std::string& content) { return hex64(fnv1a64(content)); }

inline std::string hash_file(const std::filesystem::path& path) {
    return hash_text(read_text(path));
}

/// Provenance sidecar: every artifact gets <artifact>.meta.json holding the
/// producing stage, seed and the effective config (plus its hash).
inline void write_meta_sidecar(const std::filesystem::path& artifact, const std::string& stage,
                               std::uint64_t seed, const json& config) {
    json meta;
    meta["stage"] = stage;
    meta["seed"] = seed;
    meta["config"] = config;
    meta["config_hash"] = hash_text(config.dump());
    auto path = artifact;
    path += ".meta.json";
    atomic_write_text(path, meta.dump(2) + "\n");
}

inline void require_exists(const std::filesystem::path& path, const char* what) {
    if (!std::filesystem::exists(path))
        throw ValidationError(std::string(what) + " not found, expected at: " + path.string());
}

}  // namespace swcl
