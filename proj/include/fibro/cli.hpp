#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace fibro::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Written once per command invocation, atomically, at the end of the run.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json config_paths = nlohmann::json::object();
    nlohmann::json seeds = nlohmann::json::object();
    std::string start_time;
    std::string end_time;
    std::vector<std::string> artifacts;
    std::string fingerprint;
};

void to_json(nlohmann::json& j, const RunManifest& m);

/// Writes `path.tmp` then renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

nlohmann::json config_schema();

/// Runs one command line. Returns 0 on success, 1 on validation errors or
/// usage problems, 2 on internal errors. Log and error records go to `err`
/// as single `key=value` lines; command results go to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace fibro::cli
