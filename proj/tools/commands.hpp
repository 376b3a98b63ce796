#pragma once

#include "coda/annotator.hpp"
#include "coda/config.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace coda::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// A fully resolved run: what a manifest stores and what replay executes.
struct Invocation {
    std::string command;
    std::map<std::string, std::string> arguments;
    RunConfig config;
};

// Raised for bad flags or config values; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument names that hold output paths, per command.
std::vector<std::string> output_arguments(const std::string& command);
std::vector<std::string> input_arguments(const std::string& command);

// Runs the invocation, writes its outputs and a manifest next to the primary
// output. Returns the manifest path.
std::filesystem::path run_invocation(const Invocation& invocation);

Invocation invocation_from_manifest(const RunManifest& manifest);
std::filesystem::path manifest_path(const Invocation& invocation);

std::string version_text();

}  // namespace coda::cli
