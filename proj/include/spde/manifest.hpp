#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spde {

inline constexpr const char* kToolVersion = "0.1.0";

std::uint64_t fnv1a64_file(const std::filesystem::path& path);

/// Record of one CLI invocation: enough to rerun it byte-identically.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;            // resolved flags
  std::map<std::string, std::string> input_digests;     // path -> fnv1a64 hex
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  double wall_clock_seconds = 0.0;

  void add_input(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

}  // namespace spde
