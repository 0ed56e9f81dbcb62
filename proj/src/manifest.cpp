#include "spde/manifest.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace spde {

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a64_file: cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char chunk[4096];
  while (in.read(chunk, sizeof chunk) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(chunk[i]);
      hash *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  return hash;
}

void RunManifest::add_input(const std::filesystem::path& path) {
  std::ostringstream hex;
  hex << std::hex << fnv1a64_file(path);
  input_digests[path.string()] = hex.str();
}

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["input_digests"] = input_digests;
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  j["wall_clock_seconds"] = wall_clock_seconds;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("RunManifest::write: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace spde
