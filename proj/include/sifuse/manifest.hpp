#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sifuse/common.hpp"

namespace sifuse {

#ifndef SIFUSE_SOURCE_REV
#define SIFUSE_SOURCE_REV "untracked"
#endif

// Every stage writes a manifest into its output directory before doing any
// work: command, resolved configuration with per-key provenance, seed, and
// the artifact paths it intends to produce. A run is replayable from the
// manifest alone.
struct RunManifest {
  std::string command;
  nlohmann::json resolved_config;
  nlohmann::json config_provenance;  // key -> "default" | "file" | "flag"
  uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string started_at;
  std::string source_rev = SIFUSE_SOURCE_REV;
};

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

inline void write_manifest(const std::string& dir, RunManifest manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (manifest.started_at.empty()) manifest.started_at = utc_timestamp();
  nlohmann::json j = {{"command", manifest.command},
                      {"resolved_config", manifest.resolved_config},
                      {"config_provenance", manifest.config_provenance},
                      {"seed", manifest.seed},
                      {"artifacts", manifest.artifacts},
                      {"started_at", manifest.started_at},
                      {"source_rev", manifest.source_rev}};
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("write_manifest: cannot write into " + dir);
  f << j.dump(2) << "\n";
}

// Resolves --out against the output-root environment variable.
inline std::string resolve_out_dir(const std::string& out) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("SIFUSE_OUT_ROOT");
  fs::path p(out);
  if (root && *root && p.is_relative()) return (fs::path(root) / p).string();
  return out;
}

}  // namespace sifuse
