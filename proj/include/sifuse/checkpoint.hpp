#pragma once

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sifuse/nn.hpp"

namespace sifuse {

// Self-describing binary container: magic, format version, a JSON header
// (stage tag, config snapshot, tensor table), then raw little-endian doubles.
// Round trips are bit-exact.

inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string stage;  // autoencoder | psi | phi | fusion
  nlohmann::json config;
  int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline const std::vector<std::string>& checkpoint_stages() {
  static const std::vector<std::string> stages{"autoencoder", "psi", "phi",
                                               "fusion"};
  return stages;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  bool known = false;
  for (const auto& s : checkpoint_stages()) known = known || s == ckpt.stage;
  if (!known) throw ParamError("save_checkpoint: unknown stage " + ckpt.stage);

  nlohmann::json meta;
  meta["stage"] = ckpt.stage;
  meta["step"] = ckpt.step;
  meta["config"] = ckpt.config;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors)
    table.push_back({{"name", name}, {"c", t.c}, {"h", t.h}, {"w", t.w}});
  meta["tensors"] = table;
  std::string meta_str = meta.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, 4);
  uint32_t version = kCheckpointVersion;
  uint64_t meta_len = meta_str.size();
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  f.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
  f.write(meta_str.data(), std::streamsize(meta_str.size()));
  for (const auto& [name, t] : ckpt.tensors)
    f.write(reinterpret_cast<const char*>(t.v.data()),
            std::streamsize(t.v.size() * sizeof(real)));
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

// Loads and validates fully before returning; a truncated or mis-tagged file
// leaves no partial state behind.
inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::string& expected_stage = "") {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);

  char magic[4];
  uint32_t version = 0;
  uint64_t meta_len = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  f.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  if (version != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported schema version " +
                  std::to_string(version));

  std::string meta_str(meta_len, '\0');
  f.read(meta_str.data(), std::streamsize(meta_len));
  if (!f) throw IoError("load_checkpoint: truncated header in " + path);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_checkpoint: corrupt metadata: ") +
                  e.what());
  }

  Checkpoint ckpt;
  ckpt.stage = meta.at("stage").get<std::string>();
  ckpt.step = meta.at("step").get<int64_t>();
  ckpt.config = meta.value("config", nlohmann::json::object());
  if (!expected_stage.empty() && ckpt.stage != expected_stage)
    throw IoError("load_checkpoint: stage mismatch, expected '" +
                  expected_stage + "' but file holds '" + ckpt.stage + "'");

  for (const auto& entry : meta.at("tensors")) {
    Tensor t(entry.at("c").get<int>(), entry.at("h").get<int>(),
             entry.at("w").get<int>());
    f.read(reinterpret_cast<char*>(t.v.data()),
           std::streamsize(t.v.size() * sizeof(real)));
    if (!f)
      throw IoError("load_checkpoint: truncated tensor payload in " + path);
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(),
                              std::move(t));
  }
  return ckpt;
}

inline Checkpoint checkpoint_from_params(const std::string& stage,
                                         const NamedParams& named,
                                         nlohmann::json config, int64_t step) {
  Checkpoint ckpt;
  ckpt.stage = stage;
  ckpt.config = std::move(config);
  ckpt.step = step;
  for (const auto& [name, p] : named) ckpt.tensors.emplace_back(name, p->val());
  return ckpt;
}

// Copies tensors into existing parameters, matched by name and shape.
inline void load_into_params(const Checkpoint& ckpt, const NamedParams& named) {
  if (ckpt.tensors.size() != named.size())
    throw IoError("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& [file_name, t] = ckpt.tensors[i];
    const auto& [name, p] = named[i];
    if (file_name != name)
      throw IoError("checkpoint: parameter name mismatch: file has '" +
                    file_name + "', model expects '" + name + "'");
    if (!t.same_shape(p->val()))
      throw IoError("checkpoint: shape mismatch for parameter '" + name + "'");
    p->value() = t;
  }
}

}  // namespace sifuse
