#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "milkt/mil_model.hpp"
#include "milkt/transfer.hpp"

// Checkpoint directories: manifest.json plus one MILB file per tensor, listed
// in parameter order.
namespace milkt {

struct MILCheckpoint {
  MILArch arch;
  MILParams params;
  std::uint64_t seed = 0;
  std::string source_tag;  // dataset the model was trained on
};

struct MHFACheckpoint {
  MHFAParams params;
  std::uint64_t seed = 0;
};

nlohmann::json arch_to_json(const MILArch& a);
MILArch arch_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& dir, const MILCheckpoint& ckpt);
/// Throws IoError for missing files and FormatError for malformed content.
MILCheckpoint load_checkpoint(const std::filesystem::path& dir);

void save_mhfa_checkpoint(const std::filesystem::path& dir, const MHFACheckpoint& ckpt);
MHFACheckpoint load_mhfa_checkpoint(const std::filesystem::path& dir);

/// Reads and parses a JSON file, mapping failures to IoError / FormatError.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace milkt
