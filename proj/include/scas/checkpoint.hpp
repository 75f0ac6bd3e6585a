#pragma once
// Parameter files: one JSON header line followed by the raw parameter
// vector as little-endian IEEE-754 doubles.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "scas/nn.hpp"

namespace scas {

struct CheckpointHeader {
  nn::MlpSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  CheckpointHeader header;
  nn::MlpParams params;
};

nlohmann::json spec_to_json(const nn::MlpSpec& spec);
nn::MlpSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const nn::MlpParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace scas
