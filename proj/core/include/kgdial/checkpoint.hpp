#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "kgdial/autodiff.hpp"

namespace kgdial {

// Binary layout (all integers little-endian):
//   magic "KGDCKPT\0" | u32 version | u32 descriptor length | descriptor JSON
//   | u32 parameter count | per parameter: u32 name length, name bytes,
//     u32 rank, u64 dims[rank], f32 values[product(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json descriptor;
  ParameterSet params;
};

/// Parameters are stored as 32-bit floats; loading widens them exactly, so
/// save(load(bytes)) == bytes.
std::string serialize_checkpoint(const nlohmann::json& descriptor, const ParameterSet& params);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& descriptor,
                     const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to 32-bit precision, matching a save/load cycle.
void round_to_storage_precision(ParameterSet& params);

}  // namespace kgdial
