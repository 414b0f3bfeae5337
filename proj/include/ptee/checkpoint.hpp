#pragma once

#include <string>

#include <json.hpp>

#include "ptee/param_store.hpp"

namespace ptee {

// Checkpoint container, little-endian:
//   bytes 0..3   magic "PTEE"
//   bytes 4..7   format version (u32, currently 1)
//   bytes 8..11  manifest length in bytes (u32)
//   then         UTF-8 JSON manifest {"model": ..., "tensors": [...]}
//   then         raw float32 tensor payloads in manifest order, each one
//                starting at an 8-byte-aligned file offset
// Tensor values round-trip bit-exactly. `model` is an arbitrary descriptor
// supplied by the caller (network structure, branch table, ...).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  nlohmann::ordered_json model;
  ParameterStore params;
};

// Writes atomically: a temporary file in the same directory is renamed over
// `path` only after every byte has been written.
void save_checkpoint(const std::string& path, const nlohmann::ordered_json& model,
                     const ParameterStore& params);

// Rejects damaged files with one of four distinct diagnostics: bad magic,
// unsupported version, truncated payload (file too short), and
// manifest/payload mismatch (file too long).
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ptee
