#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "craftlora/adapters.hpp"
#include "craftlora/denoiser.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/subspace.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

enum class CheckpointKind : std::uint32_t { Backbone = 0, Adapter = 1, Encoder = 2 };

std::string to_string(CheckpointKind kind);

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Layout (little-endian):
///   "CRFT" | u32 version | u32 kind
///   u32 n_meta  { u32 len, key, u32 len, value }*
///   u32 n_tensors { u32 len, name, u32 rows, u32 cols, f32[rows·cols] }*
///   u32 CRC-32 of every preceding byte
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  CheckpointKind kind = CheckpointKind::Backbone;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<NamedTensor> tensors;

  std::optional<std::string> meta(const std::string& key) const;
  void set_meta(const std::string& key, std::string value);
  const Matrix& tensor(const std::string& name) const;
};

std::string serialize(const Checkpoint& ckpt);
/// CorruptCheckpoint on bad magic, version, truncation, trailing bytes or CRC.
Checkpoint deserialize(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the names and 32-bit payload of every layer, as 16 hex digits.
std::string host_hash(const LayeredBackbone& backbone);

Checkpoint backbone_checkpoint(const LayeredBackbone& backbone);
LayeredBackbone backbone_from_checkpoint(const Checkpoint& ckpt);

Checkpoint bases_checkpoint(const SubspaceBases& bases, const std::vector<std::string>& layer_names);
SubspaceBases bases_from_checkpoint(const Checkpoint& ckpt, const std::vector<std::string>& layer_names);

/// Routing manifest and kind tag are written as metadata ahead of the tensors.
Checkpoint adapter_checkpoint(const LoraAdapter& adapter, const std::string& host);
LoraAdapter adapter_from_checkpoint(const Checkpoint& ckpt);
/// Throws HostMismatch unless the adapter was trained on `backbone`.
void check_host(const Checkpoint& adapter_ckpt, const LayeredBackbone& backbone);

Checkpoint encoder_checkpoint(const ExpertEncoderParams& params);
ExpertEncoderParams encoder_from_checkpoint(const Checkpoint& ckpt);

/// Values narrowed to 32 bits and widened back.
Matrix narrow32(const Matrix& m);

}  // namespace craftlora
