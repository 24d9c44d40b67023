#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "craftlora/adapters.hpp"
#include "craftlora/denoiser.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/pairgen.hpp"
#include "craftlora/subspace.hpp"

namespace craftlora {

/// Every knob of the desk-scale pipeline. An empty JSON document yields the defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;

  DenoiserArch arch;
  int schedule_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  DenoiserTrainConfig denoiser;

  TrunkConfig trunk;
  AdapterTrainConfig adapter;
  std::vector<std::string> routing_content;  // empty → first half of the layers
  std::vector<std::string> routing_style;    // empty → second half

  GuidanceConfig guidance;
  PairGenConfig dataset;

  /// Throws ConfigInvalid on unknown keys, wrong types or failed preconditions.
  static RunConfig from_json(const std::string& text);
  /// Reads `path`, or the file named by CRAFTLORA_CONFIG, or returns defaults.
  static RunConfig load(const std::optional<std::filesystem::path>& path);

  std::string to_json() const;
  /// FNV-1a of the canonical JSON form, 16 hex digits.
  std::string hash() const;
  void validate() const;

  NoiseSchedule schedule() const { return NoiseSchedule(schedule_steps, beta_start, beta_end); }
  LayerRouting routing() const;
  /// Sub-configs with the run seed and thread count applied.
  DenoiserTrainConfig denoiser_config() const;
  TrunkConfig trunk_config() const;
  AdapterTrainConfig adapter_config() const;
  PairGenConfig pair_config() const;
};

}  // namespace craftlora
