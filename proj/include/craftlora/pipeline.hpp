#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "craftlora/adapters.hpp"
#include "craftlora/config.hpp"
#include "craftlora/denoiser.hpp"
#include "craftlora/evalkit.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/pairgen.hpp"

namespace craftlora {

Denoiser make_denoiser(const RunConfig& config);

/// Composite images of the toy vocabulary (10 × 10) captioned "content style".
std::vector<TrainingExample> base_training_set(const RunConfig& config);
LayeredBackbone train_base(const Denoiser& net, const RunConfig& config);

/// PGM pair images plus manifest.tsv:
///   pair_id \t content file \t style file \t content prompt \t style prompt
///   \t content modifier \t style modifier
void write_dataset(const std::filesystem::path& dir, const std::vector<ContrastPair>& pairs);
std::vector<ContrastPair> read_dataset(const std::filesystem::path& dir);

/// One row or column of an evaluation grid.
struct GridEntry {
  std::string prompt;
  ImageGrid reference;
  std::optional<LoraAdapter> adapter;
};

struct GridSpec {
  std::vector<GridEntry> contents;
  std::vector<GridEntry> styles;
  std::uint64_t seed = 0;
};

/// JSON: {"seed": n, "contents": [{"prompt", "reference", "adapter"?}], "styles": [...]}.
/// Relative paths resolve against the spec file's directory. Adapters are
/// checked against `host` unless `check_hosts` is false.
GridSpec load_grid_spec(const std::filesystem::path& path, const LayeredBackbone& host, bool check_hosts);

/// grid[i][j] sampled from "content_i style_j" with content adapter i and
/// style adapter j, every cell from the same seed.
std::vector<std::vector<ImageGrid>> sample_grid(const Denoiser& net, const LayeredBackbone& host,
                                                const GridSpec& spec, const GuidanceConfig& guidance,
                                                const ExpertEncoderParams& encoder, unsigned threads = 1);

EvalReport evaluate_spec(const Denoiser& net, const LayeredBackbone& host, const GridSpec& spec,
                         const RunConfig& config, const ExpertEncoderParams& encoder);

/// Toy disentanglement study: trains adapters for `n_content` contents and
/// `n_style` styles on `host` and evaluates the sampled grid.
EvalReport disentanglement_on_host(const Denoiser& net, const LayeredBackbone& host,
                                   const std::vector<ContrastPair>& pairs, const RunConfig& config,
                                   int n_content, int n_style);

}  // namespace craftlora
