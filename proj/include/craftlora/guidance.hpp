#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "craftlora/adapters.hpp"
#include "craftlora/denoiser.hpp"
#include "craftlora/image.hpp"
#include "craftlora/prompt.hpp"

namespace craftlora {

/// Inclusive timestep interval.
struct TimeWindow {
  int first = 1;
  int last = 1;
  bool contains(int t) const noexcept { return t >= first && t <= last; }
};

enum class ScaleCurve { Cosine, Linear };

std::string to_string(ScaleCurve curve);
ScaleCurve scale_curve_from_string(const std::string& text);

struct GuidanceConfig {
  double omega = 7.5;
  TimeWindow content_window{1, 35};
  TimeWindow style_window{15, 50};
  double alpha_min = 0.5;
  double alpha_max = 1.0;
  ScaleCurve curve = ScaleCurve::Cosine;
  /// Ablation: the unconditional pass also runs on the adapted weights.
  bool symmetric = false;

  /// Windows inside [1, steps], α_min ≤ α_max, ω ≥ 0.
  void validate(int steps) const;
};

struct Gammas {
  double content = 0.0;
  double style = 0.0;
  bool operator==(const Gammas&) const = default;
};

/// (𝟙[t ∈ T_c], 𝟙[t ∈ T_s]).
Gammas gamma_schedule(int t, const TimeWindow& content, const TimeWindow& style);

/// α_min + (α_max − α_min)·g((T − t)/T).
double temporal_alpha(int t, int steps, const GuidanceConfig& config);

/// Identity, content-text and style-text branches (64→64, tanh) feeding a
/// 192→2 softplus head. A branch whose input embedding is all zero is gated off.
struct ExpertEncoderParams {
  struct Branch {
    Matrix w;  // out × in
    std::vector<double> b;
  };
  Branch identity;
  Branch content;
  Branch style;
  Matrix head_w;  // 2 × 192
  double head_b_content = 0.0;
  double head_b_style = 0.0;
  Matrix id_table;  // concept id × 64

  /// Seeded branches, zero head weights and softplus⁻¹(1) head biases, so an
  /// active branch yields γ = 1 exactly.
  static ExpertEncoderParams defaults(std::uint64_t seed = 0xE4, std::size_t dim = kEmbeddingDim,
                                      std::size_t concepts = 16);
  Embedding id_embedding(std::size_t concept_id) const;
};

Gammas expert_gammas(const ExpertEncoderParams& params, const Embedding& id_embedding, const Embedding& e_c,
                     const Embedding& e_s);

/// Everything the sampler needs from a prompt.
struct PromptConditioning {
  PromptSpec spec;
  Embedding e_sem;
  Gammas branch;
};

PromptConditioning condition_prompt(const std::string& text, const ExpertEncoderParams& params,
                                    std::size_t concept_id = 0, std::size_t dim = kEmbeddingDim);

/// c + ω·(c − u).
ImageGrid cfg_combine(const ImageGrid& cond, const ImageGrid& uncond, double omega);

struct AcfgPrediction {
  ImageGrid eps;
  ImageGrid eps_cond;
  ImageGrid eps_uncond;
};

struct AcfgTraceRecord {
  int t = 0;
  double gamma_c = 0.0;
  double gamma_s = 0.0;
  double alpha = 0.0;
  double cond_gap = 0.0;  // ‖ε_cond − ε_uncond‖₂

  std::string to_line() const;
};

/// Conditional pass on W_cond(t) = aggregate(W_init, γ_c,eff(t), γ_s,eff(t))
/// with the prompt embedding, unconditional pass on W_init with the null
/// embedding. W_cond is rebuilt only when the effective gains change.
class AcfgGuide {
 public:
  AcfgGuide(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter* content,
            const LoraAdapter* style, Embedding e_sem, Gammas branch, GuidanceConfig config);

  /// α(t)·γ_branch·𝟙[t ∈ window] per branch.
  Gammas effective_gammas(int t) const;
  const LayeredBackbone& conditional_weights(int t);
  AcfgPrediction predict(const ImageGrid& x_t, int t);

  std::size_t evaluations() const noexcept { return evaluations_; }
  std::size_t rebuilds() const noexcept { return rebuilds_; }

 private:
  const Denoiser& net_;
  const LayeredBackbone& w_init_;
  const LoraAdapter* content_;
  const LoraAdapter* style_;
  Embedding e_sem_;
  Gammas branch_;
  GuidanceConfig config_;
  std::optional<Gammas> cached_gammas_;
  LayeredBackbone cached_;
  std::size_t evaluations_ = 0;
  std::size_t rebuilds_ = 0;
};

struct SampleResult {
  ImageGrid image;
  std::vector<ImageGrid> trajectory;  // x_T, x_{T-1}, …, x_0 when requested
  std::vector<AcfgTraceRecord> trace;
  std::size_t evaluations = 0;
};

/// x_T from seeded noise, then t = T … 1 of guided ε and a DDPM step.
SampleResult acfg_sample(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter* content,
                         const LoraAdapter* style, const PromptConditioning& prompt, const GuidanceConfig& config,
                         std::uint64_t seed, bool keep_trajectory = false);

/// Plain classifier-free guidance with one set of weights for both passes.
SampleResult cfg_sample(const Denoiser& net, const LayeredBackbone& weights, const Embedding& e_sem, double omega,
                        std::uint64_t seed, bool keep_trajectory = false);

}  // namespace craftlora
