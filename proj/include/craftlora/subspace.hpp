#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "craftlora/denoiser.hpp"
#include "craftlora/optim.hpp"
#include "craftlora/pairgen.hpp"
#include "craftlora/perceptual.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

/// Linear per-layer rank decay from r_max at layer 1 to r_min at layer L.
struct RankSchedule {
  int r_max = 128;
  int r_min = 4;
  int layers = 8;

  void validate() const;
  /// round(r_max − (l−1)/(L−1)·(r_max − r_min)), ties up, at least 1; l is 1-based.
  int rank_at(int l) const;
};

/// QR of [Q_c | Q_s] with degenerate columns dropped. Empty operands are allowed.
Matrix merge_subspaces(const Matrix& q_content, const Matrix& q_style);

/// W_l ← W_l − Q_l·Q_lᵀ·W_l for every layer.
LayeredBackbone apply_rank_limited_update(const LayeredBackbone& backbone, const std::vector<Matrix>& q_per_layer);

struct SubspaceBases {
  std::vector<Matrix> content;  // per layer, d_in × r_l
  std::vector<Matrix> style;

  std::size_t size() const noexcept { return content.size(); }
};

SubspaceBases init_bases(const LayeredBackbone& backbone, const RankSchedule& schedule, std::uint64_t seed,
                         double init_scale = 0.02);

/// Gradient of a scalar function of Q (with Q from the positive-diagonal QR of
/// b) pulled back to b. b must have full column rank.
Matrix qr_backward(const QrResult& qr, const Matrix& d_q);

/// One contrast pair with its conditioning precomputed.
struct TrunkExample {
  ImageGrid content_target;
  ImageGrid style_target;
  Embedding content_embedding;
  Embedding style_embedding;
};

std::vector<TrunkExample> make_trunk_examples(const std::vector<ContrastPair>& pairs, std::size_t embedding_dim);

/// Timestep and noise drawn for each member of one pair.
struct TrunkDraw {
  std::size_t example = 0;
  int t_content = 1;
  int t_style = 1;
  ImageGrid noise_content;
  ImageGrid noise_style;
};

struct TrunkLossTerms {
  double total = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double regularizer = 0.0;
  std::vector<Matrix> grad_content;
  std::vector<Matrix> grad_style;
};

struct TrunkLossOptions {
  double lambda_reg = 1e-4;
  double alpha_perc = 0.1;
  bool with_gradients = true;
  unsigned threads = 1;
};

/// Task loss over a batch plus λ_reg·Σ_l(‖B_c‖² + ‖B_s‖²). The content member
/// of each pair is predicted on W0 with span(Q_c) projected out, the style
/// member on W0 with span(Q_s) projected out, so each member's loss reaches
/// only its own basis. Task loss per member is the L1 distance of the x̂₀
/// prediction to the target plus α_perc times the perceptual distance; the
/// batch mean over pairs is taken.
TrunkLossTerms trunk_loss(const Denoiser& net, const LayeredBackbone& w0, const SubspaceBases& bases,
                          const std::vector<TrunkExample>& examples, const std::vector<TrunkDraw>& draws,
                          const ConvFeatureExtractor& features, const TrunkLossOptions& options);

std::vector<TrunkDraw> draw_trunk_batch(const Denoiser& net, std::size_t n_examples, std::size_t batch,
                                        CounterRng& rng);

struct TrunkConfig {
  RankSchedule ranks{16, 2, 8};
  std::size_t steps = 500;
  std::size_t batch = 4;
  WarmupCosine lr{1e-4, 1e-3, 1e-5, 100, 500};
  double lambda_reg = 1e-4;
  double alpha_perc = 0.1;
  double init_scale = 0.02;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Pairs used for the fixed before/after evaluation loss.
  std::size_t eval_pairs = 16;

  void validate() const;
};

struct TrunkResult {
  LayeredBackbone w_init;
  SubspaceBases bases;
  std::vector<Matrix> q_combined;
  std::vector<double> losses;  // per-step minibatch loss
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::size_t degenerate_pairs = 0;
};

/// Gradient descent on the bases with W0 frozen; Q is re-derived by QR every
/// step. The result projects W0 onto the complement of the merged subspaces.
TrunkResult finetune_trunk(const Denoiser& net, const LayeredBackbone& w0, const std::vector<ContrastPair>& pairs,
                           const TrunkConfig& config);

/// Fixed-draw loss used to compare bases before and after training.
double trunk_eval_loss(const Denoiser& net, const LayeredBackbone& w0, const SubspaceBases& bases,
                       const std::vector<TrunkExample>& examples, const ConvFeatureExtractor& features,
                       const TrunkConfig& config);

}  // namespace craftlora
