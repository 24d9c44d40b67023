#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "craftlora/image.hpp"
#include "craftlora/rng.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

using Embedding = std::vector<double>;

struct NamedLayer {
  std::string name;
  Matrix w;  // d_in × d_out; forward is h_out = Wᵀ h_in
};

/// Ordered weight layers of the toy denoiser.
struct LayeredBackbone {
  std::vector<NamedLayer> layers;
  bool trained = false;

  std::size_t size() const noexcept { return layers.size(); }
  /// 0-based index of a layer name, or throws OutOfRange.
  std::size_t index_of(const std::string& name) const;
  std::vector<std::string> names() const;

  /// L ≥ 2, unique names, d_out(l) == d_in(l+1), finite entries.
  void validate() const;
};

double max_abs_diff(const LayeredBackbone& a, const LayeredBackbone& b);

/// Linear-β DDPM schedule; timesteps are 1-based.
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  /// ᾱ_t; ᾱ_0 = 1.
  double alpha_bar(int t) const;

  double posterior_x0_coef(int t) const;
  double posterior_xt_coef(int t) const;
  double posterior_variance(int t) const;

 private:
  explicit NoiseSchedule(std::vector<double> betas);
  void check_t(int t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

struct DenoiserArch {
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t hidden = 64;
  std::size_t layers = 8;
  std::size_t embedding_dim = 64;
  /// Seeds the fixed (untrained) conditioning projection.
  std::uint64_t arch_seed = 0x5EED;
  /// Data variance assumed by the ε-space skip connection.
  double data_variance = 0.1;

  std::size_t pixels() const noexcept { return image_height * image_width; }
  std::string layer_name(std::size_t index) const { return "layer" + std::to_string(index + 1); }
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  std::vector<double> input;
  std::vector<std::vector<double>> hidden;  // h_1 .. h_{L-1}
  std::vector<std::vector<double>> preact;  // tanh(z_l) for residual layers, l = 2..L-1
  double skip = 0.0;
  double out_scale = 0.0;
  std::vector<double> eps;
};

/// L fully connected layers on the flattened image:
///   h1 = tanh(W1ᵀx + P·e + τ(t)),  h_l = h_{l-1} + tanh(W_lᵀh_{l-1}),
///   ε̂ = c_skip(t)·x + c_out(t)·W_Lᵀh_{L-1}
/// P is a fixed seeded projection; τ is a sinusoidal timestep embedding.
class Denoiser {
 public:
  Denoiser(DenoiserArch arch, NoiseSchedule schedule);

  const DenoiserArch& arch() const noexcept { return arch_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }

  LayeredBackbone init_backbone(std::uint64_t seed) const;
  Embedding null_embedding() const { return Embedding(arch_.embedding_dim, 0.0); }

  /// Throws ShapeMismatch if `weights` does not fit this architecture.
  void check_weights(const LayeredBackbone& weights) const;

  ImageGrid predict_eps(const ImageGrid& x_t, int t, std::span<const double> embedding,
                        const LayeredBackbone& weights) const;

  ForwardCache forward(const ImageGrid& x_t, int t, std::span<const double> embedding,
                       const LayeredBackbone& weights) const;

  /// Accumulates dL/dW_l into `grads` (one matrix per layer) given dL/dε̂.
  void backward(const ForwardCache& cache, std::span<const double> d_eps,
                const LayeredBackbone& weights, std::vector<Matrix>& grads) const;

  std::vector<double> timestep_embedding(int t) const;

  ImageGrid forward_noise(const ImageGrid& x0, int t, const ImageGrid& noise) const;
  ImageGrid predict_x0(const ImageGrid& x_t, int t, const ImageGrid& eps) const;
  /// Posterior sample x_{t-1}; at t = 1 the posterior mean is returned without noise.
  ImageGrid ddpm_step(const ImageGrid& x_t, int t, const ImageGrid& eps_hat, CounterRng& rng) const;
  /// Posterior update given an explicit clean estimate.
  ImageGrid posterior_step(const ImageGrid& x_t, int t, const ImageGrid& x0_hat, CounterRng& rng) const;

  ImageGrid gaussian_image(CounterRng& rng) const;

 private:
  DenoiserArch arch_;
  NoiseSchedule schedule_;
  Matrix cond_projection_;  // hidden × embedding_dim
};

struct TrainingExample {
  ImageGrid image;
  Embedding embedding;
};

struct DenoiserTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 2e-3;
  /// Probability of replacing the conditioning with the null embedding.
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct DenoiserTrainResult {
  LayeredBackbone weights;
  std::vector<double> losses;  // per-step mean squared ε error
};

/// ε-matching training of all backbone layers from `seed`-initialised weights.
DenoiserTrainResult train_denoiser(const Denoiser& net, const std::vector<TrainingExample>& data,
                                   const DenoiserTrainConfig& config);

}  // namespace craftlora
