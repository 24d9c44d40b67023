#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "craftlora/denoiser.hpp"
#include "craftlora/image.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

// --- frequency-domain decomposition ---------------------------------------

/// Orthonormal DCT-II basis, C(k, n) = s_k cos(π(2n+1)k / 2N).
Matrix dct_matrix(std::size_t n);
ImageGrid dct2(const ImageGrid& img);
ImageGrid idct2(const ImageGrid& coeffs);

/// Gaussian low-pass with gain exp(−(f / (σ·f_Nyquist))² / 2) on the 2-D DFT
/// grid; f is radial frequency. BadCutoff unless 0 < σ ≤ 1.
ImageGrid gaussian_lowpass(const ImageGrid& img, double sigma);
/// img − gaussian_lowpass(img, σ); signed.
ImageGrid style_residual(const ImageGrid& img, double sigma);

inline constexpr double kPaperCutoff = 0.35;
inline constexpr double kCutoffSweep[] = {0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};

enum class MaskKind { Low, High };

/// Binary radial mask on the DCT index grid; f(ky, kx) = sqrt((ky/H)² + (kx/W)²)
/// in units of the Nyquist frequency. Low keeps f ≤ cutoff, High keeps the rest.
struct FrequencyMask {
  MaskKind kind = MaskKind::Low;
  double cutoff = kPaperCutoff;

  ImageGrid materialize(std::size_t height, std::size_t width) const;
};

/// F⁻¹(mask ⊙ F(latent)) with F the orthonormal DCT-II.
ImageGrid freq_mask_filter(const ImageGrid& latent, const ImageGrid& mask);
ImageGrid freq_mask_filter(const ImageGrid& latent, const FrequencyMask& mask);

/// One reverse step whose clean-image estimate is frequency filtered before the
/// DDPM posterior update. ModelUntrained if `weights` were never trained.
ImageGrid filtered_denoise_step(const Denoiser& net, const LayeredBackbone& weights,
                                const ImageGrid& z_t, int t, const std::vector<double>& embedding,
                                const ImageGrid& mask, CounterRng& rng);

// --- contrastive pair dataset ---------------------------------------------

struct ContrastPair {
  int pair_id = 0;
  int content_index = 0;
  int style_index = 0;
  ImageGrid content_image;
  ImageGrid style_image;
  std::string content_prompt;
  std::string style_prompt;
  std::string content_modifier;
  std::string style_modifier;

  /// Text conditioning for the content member (P_c, P_sm) and style member (P_cm, P_s).
  std::string content_text() const { return content_prompt + " " + style_modifier; }
  std::string style_text() const { return content_modifier + " " + style_prompt; }
};

enum class PairMode { Synthetic, Diffusion };

struct PairGenConfig {
  int n_content = 10;
  int n_style = 10;
  double sigma = kPaperCutoff;
  PairMode mode = PairMode::Synthetic;
  std::uint64_t seed = 0;
  std::size_t height = 16;
  std::size_t width = 16;
  unsigned threads = 1;
};

/// Trained model used by diffusion-mode generation.
struct DiffusionSource {
  const Denoiser* net = nullptr;
  const LayeredBackbone* weights = nullptr;
};

/// Toy vocabulary (10 entries each, wrapped when more are requested).
const std::vector<std::string>& content_vocabulary();
const std::vector<std::string>& content_modifier_vocabulary();
const std::vector<std::string>& style_vocabulary();
const std::vector<std::string>& style_modifier_vocabulary();

/// Parametric references used by synthetic mode: smooth shape layouts for
/// content and zero-mean textures for style.
ImageGrid content_reference(int index, std::size_t height, std::size_t width);
ImageGrid style_texture(int index, std::size_t height, std::size_t width, std::uint64_t seed);
/// clamp01(content_i + texture_j)
ImageGrid compose(int content_index, int style_index, std::size_t height, std::size_t width,
                  std::uint64_t seed);

/// Full Cartesian product of content × style references, pair_id = i·n_style + j.
std::vector<ContrastPair> generate_pair_dataset(const PairGenConfig& config,
                                                const DiffusionSource& source = {});

}  // namespace craftlora
