#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "craftlora/image.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

/// Fixed random feature map: mean-centre, project with a seeded Gaussian
/// matrix, tanh, scale to unit norm. Images with no variation map to zero.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::size_t pixels = 256, std::size_t dim = 128, std::uint64_t seed = 0xC11F);

  std::size_t dim() const noexcept { return projection_.rows(); }
  std::vector<double> features(const ImageGrid& img) const;

 private:
  Matrix projection_;  // dim × pixels
};

/// Cosine of two feature vectors; DegenerateInput if either is zero.
double feature_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Mean similarity of each generated image to the content reference.
double content_preservation(const std::vector<ImageGrid>& generated, const ImageGrid& content_reference,
                            const FeatureExtractor& fx);

/// Mean similarity of style residuals (image − lowpass at σ) to the reference's residual.
double style_fidelity(const std::vector<ImageGrid>& generated, const ImageGrid& style_reference, double sigma,
                      const FeatureExtractor& fx);

/// grid[i][j] = G(content i, style j). For each content row, the mean over
/// style pairs j < j′ of ‖f(lowpass G_ij) − f(lowpass G_ij′)‖ / √2, clamped to
/// [0, 1]; averaged over rows. GridIncomplete unless every row has the same
/// length ≥ 2.
double cross_influence(const std::vector<std::vector<ImageGrid>>& grid, double sigma, const FeatureExtractor& fx);

/// Mean of 1 − |cos(f(content), f(style))|.
double separation_score(const std::vector<std::pair<ImageGrid, ImageGrid>>& components, const FeatureExtractor& fx);

struct SweepRow {
  double sigma = 0.0;
  double score = 0.0;
};

/// Separation of (lowpass, residual) splits of `images` per σ, best first.
std::vector<SweepRow> cutoff_sweep(const std::vector<ImageGrid>& images, const std::vector<double>& sigmas,
                                   const FeatureExtractor& fx);

struct PairScore {
  std::size_t content_index = 0;
  std::size_t style_index = 0;
  double sim_c = 0.0;
  double sim_s = 0.0;
};

struct EvalReport {
  double s_c = 0.0;
  double s_s = 0.0;
  double s_x = 0.0;
  std::vector<PairScore> pairs;
  std::uint64_t seed = 0;
  std::string config_hash;

  std::string to_json() const;
};

/// S_c over each content row, S_s over each style column, S_x over the grid.
EvalReport evaluate_grid(const std::vector<std::vector<ImageGrid>>& grid,
                         const std::vector<ImageGrid>& content_references,
                         const std::vector<ImageGrid>& style_references, double sigma, const FeatureExtractor& fx);

}  // namespace craftlora
