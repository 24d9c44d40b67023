#pragma once

#include <cstdint>
#include <vector>

#include "craftlora/image.hpp"

namespace craftlora {

/// Frozen, seed-initialised stack of three 3×3 convolutions (1→4→8→8 channels,
/// zero padding, tanh). Stands in for a pretrained perceptual network.
class ConvFeatureExtractor {
 public:
  explicit ConvFeatureExtractor(std::uint64_t seed = 0xFEA7);

  struct Activations {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::vector<double>> layers;  // channel-major feature maps per layer
  };

  Activations forward(const ImageGrid& img) const;

  /// Σ_j (1/M_j)·‖φ_j(a) − φ_j(b)‖₁ over the three layers, M_j the element count.
  double l1_distance(const ImageGrid& a, const ImageGrid& b) const;

  /// Value of l1_distance(x, target) and its gradient with respect to x.
  double l1_distance_grad(const ImageGrid& x, const Activations& target, ImageGrid& grad) const;

  static constexpr int kLayers = 3;

 private:
  struct Conv {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;  // [out][in][3][3]
  };
  std::vector<Conv> convs_;
};

}  // namespace craftlora
