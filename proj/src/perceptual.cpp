#include "craftlora/perceptual.hpp"

#include <cmath>

#include "craftlora/rng.hpp"

namespace craftlora {

namespace {

void conv3x3(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
             const std::vector<double>& k, std::size_t cout, std::vector<double>& y) {
  y.assign(cout * h * w, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < cin; ++i) {
      const double* ker = &k[(o * cin + i) * 9];
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          double s = 0.0;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(h)) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const long cc = static_cast<long>(c) + dc;
              if (cc < 0 || cc >= static_cast<long>(w)) continue;
              s += ker[(dr + 1) * 3 + (dc + 1)] * x[(i * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)];
            }
          }
          y[(o * h + r) * w + c] += s;
        }
      }
    }
  }
}

/// Adjoint of conv3x3 with respect to its input.
void conv3x3_adjoint(const std::vector<double>& dy, std::size_t cout, std::size_t h, std::size_t w,
                     const std::vector<double>& k, std::size_t cin, std::vector<double>& dx) {
  dx.assign(cin * h * w, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < cin; ++i) {
      const double* ker = &k[(o * cin + i) * 9];
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double g = dy[(o * h + r) * w + c];
          if (g == 0.0) continue;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(h)) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const long cc = static_cast<long>(c) + dc;
              if (cc < 0 || cc >= static_cast<long>(w)) continue;
              dx[(i * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)] += ker[(dr + 1) * 3 + (dc + 1)] * g;
            }
          }
        }
      }
    }
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

ConvFeatureExtractor::ConvFeatureExtractor(std::uint64_t seed) {
  CounterRng rng(seed, 0xC0117);
  const std::size_t channels[] = {1, 4, 8, 8};
  for (int l = 0; l < kLayers; ++l) {
    Conv c;
    c.in = channels[l];
    c.out = channels[l + 1];
    c.w.resize(c.out * c.in * 9);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.in * 9));
    for (double& v : c.w) v = scale * rng.normal();
    convs_.push_back(std::move(c));
  }
}

ConvFeatureExtractor::Activations ConvFeatureExtractor::forward(const ImageGrid& img) const {
  Activations a;
  a.height = img.height();
  a.width = img.width();
  std::vector<double> x(img.pixels().begin(), img.pixels().end());
  std::size_t cin = 1;
  for (const Conv& c : convs_) {
    std::vector<double> y;
    conv3x3(x, cin, a.height, a.width, c.w, c.out, y);
    for (double& v : y) v = std::tanh(v);
    a.layers.push_back(y);
    x = std::move(y);
    cin = c.out;
  }
  return a;
}

double ConvFeatureExtractor::l1_distance(const ImageGrid& a, const ImageGrid& b) const {
  const Activations fa = forward(a);
  const Activations fb = forward(b);
  double total = 0.0;
  for (int l = 0; l < kLayers; ++l) {
    double s = 0.0;
    for (std::size_t i = 0; i < fa.layers[l].size(); ++i) s += std::abs(fa.layers[l][i] - fb.layers[l][i]);
    total += s / static_cast<double>(fa.layers[l].size());
  }
  return total;
}

double ConvFeatureExtractor::l1_distance_grad(const ImageGrid& x, const Activations& target, ImageGrid& grad) const {
  const Activations fx = forward(x);
  double total = 0.0;
  std::vector<double> upstream;  // dL/d(output of layer l), accumulated from above
  for (int l = kLayers - 1; l >= 0; --l) {
    const auto& out = fx.layers[static_cast<std::size_t>(l)];
    const auto& tgt = target.layers[static_cast<std::size_t>(l)];
    const double inv_m = 1.0 / static_cast<double>(out.size());
    std::vector<double> dy(out.size());
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = out[i] - tgt[i];
      s += std::abs(d);
      dy[i] = sign(d) * inv_m + (upstream.empty() ? 0.0 : upstream[i]);
    }
    total += s * inv_m;
    for (std::size_t i = 0; i < out.size(); ++i) dy[i] *= 1.0 - out[i] * out[i];
    const Conv& c = convs_[static_cast<std::size_t>(l)];
    conv3x3_adjoint(dy, c.out, fx.height, fx.width, c.w, c.in, upstream);
  }
  grad = ImageGrid(x.height(), x.width(), std::move(upstream));
  return total;
}

}  // namespace craftlora
