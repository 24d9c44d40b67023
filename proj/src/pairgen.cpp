#include "craftlora/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "craftlora/error.hpp"
#include "craftlora/parallel.hpp"
#include "craftlora/prompt.hpp"

namespace craftlora {

namespace {

void check_cutoff(double sigma) {
  if (!(sigma > 0.0 && sigma <= 1.0)) {
    throw Error(ErrorKind::BadCutoff, "cutoff must lie in (0, 1], got " + std::to_string(sigma));
  }
}

/// Y = A · X · Bᵀ for an image X.
ImageGrid separable(const Matrix& a, const ImageGrid& x, const Matrix& b) {
  Matrix xm(x.height(), x.width(), std::vector<double>(x.pixels().begin(), x.pixels().end()));
  Matrix y = matmul_nt(matmul(a, xm), b);
  return ImageGrid(y.rows(), y.cols(), std::vector<double>(y.values().begin(), y.values().end()));
}

/// Real circulant matrix of the 1-D Gaussian gain exp(−f²/2σ²), f = 2·min(k, N−k)/N.
Matrix gaussian_circulant(std::size_t n, double sigma) {
  std::vector<double> gain(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = 2.0 * static_cast<double>(std::min(k, n - k)) / static_cast<double>(n);
    gain[k] = std::exp(-0.5 * (f / sigma) * (f / sigma));
  }
  std::vector<double> kernel(n);
  for (std::size_t d = 0; d < n; ++d) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s += gain[k] * std::cos(2.0 * std::numbers::pi * static_cast<double>(k * d % n) / static_cast<double>(n));
    }
    kernel[d] = s / static_cast<double>(n);
  }
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = kernel[(i + n - j) % n];
  return m;
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Matrix dct_matrix(std::size_t n) {
  Matrix c(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      c(k, i) = s * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                             static_cast<double>(k) / (2.0 * static_cast<double>(n)));
    }
  }
  return c;
}

ImageGrid dct2(const ImageGrid& img) {
  return separable(dct_matrix(img.height()), img, dct_matrix(img.width()));
}

ImageGrid idct2(const ImageGrid& coeffs) {
  return separable(dct_matrix(coeffs.height()).transposed(), coeffs,
                   dct_matrix(coeffs.width()).transposed());
}

ImageGrid gaussian_lowpass(const ImageGrid& img, double sigma) {
  check_cutoff(sigma);
  if (img.size() == 0) return img;
  // filtered around the first pixel value
  const double offset = img.pixels()[0];
  ImageGrid centred = img;
  for (double& v : centred.pixels()) v -= offset;
  ImageGrid out = separable(gaussian_circulant(img.height(), sigma), centred, gaussian_circulant(img.width(), sigma));
  for (double& v : out.pixels()) v += offset;
  return out;
}

ImageGrid style_residual(const ImageGrid& img, double sigma) {
  return img - gaussian_lowpass(img, sigma);
}

ImageGrid FrequencyMask::materialize(std::size_t height, std::size_t width) const {
  if (!(cutoff > 0.0 && cutoff < 1.0)) {
    throw Error(ErrorKind::BadCutoff, "mask cutoff must lie in (0, 1)");
  }
  ImageGrid m(height, width);
  for (std::size_t ky = 0; ky < height; ++ky) {
    for (std::size_t kx = 0; kx < width; ++kx) {
      const double fy = static_cast<double>(ky) / static_cast<double>(height);
      const double fx = static_cast<double>(kx) / static_cast<double>(width);
      const bool low = std::sqrt(fy * fy + fx * fx) <= cutoff;
      m(ky, kx) = (low == (kind == MaskKind::Low)) ? 1.0 : 0.0;
    }
  }
  return m;
}

ImageGrid freq_mask_filter(const ImageGrid& latent, const ImageGrid& mask) {
  if (!latent.same_shape(mask)) throw Error(ErrorKind::ShapeMismatch, "mask shape");
  ImageGrid coeffs = dct2(latent);
  for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs.pixels()[i] *= mask.pixels()[i];
  return idct2(coeffs);
}

ImageGrid freq_mask_filter(const ImageGrid& latent, const FrequencyMask& mask) {
  return freq_mask_filter(latent, mask.materialize(latent.height(), latent.width()));
}

ImageGrid filtered_denoise_step(const Denoiser& net, const LayeredBackbone& weights, const ImageGrid& z_t,
                                int t, const std::vector<double>& embedding, const ImageGrid& mask,
                                CounterRng& rng) {
  if (!weights.trained) throw Error(ErrorKind::ModelUntrained, "filtered denoising needs trained weights");
  const ImageGrid eps = net.predict_eps(z_t, t, embedding, weights);
  const ImageGrid x0_hat = freq_mask_filter(net.predict_x0(z_t, t, eps), mask);
  return net.posterior_step(z_t, t, x0_hat, rng);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& content_vocabulary() {
  static const std::vector<std::string> v = {
      "a red car",   "a blue house",  "a green tree",   "a yellow boat",  "a small dog",
      "a white cat", "a tall tower",  "a round apple",  "an old bridge",  "a black horse"};
  return v;
}

const std::vector<std::string>& content_modifier_vocabulary() {
  static const std::vector<std::string> v = {"starry night", "sunflower", "harbor",  "mountain", "garden",
                                             "portrait",     "river",     "skyline", "forest",   "meadow"};
  return v;
}

const std::vector<std::string>& style_vocabulary() {
  static const std::vector<std::string> v = {
      "in the style of van gogh", "in the style of monet",    "in the style of hokusai",
      "in the style of klimt",    "in the style of mondrian", "in the style of seurat",
      "in the style of munch",    "in the style of escher",   "in the style of kandinsky",
      "in the style of turner"};
  return v;
}

const std::vector<std::string>& style_modifier_vocabulary() {
  static const std::vector<std::string> v = {"watercolor", "oil painting", "sketch",  "pixel art", "mosaic",
                                             "charcoal",   "pastel",       "ink wash", "pop art",  "woodcut"};
  return v;
}

ImageGrid content_reference(int index, std::size_t height, std::size_t width) {
  const int kind = index % 10;
  const double shift = 0.08 * static_cast<double>((index / 10) % 3);
  const double background = 0.15 + 0.03 * static_cast<double>(index % 4);
  const double foreground = 0.85 - 0.05 * static_cast<double>(index % 3);
  const double soft = 0.08;
  ImageGrid img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height) - shift;
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width) - shift;
      double inside = 0.0;
      switch (kind) {
        case 0: inside = 1.0 - smoothstep(0.25 - soft, 0.25 + soft, std::hypot(u - 0.5, v - 0.5)); break;
        case 1: inside = 1.0 - smoothstep(0.22 - soft, 0.22 + soft, std::max(std::abs(u - 0.45), std::abs(v - 0.55))); break;
        case 2: inside = 1.0 - smoothstep(0.06, 0.06 + 2 * soft, std::abs(std::hypot(u - 0.5, v - 0.5) - 0.3)); break;
        case 3: inside = 1.0 - smoothstep(0.12 - soft / 2, 0.12 + soft, std::abs(v - 0.4)); break;
        case 4: inside = 1.0 - smoothstep(0.12 - soft / 2, 0.12 + soft, std::abs(u - 0.6)); break;
        case 5:
          inside = std::max(1.0 - smoothstep(0.1, 0.25, std::hypot(u - 0.3, v - 0.3)),
                            1.0 - smoothstep(0.1, 0.25, std::hypot(u - 0.7, v - 0.7)));
          break;
        case 6: inside = smoothstep(-soft, soft, 1.0 - u - v); break;
        case 7:
          inside = std::max(1.0 - smoothstep(0.08, 0.08 + soft, std::abs(u - 0.5)),
                            1.0 - smoothstep(0.08, 0.08 + soft, std::abs(v - 0.5)));
          break;
        case 8: inside = std::clamp(0.5 * (u + v), 0.0, 1.0); break;
        default:
          inside = 1.0 - smoothstep(0.8, 1.2, std::hypot((u - 0.5) / 0.4, (v - 0.5) / 0.22));
          break;
      }
      img(y, x) = background + (foreground - background) * inside;
    }
  }
  return img;
}

ImageGrid style_texture(int index, std::size_t height, std::size_t width, std::uint64_t seed) {
  const int kind = index % 10;
  const double amplitude = 0.12 + 0.015 * static_cast<double>(index % 10);
  CounterRng rng(seed, 0x57E0 + static_cast<std::uint64_t>(index));
  ImageGrid img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto yi = static_cast<long>(y);
      const auto xi = static_cast<long>(x);
      double p = 0.0;
      switch (kind) {
        case 0: p = (yi % 2 == 0) ? 1.0 : -1.0; break;
        case 1: p = (xi % 2 == 0) ? 1.0 : -1.0; break;
        case 2: p = ((xi + yi) % 2 == 0) ? 1.0 : -1.0; break;
        case 3: p = ((xi + yi) % 3 == 0) ? 1.0 : -0.5; break;
        case 4: p = (xi % 3 == 1 && yi % 3 == 1) ? 1.0 : -0.125; break;
        case 5: p = rng.uniform(-1.0, 1.0); break;
        case 6: p = std::sin(std::numbers::pi * (0.8 * static_cast<double>(x) + 0.6 * static_cast<double>(y)) * 1.7); break;
        case 7: p = (((xi + yi) % 4 == 0) || ((xi - yi + 64) % 4 == 0)) ? 1.0 : -0.6; break;
        case 8: p = (xi % 3 == 0) ? 1.0 : -0.5; break;
        default: p = rng.uniform() < 0.5 ? 1.0 : -1.0; break;
      }
      img(y, x) = p;
    }
  }
  const double mean = img.mean();
  for (double& p : img.pixels()) p = amplitude * (p - mean);
  return img;
}

ImageGrid compose(int content_index, int style_index, std::size_t height, std::size_t width,
                  std::uint64_t seed) {
  return clamp01(content_reference(content_index, height, width) +
                 style_texture(style_index, height, width, seed));
}

namespace {

ImageGrid run_filtered_trajectory(const DiffusionSource& source, const std::string& text, const ImageGrid& mask,
                                  std::uint64_t seed) {
  const Denoiser& net = *source.net;
  CounterRng rng(seed, 0xF17E);
  ImageGrid z = net.gaussian_image(rng);
  const auto e = encode_semantic(text, net.arch().embedding_dim);
  for (int t = net.schedule().steps(); t >= 1; --t) {
    z = filtered_denoise_step(net, *source.weights, z, t, e, mask, rng);
  }
  return z;
}

}  // namespace

std::vector<ContrastPair> generate_pair_dataset(const PairGenConfig& config, const DiffusionSource& source) {
  if (config.n_content < 1 || config.n_style < 1) {
    throw Error(ErrorKind::ConfigInvalid, "need n_content, n_style >= 1");
  }
  check_cutoff(config.sigma);
  if (config.mode == PairMode::Diffusion) {
    if (source.net == nullptr || source.weights == nullptr) {
      throw Error(ErrorKind::ModelUntrained, "diffusion mode needs a trained denoiser");
    }
    if (source.net->arch().image_height != config.height || source.net->arch().image_width != config.width) {
      throw Error(ErrorKind::ConfigInvalid, "diffusion mode image size must match the denoiser");
    }
  }

  const auto& cv = content_vocabulary();
  const auto& cm = content_modifier_vocabulary();
  const auto& sv = style_vocabulary();
  const auto& sm = style_modifier_vocabulary();

  std::vector<ContrastPair> pairs(static_cast<std::size_t>(config.n_content * config.n_style));
  parallel_for(pairs.size(), config.threads, [&](std::size_t k) {
    const int i = static_cast<int>(k) / config.n_style;
    const int j = static_cast<int>(k) % config.n_style;
    ContrastPair& p = pairs[k];
    p.pair_id = static_cast<int>(k);
    p.content_index = i;
    p.style_index = j;
    p.content_prompt = cv[static_cast<std::size_t>(i) % cv.size()];
    p.content_modifier = cm[static_cast<std::size_t>(i) % cm.size()];
    p.style_prompt = sv[static_cast<std::size_t>(j) % sv.size()];
    p.style_modifier = sm[static_cast<std::size_t>(j) % sm.size()];

    if (config.mode == PairMode::Synthetic) {
      const ImageGrid composite = compose(i, j, config.height, config.width, config.seed);
      p.content_image = clamp01(gaussian_lowpass(composite, config.sigma));
      ImageGrid style = style_residual(composite, config.sigma);
      for (double& v : style.pixels()) v += 0.5;
      p.style_image = clamp01(std::move(style));
    } else {
      const std::uint64_t pair_seed = config.seed + static_cast<std::uint64_t>(p.pair_id);
      const ImageGrid low = FrequencyMask{MaskKind::Low, config.sigma}.materialize(config.height, config.width);
      const ImageGrid high = FrequencyMask{MaskKind::High, config.sigma}.materialize(config.height, config.width);
      p.content_image = clamp01(run_filtered_trajectory(source, p.content_text(), low, pair_seed));
      ImageGrid style = run_filtered_trajectory(source, p.style_text(), high, pair_seed);
      for (double& v : style.pixels()) v += 0.5;
      p.style_image = clamp01(std::move(style));
    }
  });
  return pairs;
}

}  // namespace craftlora
