#include "craftlora/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "craftlora/error.hpp"
#include "craftlora/optim.hpp"
#include "craftlora/parallel.hpp"

namespace craftlora {

std::size_t LayeredBackbone::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  throw Error(ErrorKind::OutOfRange, "no layer named '" + name + "'");
}

std::vector<std::string> LayeredBackbone::names() const {
  std::vector<std::string> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.name);
  return out;
}

void LayeredBackbone::validate() const {
  if (layers.size() < 2) throw Error(ErrorKind::ShapeMismatch, "backbone needs at least 2 layers");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!seen.insert(layers[i].name).second) {
      throw Error(ErrorKind::ShapeMismatch, "duplicate layer name '" + layers[i].name + "'");
    }
    if (!layers[i].w.all_finite()) throw Error(ErrorKind::NonFinite, "layer " + layers[i].name);
    if (i + 1 < layers.size() && layers[i].w.cols() != layers[i + 1].w.rows()) {
      throw Error(ErrorKind::ShapeMismatch, "layers " + layers[i].name + " and " +
                                                layers[i + 1].name + " do not chain");
    }
  }
}

double max_abs_diff(const LayeredBackbone& a, const LayeredBackbone& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "backbone layer count");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a.layers[i].w, b.layers[i].w));
  return m;
}

// ---------------------------------------------------------------------------

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw Error(ErrorKind::ConfigInvalid, "noise schedule needs T >= 1");
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b >= 0.0 && b < 1.0) || (i > 0 && b < betas_[i - 1])) {
      throw Error(ErrorKind::ConfigInvalid, "betas must be nondecreasing in [0, 1)");
    }
    prod *= 1.0 - b;
    alpha_bars_.push_back(prod);
  }
}

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : NoiseSchedule([&] {
        if (steps < 1) throw Error(ErrorKind::ConfigInvalid, "noise schedule needs T >= 1");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
          throw Error(ErrorKind::ConfigInvalid, "need 0 < beta_start <= beta_end < 1");
        }
        std::vector<double> betas(static_cast<std::size_t>(steps));
        for (int i = 0; i < steps; ++i) {
          const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
          betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
        }
        return betas;
      }()) {}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) { return NoiseSchedule(std::move(betas)); }

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > steps()) {
    throw Error(ErrorKind::OutOfRange, "timestep " + std::to_string(t) + " outside [1, " +
                                           std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_t(t);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_t(t);
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::posterior_x0_coef(int t) const {
  const double one_minus = 1.0 - alpha_bar(t);
  if (one_minus == 0.0) return 1.0;
  return std::sqrt(alpha_bar(t - 1)) * beta(t) / one_minus;
}

double NoiseSchedule::posterior_xt_coef(int t) const {
  const double one_minus = 1.0 - alpha_bar(t);
  if (one_minus == 0.0) return 0.0;
  return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / one_minus;
}

double NoiseSchedule::posterior_variance(int t) const {
  const double one_minus = 1.0 - alpha_bar(t);
  if (one_minus == 0.0) return 0.0;
  return beta(t) * (1.0 - alpha_bar(t - 1)) / one_minus;
}

// ---------------------------------------------------------------------------

Denoiser::Denoiser(DenoiserArch arch, NoiseSchedule schedule)
    : arch_(arch), schedule_(std::move(schedule)), cond_projection_(arch.hidden, arch.embedding_dim) {
  if (arch_.layers < 2 || arch_.hidden == 0 || arch_.pixels() == 0 || arch_.embedding_dim == 0) {
    throw Error(ErrorKind::ConfigInvalid, "denoiser needs >= 2 layers and nonzero widths");
  }
  if (!(arch_.data_variance > 0.0)) throw Error(ErrorKind::ConfigInvalid, "data_variance must be > 0");
  CounterRng rng(arch_.arch_seed, 0xC0D);
  for (double& v : cond_projection_.values()) v = rng.normal();
}

LayeredBackbone Denoiser::init_backbone(std::uint64_t seed) const {
  CounterRng rng(seed, 0xB0B);
  LayeredBackbone b;
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    const std::size_t d_in = l == 0 ? arch_.pixels() : arch_.hidden;
    const std::size_t d_out = l + 1 == arch_.layers ? arch_.pixels() : arch_.hidden;
    Matrix w(d_in, d_out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
    for (double& v : w.values()) v = scale * rng.normal();
    b.layers.push_back({arch_.layer_name(l), std::move(w)});
  }
  return b;
}

void Denoiser::check_weights(const LayeredBackbone& weights) const {
  if (weights.size() != arch_.layers) {
    throw Error(ErrorKind::ShapeMismatch, "expected " + std::to_string(arch_.layers) + " layers, got " +
                                              std::to_string(weights.size()));
  }
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    const std::size_t d_in = l == 0 ? arch_.pixels() : arch_.hidden;
    const std::size_t d_out = l + 1 == arch_.layers ? arch_.pixels() : arch_.hidden;
    const Matrix& w = weights.layers[l].w;
    if (w.rows() != d_in || w.cols() != d_out) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + weights.layers[l].name + " has wrong shape");
    }
  }
}

std::vector<double> Denoiser::timestep_embedding(int t) const {
  const std::size_t d = arch_.hidden;
  std::vector<double> e(d);
  const std::size_t half = d / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(1000.0, -static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(1, half)));
    e[2 * k] = std::sin(t * freq);
    e[2 * k + 1] = std::cos(t * freq);
  }
  return e;
}

ForwardCache Denoiser::forward(const ImageGrid& x_t, int t, std::span<const double> embedding,
                               const LayeredBackbone& weights) const {
  if (x_t.size() != arch_.pixels() || x_t.height() != arch_.image_height) {
    throw Error(ErrorKind::ShapeMismatch, "predict_eps: image shape does not match architecture");
  }
  if (embedding.size() != arch_.embedding_dim) {
    throw Error(ErrorKind::ShapeMismatch, "predict_eps: embedding dimension mismatch");
  }
  check_weights(weights);

  const std::size_t hidden = arch_.hidden;
  const std::size_t n = arch_.pixels();
  ForwardCache c;
  c.input.assign(x_t.pixels().begin(), x_t.pixels().end());

  // Layer 1 plus additive conditioning and timestep embedding.
  std::vector<double> a = timestep_embedding(t);
  for (std::size_t j = 0; j < hidden; ++j) {
    double s = 0.0;
    auto prow = cond_projection_.row(j);
    for (std::size_t k = 0; k < embedding.size(); ++k) s += prow[k] * embedding[k];
    a[j] += s;
  }
  const Matrix& w1 = weights.layers[0].w;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = c.input[i];
    if (xi == 0.0) continue;
    auto wrow = w1.row(i);
    for (std::size_t j = 0; j < hidden; ++j) a[j] += xi * wrow[j];
  }
  for (double& v : a) v = std::tanh(v);
  c.hidden.push_back(std::move(a));

  for (std::size_t l = 1; l + 1 < arch_.layers; ++l) {
    const Matrix& w = weights.layers[l].w;
    const auto& h = c.hidden.back();
    std::vector<double> z(hidden, 0.0);
    for (std::size_t i = 0; i < hidden; ++i) {
      const double hi = h[i];
      auto wrow = w.row(i);
      for (std::size_t j = 0; j < hidden; ++j) z[j] += hi * wrow[j];
    }
    std::vector<double> next(h);
    for (std::size_t j = 0; j < hidden; ++j) {
      z[j] = std::tanh(z[j]);
      next[j] += z[j];
    }
    c.preact.push_back(std::move(z));
    c.hidden.push_back(std::move(next));
  }

  const double ab = schedule_.alpha_bar(t);
  const double a_t = std::sqrt(ab);
  const double b_t = std::sqrt(1.0 - ab);
  const double v = arch_.data_variance;
  const double denom = ab * v + (1.0 - ab);
  c.skip = b_t / denom;
  c.out_scale = a_t * std::sqrt(v) / std::sqrt(denom);

  const Matrix& wl = weights.layers.back().w;
  const auto& h = c.hidden.back();
  c.eps.assign(n, 0.0);
  for (std::size_t i = 0; i < hidden; ++i) {
    const double hi = h[i];
    auto wrow = wl.row(i);
    for (std::size_t j = 0; j < n; ++j) c.eps[j] += hi * wrow[j];
  }
  for (std::size_t j = 0; j < n; ++j) c.eps[j] = c.skip * c.input[j] + c.out_scale * c.eps[j];
  return c;
}

ImageGrid Denoiser::predict_eps(const ImageGrid& x_t, int t, std::span<const double> embedding,
                                const LayeredBackbone& weights) const {
  ForwardCache c = forward(x_t, t, embedding, weights);
  return ImageGrid(x_t.height(), x_t.width(), std::move(c.eps));
}

void Denoiser::backward(const ForwardCache& c, std::span<const double> d_eps,
                        const LayeredBackbone& weights, std::vector<Matrix>& grads) const {
  const std::size_t hidden = arch_.hidden;
  const std::size_t n = arch_.pixels();
  const std::size_t L = arch_.layers;
  if (grads.size() != L) {
    grads.clear();
    for (const auto& layer : weights.layers) grads.emplace_back(layer.w.rows(), layer.w.cols());
  }

  // Output layer.
  std::vector<double> d_out(n);
  for (std::size_t j = 0; j < n; ++j) d_out[j] = c.out_scale * d_eps[j];
  {
    const auto& h = c.hidden.back();
    Matrix& g = grads[L - 1];
    for (std::size_t i = 0; i < hidden; ++i) {
      auto grow = g.row(i);
      for (std::size_t j = 0; j < n; ++j) grow[j] += h[i] * d_out[j];
    }
  }
  std::vector<double> dh(hidden, 0.0);
  {
    const Matrix& w = weights.layers[L - 1].w;
    for (std::size_t i = 0; i < hidden; ++i) {
      auto wrow = w.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += wrow[j] * d_out[j];
      dh[i] = s;
    }
  }

  // Residual layers l = L-2 .. 1 (0-based), h_l = h_{l-1} + tanh(z_l).
  for (std::size_t l = L - 2; l >= 1; --l) {
    const auto& act = c.preact[l - 1];
    const auto& h_prev = c.hidden[l - 1];
    std::vector<double> dz(hidden);
    for (std::size_t j = 0; j < hidden; ++j) dz[j] = dh[j] * (1.0 - act[j] * act[j]);
    Matrix& g = grads[l];
    const Matrix& w = weights.layers[l].w;
    std::vector<double> dprev(dh);
    for (std::size_t i = 0; i < hidden; ++i) {
      auto grow = g.row(i);
      auto wrow = w.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < hidden; ++j) {
        grow[j] += h_prev[i] * dz[j];
        s += wrow[j] * dz[j];
      }
      dprev[i] += s;
    }
    dh = std::move(dprev);
    if (l == 1) break;
  }

  // First layer.
  const auto& h1 = c.hidden.front();
  std::vector<double> da(hidden);
  for (std::size_t j = 0; j < hidden; ++j) da[j] = dh[j] * (1.0 - h1[j] * h1[j]);
  Matrix& g = grads[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = c.input[i];
    if (xi == 0.0) continue;
    auto grow = g.row(i);
    for (std::size_t j = 0; j < hidden; ++j) grow[j] += xi * da[j];
  }
}

ImageGrid Denoiser::forward_noise(const ImageGrid& x0, int t, const ImageGrid& noise) const {
  if (!x0.same_shape(noise)) throw Error(ErrorKind::ShapeMismatch, "forward_noise: noise shape");
  const double ab = schedule_.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  ImageGrid out(x0.height(), x0.width());
  for (std::size_t i = 0; i < x0.size(); ++i) out.pixels()[i] = a * x0.pixels()[i] + b * noise.pixels()[i];
  return out;
}

ImageGrid Denoiser::predict_x0(const ImageGrid& x_t, int t, const ImageGrid& eps) const {
  if (!x_t.same_shape(eps)) throw Error(ErrorKind::ShapeMismatch, "predict_x0: eps shape");
  const double ab = schedule_.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  ImageGrid out(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < x_t.size(); ++i) out.pixels()[i] = (x_t.pixels()[i] - b * eps.pixels()[i]) / a;
  return out;
}

ImageGrid Denoiser::posterior_step(const ImageGrid& x_t, int t, const ImageGrid& x0_hat, CounterRng& rng) const {
  const double c0 = schedule_.posterior_x0_coef(t);
  const double ct = schedule_.posterior_xt_coef(t);
  ImageGrid out(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < x_t.size(); ++i) out.pixels()[i] = c0 * x0_hat.pixels()[i] + ct * x_t.pixels()[i];
  if (t > 1) {
    const double sigma = std::sqrt(schedule_.posterior_variance(t));
    if (sigma > 0.0) {
      for (double& p : out.pixels()) p += sigma * rng.normal();
    }
  }
  return out;
}

ImageGrid Denoiser::ddpm_step(const ImageGrid& x_t, int t, const ImageGrid& eps_hat, CounterRng& rng) const {
  return posterior_step(x_t, t, predict_x0(x_t, t, eps_hat), rng);
}

ImageGrid Denoiser::gaussian_image(CounterRng& rng) const {
  ImageGrid img(arch_.image_height, arch_.image_width);
  for (double& p : img.pixels()) p = rng.normal();
  return img;
}

// ---------------------------------------------------------------------------

DenoiserTrainResult train_denoiser(const Denoiser& net, const std::vector<TrainingExample>& data,
                                   const DenoiserTrainConfig& config) {
  if (data.empty()) throw Error(ErrorKind::ConfigInvalid, "train_denoiser: empty dataset");
  if (config.batch == 0 || !(config.lr > 0.0) || config.cond_dropout < 0.0 || config.cond_dropout > 1.0) {
    throw Error(ErrorKind::ConfigInvalid, "train_denoiser: batch >= 1, lr > 0, dropout in [0, 1]");
  }
  DenoiserTrainResult result{net.init_backbone(config.seed), {}};
  if (config.steps == 0) return result;

  LayeredBackbone& w = result.weights;
  CounterRng rng(config.seed, 0xD1FF);
  Adam adam(config.lr);
  const Embedding null = net.null_embedding();
  const int T = net.schedule().steps();
  const std::size_t n = net.arch().pixels();

  struct Draw {
    std::size_t index;
    int t;
    bool drop;
    ImageGrid noise;
  };
  std::vector<std::vector<Matrix>> slot_grads(config.batch);
  std::vector<double> slot_loss(config.batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Draw> draws;
    for (std::size_t b = 0; b < config.batch; ++b) {
      Draw d;
      d.index = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
      d.t = static_cast<int>(rng.uniform_int(1, T));
      d.drop = rng.uniform() < config.cond_dropout;
      d.noise = net.gaussian_image(rng);
      draws.push_back(std::move(d));
    }
    parallel_for(config.batch, config.threads, [&](std::size_t b) {
      const Draw& d = draws[b];
      const TrainingExample& ex = data[d.index];
      const ImageGrid x_t = net.forward_noise(ex.image, d.t, d.noise);
      const ForwardCache c = net.forward(x_t, d.t, d.drop ? std::span<const double>(null) : ex.embedding, w);
      std::vector<double> diff(n);
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = c.eps[i] - d.noise.pixels()[i];
        loss += r * r;
        diff[i] = 2.0 * r / static_cast<double>(n * config.batch);
      }
      slot_loss[b] = loss / static_cast<double>(n);
      auto& g = slot_grads[b];
      for (auto& m : g) m *= 0.0;
      net.backward(c, diff, w, g);
    });

    std::vector<Matrix> grads = slot_grads[0];
    double loss = slot_loss[0];
    for (std::size_t b = 1; b < config.batch; ++b) {
      for (std::size_t l = 0; l < grads.size(); ++l) grads[l] += slot_grads[b][l];
      loss += slot_loss[b];
    }
    result.losses.push_back(loss / static_cast<double>(config.batch));

    std::vector<Matrix*> params;
    for (auto& layer : w.layers) params.push_back(&layer.w);
    adam.step(params, grads);
  }
  w.trained = true;
  return result;
}

}  // namespace craftlora
