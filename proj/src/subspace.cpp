#include "craftlora/subspace.hpp"

#include <cmath>
#include <string>

#include "craftlora/error.hpp"
#include "craftlora/parallel.hpp"
#include "craftlora/prompt.hpp"

namespace craftlora {

void RankSchedule::validate() const {
  if (layers < 2) throw Error(ErrorKind::ConfigInvalid, "rank schedule needs L >= 2");
  if (r_min < 1 || r_max < r_min) throw Error(ErrorKind::ConfigInvalid, "need r_max >= r_min >= 1");
}

int RankSchedule::rank_at(int l) const {
  validate();
  if (l < 1 || l > layers) {
    throw Error(ErrorKind::OutOfRange, "layer " + std::to_string(l) + " outside [1, " + std::to_string(layers) + "]");
  }
  const double r = static_cast<double>(r_max) -
                   static_cast<double>(l - 1) / static_cast<double>(layers - 1) * static_cast<double>(r_max - r_min);
  return std::max(1, static_cast<int>(std::floor(r + 0.5)));
}

Matrix merge_subspaces(const Matrix& q_content, const Matrix& q_style) {
  if (q_content.rows() != q_style.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "merge_subspaces: bases have different row counts");
  }
  const Matrix stacked = hconcat(q_content, q_style);
  if (stacked.cols() == 0 || stacked.max_abs() == 0.0) return Matrix(stacked.rows(), 0);
  return qr_decompose(stacked).q;
}

LayeredBackbone apply_rank_limited_update(const LayeredBackbone& backbone, const std::vector<Matrix>& q_per_layer) {
  if (q_per_layer.size() != backbone.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one subspace basis per layer required");
  }
  LayeredBackbone out = backbone;
  for (std::size_t l = 0; l < backbone.size(); ++l) {
    out.layers[l].w = project_out(backbone.layers[l].w, q_per_layer[l]);
  }
  return out;
}

SubspaceBases init_bases(const LayeredBackbone& backbone, const RankSchedule& schedule, std::uint64_t seed,
                         double init_scale) {
  if (static_cast<std::size_t>(schedule.layers) != backbone.size()) {
    throw Error(ErrorKind::ConfigInvalid, "rank schedule layer count differs from backbone");
  }
  CounterRng rng(seed, 0xBA5E);
  SubspaceBases bases;
  for (std::size_t l = 0; l < backbone.size(); ++l) {
    const auto r = static_cast<std::size_t>(schedule.rank_at(static_cast<int>(l) + 1));
    const std::size_t d_in = backbone.layers[l].w.rows();
    if (r > d_in) {
      throw Error(ErrorKind::ConfigInvalid, "rank " + std::to_string(r) + " exceeds input dimension of " +
                                                backbone.layers[l].name);
    }
    Matrix c(d_in, r);
    Matrix s(d_in, r);
    for (double& v : c.values()) v = rng.uniform(-init_scale, init_scale);
    for (double& v : s.values()) v = rng.uniform(-init_scale, init_scale);
    bases.content.push_back(std::move(c));
    bases.style.push_back(std::move(s));
  }
  return bases;
}

Matrix qr_backward(const QrResult& qr, const Matrix& d_q) {
  const Matrix& q = qr.q;
  const Matrix& r = qr.r;
  const std::size_t k = q.cols();
  // M = −dQᵀQ; copyltu(M) mirrors the lower triangle.
  Matrix m = matmul_tn(d_q, q);
  m *= -1.0;
  Matrix sym(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) sym(i, j) = i >= j ? m(i, j) : m(j, i);
  Matrix x = d_q + matmul(q, sym);
  // Y = X·R⁻ᵀ, i.e. Y·Rᵀ = X, solved row by row.
  Matrix y(x.rows(), k);
  for (std::size_t row = 0; row < x.rows(); ++row) {
    for (std::size_t j = k; j-- > 0;) {
      double s = x(row, j);
      for (std::size_t c = j + 1; c < k; ++c) s -= y(row, c) * r(j, c);
      y(row, j) = s / r(j, j);
    }
  }
  return y;
}

std::vector<TrunkExample> make_trunk_examples(const std::vector<ContrastPair>& pairs, std::size_t embedding_dim) {
  std::vector<TrunkExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({p.content_image, p.style_image, encode_semantic(p.content_text(), embedding_dim),
                   encode_semantic(p.style_text(), embedding_dim)});
  }
  return out;
}

std::vector<TrunkDraw> draw_trunk_batch(const Denoiser& net, std::size_t n_examples, std::size_t batch,
                                        CounterRng& rng) {
  std::vector<TrunkDraw> draws;
  const int T = net.schedule().steps();
  for (std::size_t b = 0; b < batch; ++b) {
    TrunkDraw d;
    d.example = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_examples) - 1));
    d.t_content = static_cast<int>(rng.uniform_int(1, T));
    d.t_style = static_cast<int>(rng.uniform_int(1, T));
    d.noise_content = net.gaussian_image(rng);
    d.noise_style = net.gaussian_image(rng);
    draws.push_back(std::move(d));
  }
  return draws;
}

namespace {

/// QR of a basis; an all-zero basis spans nothing.
QrResult basis_qr(const Matrix& b) {
  if (b.max_abs() == 0.0) return {Matrix(b.rows(), 0), Matrix(0, 0), {}};
  return qr_decompose(b);
}

struct MemberResult {
  double l1 = 0.0;
  double perceptual = 0.0;
  std::vector<Matrix> grads;
};

MemberResult member_loss(const Denoiser& net, const LayeredBackbone& w, const ImageGrid& target,
                         const Embedding& embedding, int t, const ImageGrid& noise,
                         const ConvFeatureExtractor& features, double alpha_perc, bool with_gradients) {
  MemberResult res;
  const ImageGrid z = net.forward_noise(target, t, noise);
  const ForwardCache cache = net.forward(z, t, embedding, w);
  const double ab = net.schedule().alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  ImageGrid x0(target.height(), target.width());
  for (std::size_t i = 0; i < x0.size(); ++i) x0.pixels()[i] = (z.pixels()[i] - b * cache.eps[i]) / a;

  std::vector<double> g_x0(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0.pixels()[i] - target.pixels()[i];
    res.l1 += std::abs(d);
    g_x0[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  if (alpha_perc > 0.0) {
    ImageGrid gp;
    res.perceptual = features.l1_distance_grad(x0, features.forward(target), gp);
    for (std::size_t i = 0; i < g_x0.size(); ++i) g_x0[i] += alpha_perc * gp.pixels()[i];
  }
  if (with_gradients) {
    for (double& g : g_x0) g *= -b / a;
    net.backward(cache, g_x0, w, res.grads);
  }
  return res;
}

}  // namespace

TrunkLossTerms trunk_loss(const Denoiser& net, const LayeredBackbone& w0, const SubspaceBases& bases,
                          const std::vector<TrunkExample>& examples, const std::vector<TrunkDraw>& draws,
                          const ConvFeatureExtractor& features, const TrunkLossOptions& options) {
  if (draws.empty()) throw Error(ErrorKind::EmptyBatch, "trunk_loss: empty batch");
  if (options.lambda_reg < 0.0 || options.alpha_perc < 0.0) {
    throw Error(ErrorKind::ConfigInvalid, "trunk_loss: lambda_reg and alpha_perc must be >= 0");
  }
  if (bases.content.size() != w0.size() || bases.style.size() != w0.size()) {
    throw Error(ErrorKind::ShapeMismatch, "trunk_loss: one basis per layer required");
  }

  const std::size_t L = w0.size();
  std::vector<QrResult> qr_c;
  std::vector<QrResult> qr_s;
  std::vector<Matrix> q_c;
  std::vector<Matrix> q_s;
  for (std::size_t l = 0; l < L; ++l) {
    qr_c.push_back(basis_qr(bases.content[l]));
    qr_s.push_back(basis_qr(bases.style[l]));
    q_c.push_back(qr_c.back().q);
    q_s.push_back(qr_s.back().q);
  }
  const LayeredBackbone w_c = apply_rank_limited_update(w0, q_c);
  const LayeredBackbone w_s = apply_rank_limited_update(w0, q_s);

  std::vector<MemberResult> content_results(draws.size());
  std::vector<MemberResult> style_results(draws.size());
  parallel_for(draws.size(), options.threads, [&](std::size_t k) {
    const TrunkDraw& d = draws[k];
    const TrunkExample& ex = examples.at(d.example);
    content_results[k] = member_loss(net, w_c, ex.content_target, ex.content_embedding, d.t_content,
                                     d.noise_content, features, options.alpha_perc, options.with_gradients);
    style_results[k] = member_loss(net, w_s, ex.style_target, ex.style_embedding, d.t_style, d.noise_style,
                                   features, options.alpha_perc, options.with_gradients);
  });

  const double inv_n = 1.0 / static_cast<double>(draws.size());
  TrunkLossTerms terms;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    terms.l1 += (content_results[k].l1 + style_results[k].l1) * inv_n;
    terms.perceptual += (content_results[k].perceptual + style_results[k].perceptual) * inv_n;
  }
  for (std::size_t l = 0; l < L; ++l) {
    terms.regularizer += options.lambda_reg * (bases.content[l].frobenius_sq() + bases.style[l].frobenius_sq());
  }
  terms.total = terms.l1 + options.alpha_perc * terms.perceptual + terms.regularizer;
  if (!options.with_gradients) return terms;

  auto pull_back = [&](const std::vector<MemberResult>& results, const std::vector<QrResult>& qrs,
                       const std::vector<Matrix>& b, std::vector<Matrix>& out) {
    for (std::size_t l = 0; l < L; ++l) {
      Matrix g_w(w0.layers[l].w.rows(), w0.layers[l].w.cols());
      for (const auto& r : results) g_w += r.grads[l];
      g_w *= inv_n;
      const Matrix& w = w0.layers[l].w;
      const Matrix& q = qrs[l].q;
      // W = W0 − QQᵀW0  ⇒  dL/dQ = −(G·W0ᵀ + W0·Gᵀ)·Q
      Matrix d_q = matmul(matmul_nt(g_w, w), q) + matmul(w, matmul_tn(g_w, q));
      d_q *= -1.0;
      const Matrix d_kept = qr_backward(qrs[l], d_q);
      Matrix grad(b[l].rows(), b[l].cols());
      for (std::size_t c = 0; c < qrs[l].kept_columns.size(); ++c) {
        const std::size_t col = qrs[l].kept_columns[c];
        for (std::size_t i = 0; i < grad.rows(); ++i) grad(i, col) = d_kept(i, c);
      }
      grad.axpy(2.0 * options.lambda_reg, b[l]);
      out.push_back(std::move(grad));
    }
  };
  pull_back(content_results, qr_c, bases.content, terms.grad_content);
  pull_back(style_results, qr_s, bases.style, terms.grad_style);
  return terms;
}

void TrunkConfig::validate() const {
  ranks.validate();
  if (batch == 0) throw Error(ErrorKind::ConfigInvalid, "trunk batch must be >= 1");
  if (lambda_reg < 0.0 || alpha_perc < 0.0) throw Error(ErrorKind::ConfigInvalid, "lambda_reg, alpha_perc >= 0");
  if (!(init_scale > 0.0)) throw Error(ErrorKind::ConfigInvalid, "init_scale must be > 0");
  if (lr.start < 0.0 || lr.peak < 0.0 || lr.floor < 0.0) throw Error(ErrorKind::ConfigInvalid, "learning rates >= 0");
}

double trunk_eval_loss(const Denoiser& net, const LayeredBackbone& w0, const SubspaceBases& bases,
                       const std::vector<TrunkExample>& examples, const ConvFeatureExtractor& features,
                       const TrunkConfig& config) {
  CounterRng rng(config.seed, 0xE7A1);
  const std::size_t n = std::min(config.eval_pairs, examples.size());
  std::vector<TrunkDraw> draws = draw_trunk_batch(net, examples.size(), n, rng);
  for (std::size_t k = 0; k < n; ++k) draws[k].example = k * examples.size() / n;
  TrunkLossOptions opts{config.lambda_reg, config.alpha_perc, false, config.threads};
  return trunk_loss(net, w0, bases, examples, draws, features, opts).total;
}

TrunkResult finetune_trunk(const Denoiser& net, const LayeredBackbone& w0, const std::vector<ContrastPair>& pairs,
                           const TrunkConfig& config) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorKind::ConfigInvalid, "finetune_trunk: empty dataset");
  net.check_weights(w0);

  TrunkResult result;
  for (const auto& p : pairs)
    if (p.content_image == p.style_image) ++result.degenerate_pairs;

  const auto examples = make_trunk_examples(pairs, net.arch().embedding_dim);
  const ConvFeatureExtractor features;
  result.bases = init_bases(w0, config.ranks, config.seed, config.init_scale);
  result.initial_eval_loss = trunk_eval_loss(net, w0, result.bases, examples, features, config);

  WarmupCosine lr = config.lr;
  lr.total = config.steps;
  CounterRng rng(config.seed, 0x7C0);
  const TrunkLossOptions opts{config.lambda_reg, config.alpha_perc, true, config.threads};
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto draws = draw_trunk_batch(net, examples.size(), config.batch, rng);
    const TrunkLossTerms terms = trunk_loss(net, w0, result.bases, examples, draws, features, opts);
    result.losses.push_back(terms.total);
    const double rate = lr.at(step);
    for (std::size_t l = 0; l < w0.size(); ++l) {
      result.bases.content[l].axpy(-rate, terms.grad_content[l]);
      result.bases.style[l].axpy(-rate, terms.grad_style[l]);
    }
  }
  result.final_eval_loss = trunk_eval_loss(net, w0, result.bases, examples, features, config);

  for (std::size_t l = 0; l < w0.size(); ++l) {
    result.q_combined.push_back(
        merge_subspaces(basis_qr(result.bases.content[l]).q, basis_qr(result.bases.style[l]).q));
  }
  result.w_init = apply_rank_limited_update(w0, result.q_combined);
  result.w_init.trained = w0.trained;
  return result;
}

}  // namespace craftlora
