#include "craftlora/guidance.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "craftlora/error.hpp"
#include "craftlora/rng.hpp"

namespace craftlora {

std::string to_string(ScaleCurve curve) { return curve == ScaleCurve::Cosine ? "cosine" : "linear"; }

ScaleCurve scale_curve_from_string(const std::string& text) {
  if (text == "cosine") return ScaleCurve::Cosine;
  if (text == "linear") return ScaleCurve::Linear;
  throw Error(ErrorKind::ConfigInvalid, "g_kind must be 'cosine' or 'linear', got '" + text + "'");
}

void GuidanceConfig::validate(int steps) const {
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw Error(ErrorKind::ConfigInvalid, "omega must be >= 0");
  for (const auto* w : {&content_window, &style_window}) {
    if (w->first < 1 || w->last > steps || w->first > w->last) {
      throw Error(ErrorKind::ConfigInvalid, "activation window [" + std::to_string(w->first) + ", " +
                                                std::to_string(w->last) + "] not inside [1, " +
                                                std::to_string(steps) + "]");
    }
  }
  if (!(alpha_min <= alpha_max) || !std::isfinite(alpha_min) || !std::isfinite(alpha_max)) {
    throw Error(ErrorKind::ConfigInvalid, "alpha_min must be <= alpha_max");
  }
}

Gammas gamma_schedule(int t, const TimeWindow& content, const TimeWindow& style) {
  return {content.contains(t) ? 1.0 : 0.0, style.contains(t) ? 1.0 : 0.0};
}

double temporal_alpha(int t, int steps, const GuidanceConfig& config) {
  if (t < 1 || t > steps) throw Error(ErrorKind::OutOfRange, "timestep outside [1, T]");
  const double u = static_cast<double>(steps - t) / static_cast<double>(steps);
  const double g = config.curve == ScaleCurve::Cosine ? (1.0 - std::cos(std::numbers::pi * u)) / 2.0 : u;
  return config.alpha_min + (config.alpha_max - config.alpha_min) * g;
}

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

bool is_null(const Embedding& e) {
  for (double v : e)
    if (v != 0.0) return false;
  return true;
}

std::vector<double> run_branch(const ExpertEncoderParams::Branch& br, const Embedding& x) {
  if (x.size() != br.w.cols()) throw Error(ErrorKind::ShapeMismatch, "expert branch input dimension mismatch");
  std::vector<double> h(br.w.rows());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double s = br.b[i];
    for (std::size_t j = 0; j < x.size(); ++j) s += br.w(i, j) * x[j];
    h[i] = std::tanh(s);
  }
  return h;
}

}  // namespace

ExpertEncoderParams ExpertEncoderParams::defaults(std::uint64_t seed, std::size_t dim, std::size_t concepts) {
  CounterRng rng(seed, 0xE4C0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  auto branch = [&] {
    Branch b{Matrix(dim, dim), std::vector<double>(dim, 0.0)};
    for (double& v : b.w.values()) v = rng.normal() * scale;
    return b;
  };
  ExpertEncoderParams p;
  p.identity = branch();
  p.content = branch();
  p.style = branch();
  p.head_w = Matrix(2, 3 * dim);
  p.head_b_content = std::log(std::numbers::e - 1.0);
  p.head_b_style = p.head_b_content;
  p.id_table = Matrix(concepts, dim);
  for (double& v : p.id_table.values()) v = rng.normal() * scale;
  return p;
}

Embedding ExpertEncoderParams::id_embedding(std::size_t concept_id) const {
  if (concept_id >= id_table.rows()) throw Error(ErrorKind::OutOfRange, "concept id outside the embedding table");
  const auto row = id_table.row(concept_id);
  return Embedding(row.begin(), row.end());
}

Gammas expert_gammas(const ExpertEncoderParams& params, const Embedding& id_embedding, const Embedding& e_c,
                     const Embedding& e_s) {
  std::vector<double> feat = run_branch(params.identity, id_embedding);
  const auto hc = run_branch(params.content, e_c);
  const auto hs = run_branch(params.style, e_s);
  feat.insert(feat.end(), hc.begin(), hc.end());
  feat.insert(feat.end(), hs.begin(), hs.end());
  if (feat.size() != params.head_w.cols()) throw Error(ErrorKind::ShapeMismatch, "expert head input mismatch");
  double zc = params.head_b_content;
  double zs = params.head_b_style;
  for (std::size_t j = 0; j < feat.size(); ++j) {
    zc += params.head_w(0, j) * feat[j];
    zs += params.head_w(1, j) * feat[j];
  }
  return {is_null(e_c) ? 0.0 : softplus(zc), is_null(e_s) ? 0.0 : softplus(zs)};
}

PromptConditioning condition_prompt(const std::string& text, const ExpertEncoderParams& params,
                                    std::size_t concept_id, std::size_t dim) {
  PromptConditioning pc;
  pc.spec = parse_prompt(text);
  pc.e_sem = encode_semantic(pc.spec.stripped, dim);
  const Embedding e_c = encode_semantic(pc.spec.content_span.value_or(""), dim);
  const Embedding e_s = encode_semantic(pc.spec.style_span.value_or(""), dim);
  pc.branch = expert_gammas(params, params.id_embedding(concept_id), e_c, e_s);
  return pc;
}

ImageGrid cfg_combine(const ImageGrid& cond, const ImageGrid& uncond, double omega) {
  if (!cond.same_shape(uncond)) throw Error(ErrorKind::ShapeMismatch, "cfg_combine: shape mismatch");
  ImageGrid out(cond.height(), cond.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double c = cond.pixels()[i];
    out.pixels()[i] = c + omega * (c - uncond.pixels()[i]);
  }
  return out;
}

std::string AcfgTraceRecord::to_line() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "t=%d gamma_c=%.6f gamma_s=%.6f alpha=%.6f cond_gap=%.6g", t, gamma_c, gamma_s,
                alpha, cond_gap);
  return buf;
}

AcfgGuide::AcfgGuide(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter* content,
                     const LoraAdapter* style, Embedding e_sem, Gammas branch, GuidanceConfig config)
    : net_(net),
      w_init_(w_init),
      content_(content),
      style_(style),
      e_sem_(std::move(e_sem)),
      branch_(branch),
      config_(config) {
  config_.validate(net.schedule().steps());
  net.check_weights(w_init);
  if (e_sem_.size() != net.arch().embedding_dim) throw Error(ErrorKind::ShapeMismatch, "prompt embedding size");
}

Gammas AcfgGuide::effective_gammas(int t) const {
  const double alpha = temporal_alpha(t, net_.schedule().steps(), config_);
  const Gammas ind = gamma_schedule(t, config_.content_window, config_.style_window);
  return {alpha * branch_.content * ind.content, alpha * branch_.style * ind.style};
}

const LayeredBackbone& AcfgGuide::conditional_weights(int t) {
  const Gammas g = effective_gammas(t);
  if (!cached_gammas_ || !(*cached_gammas_ == g)) {
    cached_ = aggregate_weights(w_init_, content_, style_, g.content, g.style, e_sem_);
    cached_gammas_ = g;
    ++rebuilds_;
  }
  return cached_;
}

AcfgPrediction AcfgGuide::predict(const ImageGrid& x_t, int t) {
  const LayeredBackbone& w_cond = conditional_weights(t);
  AcfgPrediction p;
  p.eps_cond = net_.predict_eps(x_t, t, e_sem_, w_cond);
  p.eps_uncond = net_.predict_eps(x_t, t, net_.null_embedding(), config_.symmetric ? w_cond : w_init_);
  evaluations_ += 2;
  p.eps = cfg_combine(p.eps_cond, p.eps_uncond, config_.omega);
  return p;
}

namespace {

constexpr std::uint64_t kSampleStream = 0x5A3;

double l2_gap(const ImageGrid& a, const ImageGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels()[i] - b.pixels()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

SampleResult acfg_sample(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter* content,
                         const LoraAdapter* style, const PromptConditioning& prompt, const GuidanceConfig& config,
                         std::uint64_t seed, bool keep_trajectory) {
  AcfgGuide guide(net, w_init, content, style, prompt.e_sem, prompt.branch, config);
  CounterRng rng(seed, kSampleStream);
  SampleResult res;
  ImageGrid x = net.gaussian_image(rng);
  if (keep_trajectory) res.trajectory.push_back(x);
  const int T = net.schedule().steps();
  for (int t = T; t >= 1; --t) {
    const AcfgPrediction p = guide.predict(x, t);
    const Gammas g = guide.effective_gammas(t);
    res.trace.push_back({t, g.content, g.style, temporal_alpha(t, T, config), l2_gap(p.eps_cond, p.eps_uncond)});
    x = net.ddpm_step(x, t, p.eps, rng);
    if (keep_trajectory) res.trajectory.push_back(x);
  }
  res.image = std::move(x);
  res.evaluations = guide.evaluations();
  return res;
}

SampleResult cfg_sample(const Denoiser& net, const LayeredBackbone& weights, const Embedding& e_sem, double omega,
                        std::uint64_t seed, bool keep_trajectory) {
  net.check_weights(weights);
  CounterRng rng(seed, kSampleStream);
  SampleResult res;
  ImageGrid x = net.gaussian_image(rng);
  if (keep_trajectory) res.trajectory.push_back(x);
  const Embedding null = net.null_embedding();
  for (int t = net.schedule().steps(); t >= 1; --t) {
    const ImageGrid c = net.predict_eps(x, t, e_sem, weights);
    const ImageGrid u = net.predict_eps(x, t, null, weights);
    res.evaluations += 2;
    x = net.ddpm_step(x, t, cfg_combine(c, u, omega), rng);
    if (keep_trajectory) res.trajectory.push_back(x);
  }
  res.image = std::move(x);
  return res;
}

}  // namespace craftlora
