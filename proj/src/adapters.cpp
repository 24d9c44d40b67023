#include "craftlora/adapters.hpp"

#include <cmath>

#include "craftlora/error.hpp"
#include "craftlora/optim.hpp"
#include "craftlora/parallel.hpp"
#include "craftlora/prompt.hpp"
#include "craftlora/rng.hpp"

namespace craftlora {

std::string to_string(AdapterKind kind) { return kind == AdapterKind::Content ? "content" : "style"; }

AdapterKind adapter_kind_from_string(const std::string& text) {
  if (text == "content") return AdapterKind::Content;
  if (text == "style") return AdapterKind::Style;
  throw Error(ErrorKind::ConfigInvalid, "adapter kind must be 'content' or 'style', got '" + text + "'");
}

LayerRouting::LayerRouting(std::set<std::string> content, std::set<std::string> style)
    : content_(std::move(content)), style_(std::move(style)) {
  for (const auto& name : content_) {
    if (style_.contains(name)) {
      throw Error(ErrorKind::RoutingViolation, "layer '" + name + "' routed to both content and style");
    }
  }
}

LayerRouting LayerRouting::split_half(const std::vector<std::string>& layer_names) {
  std::set<std::string> c;
  std::set<std::string> s;
  const std::size_t half = layer_names.size() / 2;
  for (std::size_t i = 0; i < layer_names.size(); ++i) (i < half ? c : s).insert(layer_names[i]);
  return LayerRouting(std::move(c), std::move(s));
}

void LayerRouting::check_against(const LayeredBackbone& backbone) const {
  const auto names = backbone.names();
  const std::set<std::string> known(names.begin(), names.end());
  for (const auto* set : {&content_, &style_}) {
    for (const auto& name : *set) {
      if (!known.contains(name)) throw Error(ErrorKind::RoutingViolation, "unknown layer '" + name + "' in routing");
    }
  }
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dot(const std::vector<double>& a, const Embedding& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "gate and embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_gamma(double g, const char* name) {
  if (!(g >= 0.0) || !std::isfinite(g)) {
    throw Error(ErrorKind::ConfigInvalid, std::string(name) + " must be a finite value >= 0");
  }
}

}  // namespace

double LoraAdapter::gate(const Embedding& e_sem) const { return sigmoid(dot(gate_w, e_sem) + gate_b); }

Matrix LoraAdapter::delta(const std::string& layer, const Embedding& e_sem) const {
  const auto it = factors.find(layer);
  if (it == factors.end()) return Matrix();
  Matrix d = matmul(it->second.b, it->second.a);
  d *= gate(e_sem);
  return d;
}

void LoraAdapter::validate(const LayeredBackbone& host) const {
  for (const auto& [name, f] : factors) {
    if (!routing.contains(kind, name)) {
      throw Error(ErrorKind::RoutingViolation,
                  to_string(kind) + " adapter carries a factor for '" + name + "' outside its layer set");
    }
    const Matrix& w = host.layers[host.index_of(name)].w;
    if (f.b.rows() != w.rows() || f.a.cols() != w.cols() || f.b.cols() != f.a.rows() || f.b.cols() != rank) {
      throw Error(ErrorKind::ShapeMismatch, "adapter factor shapes do not conform to layer '" + name + "'");
    }
  }
}

LoraAdapter make_adapter(AdapterKind kind, const LayeredBackbone& host, const LayerRouting& routing,
                         std::size_t rank, double init_scale, std::uint64_t seed, std::size_t embedding_dim) {
  if (rank == 0) throw Error(ErrorKind::ConfigInvalid, "adapter rank must be >= 1");
  routing.check_against(host);
  LoraAdapter ad;
  ad.kind = kind;
  ad.rank = rank;
  ad.routing = routing;
  ad.gate_w.assign(embedding_dim, 0.0);
  CounterRng rng(seed, kind == AdapterKind::Content ? 0xC0 : 0x5E);
  for (const auto& layer : host.layers) {
    if (!routing.contains(kind, layer.name)) continue;
    LoraFactors f{Matrix(layer.w.rows(), rank), Matrix(rank, layer.w.cols())};
    for (double& v : f.b.values()) v = rng.uniform(-init_scale, init_scale);
    ad.factors.emplace(layer.name, std::move(f));
  }
  return ad;
}

Matrix decoupled_update(const LayeredBackbone& host, const std::string& layer, const LayerRouting& routing,
                        const LoraAdapter& content, const LoraAdapter& style, const Embedding& e_sem) {
  const Matrix& w = host.layers[host.index_of(layer)].w;
  Matrix d;
  if (routing.contains(AdapterKind::Content, layer)) {
    d = content.delta(layer, e_sem);
  } else if (routing.contains(AdapterKind::Style, layer)) {
    d = style.delta(layer, e_sem);
  }
  if (d.rows() == 0 && d.cols() == 0) return Matrix(w.rows(), w.cols());
  if (d.rows() != w.rows() || d.cols() != w.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "adapter update does not match layer '" + layer + "'");
  }
  return d;
}

LayeredBackbone aggregate_weights(const LayeredBackbone& w_init, const LoraAdapter* content,
                                  const LoraAdapter* style, double gamma_c, double gamma_s,
                                  const Embedding& e_sem) {
  check_gamma(gamma_c, "gamma_c");
  check_gamma(gamma_s, "gamma_s");
  if (content && content->kind != AdapterKind::Content) {
    throw Error(ErrorKind::RoutingViolation, "content slot holds a style adapter");
  }
  if (style && style->kind != AdapterKind::Style) {
    throw Error(ErrorKind::RoutingViolation, "style slot holds a content adapter");
  }
  if (content && style) {
    for (const auto& name : content->routing.content()) {
      if (style->routing.style().contains(name)) {
        throw Error(ErrorKind::RoutingViolation, "content and style layer sets overlap at '" + name + "'");
      }
    }
  }
  LayeredBackbone out = w_init;
  auto inject = [&](const LoraAdapter* ad, double gamma) {
    if (!ad) return;
    ad->validate(w_init);
    if (gamma == 0.0) return;
    const double s = ad->gate(e_sem);
    for (const auto& [name, f] : ad->factors) {
      Matrix& w = out.layers[out.index_of(name)].w;
      w.axpy(gamma * s, matmul(f.b, f.a));
    }
  };
  inject(content, gamma_c);
  inject(style, gamma_s);
  return out;
}

double adapter_loss(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter& adapter,
                    const ImageGrid& image, const Embedding& e_sem, int t, const ImageGrid& noise,
                    LoraGrads* grads) {
  const bool is_content = adapter.kind == AdapterKind::Content;
  const LayeredBackbone w =
      aggregate_weights(w_init, is_content ? &adapter : nullptr, is_content ? nullptr : &adapter, 1.0, 1.0, e_sem);
  const ImageGrid x_t = net.forward_noise(image, t, noise);
  const ForwardCache cache = net.forward(x_t, t, e_sem, w);
  const double n = static_cast<double>(cache.eps.size());
  double loss = 0.0;
  std::vector<double> d_eps(cache.eps.size());
  for (std::size_t i = 0; i < d_eps.size(); ++i) {
    const double r = cache.eps[i] - noise.pixels()[i];
    loss += r * r / n;
    d_eps[i] = 2.0 * r / n;
  }
  if (!grads) return loss;

  std::vector<Matrix> g_w;
  net.backward(cache, d_eps, w, g_w);
  const double s = adapter.gate(e_sem);
  double d_s = 0.0;
  grads->factors.clear();
  for (const auto& [name, f] : adapter.factors) {
    const Matrix& g = g_w[w.index_of(name)];
    Matrix db = matmul_nt(g, f.a);
    db *= s;
    Matrix da = matmul_tn(f.b, g);
    da *= s;
    const Matrix ba = matmul(f.b, f.a);
    for (std::size_t i = 0; i < ba.size(); ++i) d_s += g.values()[i] * ba.values()[i];
    grads->factors.emplace(name, LoraFactors{std::move(db), std::move(da)});
  }
  const double d_logit = d_s * s * (1.0 - s);
  grads->gate_b = d_logit;
  grads->gate_w.assign(e_sem.size(), 0.0);
  for (std::size_t i = 0; i < e_sem.size(); ++i) grads->gate_w[i] = d_logit * e_sem[i];
  return loss;
}

void AdapterTrainConfig::validate() const {
  if (rank == 0) throw Error(ErrorKind::ConfigInvalid, "adapter rank must be >= 1");
  if (batch == 0) throw Error(ErrorKind::ConfigInvalid, "adapter batch must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::ConfigInvalid, "adapter lr must be > 0");
  if (!(init_scale > 0.0)) throw Error(ErrorKind::ConfigInvalid, "adapter init_scale must be > 0");
}

namespace {

struct Draw {
  int t;
  ImageGrid noise;
};

struct StepGrads {
  double loss = 0.0;
  LoraGrads lora;
  std::vector<Matrix> backbone;
};

}  // namespace

AdapterTrainResult train_adapter(const Denoiser& net, AdapterKind kind, const LayeredBackbone& w_init,
                                 const LayerRouting& routing, const ImageGrid& reference, const std::string& prompt,
                                 const AdapterTrainConfig& config, const AdapterObserver& observer) {
  config.validate();
  net.check_weights(w_init);
  const PromptSpec spec = parse_prompt(prompt);
  if (kind == AdapterKind::Content && !spec.has_content_marker()) {
    throw Error(ErrorKind::MarkerMissing, "content adapter prompt needs a <c> marker");
  }
  if (kind == AdapterKind::Style && !spec.has_style_marker()) {
    throw Error(ErrorKind::MarkerMissing, "style adapter prompt needs an <s> marker");
  }
  const Embedding e_sem = encode_semantic(spec.stripped, net.arch().embedding_dim);

  AdapterTrainResult result;
  result.adapter = make_adapter(kind, w_init, routing, config.rank, config.init_scale, config.seed,
                                net.arch().embedding_dim);
  LoraAdapter& ad = result.adapter;
  Matrix gate_w(1, ad.gate_w.size());
  Matrix gate_b(1, 1);

  std::vector<Matrix*> params;
  for (auto& [name, f] : ad.factors) {
    params.push_back(&f.b);
    params.push_back(&f.a);
  }
  params.push_back(&gate_w);
  params.push_back(&gate_b);

  Adam adam(config.lr);
  CounterRng rng(config.seed, 0xADA);
  const int T = net.schedule().steps();
  const double inv_batch = 1.0 / static_cast<double>(config.batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Draw> draws;
    for (std::size_t k = 0; k < config.batch; ++k) {
      const int t = static_cast<int>(rng.uniform_int(1, T));
      draws.push_back({t, net.gaussian_image(rng)});
    }
    std::vector<StepGrads> slots(config.batch);
    parallel_for(config.batch, config.threads, [&](std::size_t k) {
      slots[k].loss = adapter_loss(net, w_init, ad, reference, e_sem, draws[k].t, draws[k].noise, &slots[k].lora);
      if (observer) {
        const bool is_content = kind == AdapterKind::Content;
        const LayeredBackbone w = aggregate_weights(w_init, is_content ? &ad : nullptr,
                                                    is_content ? nullptr : &ad, 1.0, 1.0, e_sem);
        const ImageGrid x_t = net.forward_noise(reference, draws[k].t, draws[k].noise);
        const ForwardCache cache = net.forward(x_t, draws[k].t, e_sem, w);
        std::vector<double> d_eps(cache.eps.size());
        for (std::size_t i = 0; i < d_eps.size(); ++i) {
          d_eps[i] = 2.0 * (cache.eps[i] - draws[k].noise.pixels()[i]) / static_cast<double>(d_eps.size());
        }
        net.backward(cache, d_eps, w, slots[k].backbone);
      }
    });

    double loss = 0.0;
    std::vector<Matrix> grads;
    for (auto& [name, f] : ad.factors) {
      grads.emplace_back(f.b.rows(), f.b.cols());
      grads.emplace_back(f.a.rows(), f.a.cols());
    }
    grads.emplace_back(1, gate_w.cols());
    grads.emplace_back(1, 1);
    for (const auto& slot : slots) {
      loss += slot.loss * inv_batch;
      std::size_t p = 0;
      for (const auto& [name, g] : slot.lora.factors) {
        grads[p++].axpy(inv_batch, g.b);
        grads[p++].axpy(inv_batch, g.a);
      }
      for (std::size_t i = 0; i < slot.lora.gate_w.size(); ++i) grads[p](0, i) += inv_batch * slot.lora.gate_w[i];
      grads[p + 1](0, 0) += inv_batch * slot.lora.gate_b;
    }
    result.losses.push_back(loss);

    if (observer) {
      AdapterStepView view;
      view.step = step;
      view.loss = loss;
      std::map<std::string, std::size_t> slot_of;
      for (const auto& [name, f] : ad.factors) slot_of.emplace(name, 2 * slot_of.size());
      for (std::size_t l = 0; l < w_init.size(); ++l) {
        const auto& layer = w_init.layers[l];
        Matrix g(layer.w.rows(), layer.w.cols());
        for (const auto& slot : slots) g.axpy(inv_batch, slot.backbone[l]);
        view.backbone.emplace(layer.name, std::move(g));
        const double mask = routing.contains(kind, layer.name) ? 1.0 : 0.0;
        LoraFactors buf{Matrix(layer.w.rows(), config.rank), Matrix(config.rank, layer.w.cols())};
        if (const auto it = slot_of.find(layer.name); it != slot_of.end()) {
          buf.b = grads[it->second];
          buf.a = grads[it->second + 1];
        }
        buf.b *= mask;
        buf.a *= mask;
        view.factors.emplace(layer.name, std::move(buf));
      }
      observer(view);
    }

    adam.step(params, grads);
    for (std::size_t i = 0; i < ad.gate_w.size(); ++i) ad.gate_w[i] = gate_w(0, i);
    ad.gate_b = gate_b(0, 0);
  }
  return result;
}

}  // namespace craftlora
