#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "craftlora/denoiser.hpp"
#include "craftlora/image.hpp"
#include "craftlora/tensorcore.hpp"

namespace craftlora {

enum class AdapterKind { Content, Style };

std::string to_string(AdapterKind kind);
/// Accepts "content" or "style"; throws ConfigInvalid otherwise.
AdapterKind adapter_kind_from_string(const std::string& text);

/// Disjoint layer sets for the two adapter kinds.
class LayerRouting {
 public:
  LayerRouting() = default;
  /// Throws RoutingViolation if the sets overlap.
  LayerRouting(std::set<std::string> content, std::set<std::string> style);

  /// First half of the layers to content, second half to style.
  static LayerRouting split_half(const std::vector<std::string>& layer_names);

  const std::set<std::string>& content() const noexcept { return content_; }
  const std::set<std::string>& style() const noexcept { return style_; }
  const std::set<std::string>& layers_for(AdapterKind kind) const {
    return kind == AdapterKind::Content ? content_ : style_;
  }
  bool contains(AdapterKind kind, const std::string& layer) const { return layers_for(kind).contains(layer); }

  /// Throws RoutingViolation if a name is not a backbone layer.
  void check_against(const LayeredBackbone& backbone) const;

 private:
  std::set<std::string> content_;
  std::set<std::string> style_;
};

struct LoraFactors {
  Matrix b;  // d_in × r
  Matrix a;  // r × d_out
};

/// Per-layer low-rank factors with a scalar embedding gate
/// s(e) = sigmoid(gate_w·e + gate_b) multiplying every update.
struct LoraAdapter {
  AdapterKind kind = AdapterKind::Content;
  std::size_t rank = 16;
  LayerRouting routing;
  std::map<std::string, LoraFactors> factors;
  std::vector<double> gate_w;
  double gate_b = 0.0;

  double gate(const Embedding& e_sem) const;
  /// s(e)·B·A for one layer, or an empty matrix if the adapter has no factor there.
  Matrix delta(const std::string& layer, const Embedding& e_sem) const;
  /// Factor layers ⊆ the routing set of this kind; shapes conform to `host`.
  void validate(const LayeredBackbone& host) const;
};

/// B ~ U(−init_scale, init_scale), A = 0, gate (0, 0) on every layer of the kind's set.
LoraAdapter make_adapter(AdapterKind kind, const LayeredBackbone& host, const LayerRouting& routing,
                         std::size_t rank, double init_scale, std::uint64_t seed,
                         std::size_t embedding_dim = 64);

/// ΔW for `layer`: the content update if the layer routes to content, the
/// style update if it routes to style, zeros otherwise.
Matrix decoupled_update(const LayeredBackbone& host, const std::string& layer, const LayerRouting& routing,
                        const LoraAdapter& content, const LoraAdapter& style, const Embedding& e_sem);

/// W_init + γ_c·ΔW^(c) on content layers + γ_s·ΔW^(s) on style layers.
/// Either adapter may be null. Throws RoutingViolation when an adapter holds a
/// factor outside its set or the two adapters' sets overlap.
LayeredBackbone aggregate_weights(const LayeredBackbone& w_init, const LoraAdapter* content,
                                  const LoraAdapter* style, double gamma_c, double gamma_s,
                                  const Embedding& e_sem);

struct LoraGrads {
  std::map<std::string, LoraFactors> factors;
  std::vector<double> gate_w;
  double gate_b = 0.0;
};

/// Gradient buffers at one training step. `backbone` is the unmasked dL/dW of
/// every (frozen) layer; `factors` holds a factor-shaped gradient buffer for
/// every backbone layer after masking to the kind's layer set.
struct AdapterStepView {
  std::size_t step = 0;
  double loss = 0.0;
  std::map<std::string, Matrix> backbone;
  std::map<std::string, LoraFactors> factors;
};

struct AdapterTrainConfig {
  std::size_t rank = 16;
  std::size_t steps = 1000;
  std::size_t batch = 1;
  double lr = 1e-3;
  double init_scale = 0.05;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  void validate() const;
};

struct AdapterTrainResult {
  LoraAdapter adapter;
  std::vector<double> losses;
};

/// Squared ε error of one noised sample on W_init + s(e)·BA (γ = 1), with
/// gradients for every adapter parameter when `grads` is non-null.
double adapter_loss(const Denoiser& net, const LayeredBackbone& w_init, const LoraAdapter& adapter,
                    const ImageGrid& image, const Embedding& e_sem, int t, const ImageGrid& noise,
                    LoraGrads* grads);

using AdapterObserver = std::function<void(const AdapterStepView&)>;

/// Adam on the adapter factors and gate with W_init frozen. Throws
/// MarkerMissing if the prompt lacks the kind's marker.
AdapterTrainResult train_adapter(const Denoiser& net, AdapterKind kind, const LayeredBackbone& w_init,
                                 const LayerRouting& routing, const ImageGrid& reference, const std::string& prompt,
                                 const AdapterTrainConfig& config, const AdapterObserver& observer = {});

}  // namespace craftlora
