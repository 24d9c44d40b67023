#include "craftlora/evalkit.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "craftlora/error.hpp"
#include "craftlora/pairgen.hpp"
#include "craftlora/rng.hpp"

namespace craftlora {

FeatureExtractor::FeatureExtractor(std::size_t pixels, std::size_t dim, std::uint64_t seed)
    : projection_(dim, pixels) {
  CounterRng rng(seed, 0xFEA);
  for (double& v : projection_.values()) v = rng.normal();
}

std::vector<double> FeatureExtractor::features(const ImageGrid& img) const {
  if (img.size() != projection_.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "feature extractor expects " + std::to_string(projection_.cols()) +
                                              " pixels, got " + std::to_string(img.size()));
  }
  const double mean = img.mean();
  std::vector<double> centred(img.size());
  double spread = 0.0;
  for (std::size_t i = 0; i < centred.size(); ++i) {
    centred[i] = img.pixels()[i] - mean;
    spread = std::max(spread, std::abs(centred[i]));
  }
  std::vector<double> f(dim(), 0.0);
  if (spread < 1e-12) return f;
  double norm = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const auto row = projection_.row(k);
    double s = 0.0;
    for (std::size_t i = 0; i < centred.size(); ++i) s += row[i] * centred[i];
    f[k] = std::tanh(s);
    norm += f[k] * f[k];
  }
  norm = std::sqrt(norm);
  for (double& v : f) v /= norm;
  return f;
}

namespace {

double norm2(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

double feature_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorKind::DegenerateInput, "similarity undefined for an image without variation");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return std::clamp(s / (na * nb), -1.0, 1.0);
}

double content_preservation(const std::vector<ImageGrid>& generated, const ImageGrid& content_reference,
                            const FeatureExtractor& fx) {
  if (generated.empty()) throw Error(ErrorKind::EmptySet, "content_preservation: empty generated set");
  const auto ref = fx.features(content_reference);
  double s = 0.0;
  for (const auto& g : generated) s += feature_similarity(fx.features(g), ref);
  return s / static_cast<double>(generated.size());
}

double style_fidelity(const std::vector<ImageGrid>& generated, const ImageGrid& style_reference, double sigma,
                      const FeatureExtractor& fx) {
  if (generated.empty()) throw Error(ErrorKind::EmptySet, "style_fidelity: empty generated set");
  const auto ref = fx.features(style_residual(style_reference, sigma));
  double s = 0.0;
  for (const auto& g : generated) s += feature_similarity(fx.features(style_residual(g, sigma)), ref);
  return s / static_cast<double>(generated.size());
}

double cross_influence(const std::vector<std::vector<ImageGrid>>& grid, double sigma, const FeatureExtractor& fx) {
  if (grid.empty()) throw Error(ErrorKind::GridIncomplete, "cross_influence: empty grid");
  const std::size_t n_s = grid.front().size();
  if (n_s < 2) throw Error(ErrorKind::GridIncomplete, "cross_influence needs at least two styles per content");
  double total = 0.0;
  for (const auto& row : grid) {
    if (row.size() != n_s) throw Error(ErrorKind::GridIncomplete, "cross_influence: ragged content × style grid");
    std::vector<std::vector<double>> f;
    for (const auto& img : row) f.push_back(fx.features(gaussian_lowpass(img, sigma)));
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < n_s; ++j) {
      for (std::size_t k = j + 1; k < n_s; ++k, ++n) s += std::min(1.0, distance(f[j], f[k]) / std::sqrt(2.0));
    }
    total += s / static_cast<double>(n);
  }
  return total / static_cast<double>(grid.size());
}

double separation_score(const std::vector<std::pair<ImageGrid, ImageGrid>>& components, const FeatureExtractor& fx) {
  if (components.empty()) throw Error(ErrorKind::EmptySet, "separation_score: no components");
  double s = 0.0;
  for (const auto& [c, st] : components) s += 1.0 - std::abs(feature_similarity(fx.features(c), fx.features(st)));
  return s / static_cast<double>(components.size());
}

std::vector<SweepRow> cutoff_sweep(const std::vector<ImageGrid>& images, const std::vector<double>& sigmas,
                                   const FeatureExtractor& fx) {
  std::vector<SweepRow> rows;
  for (double sigma : sigmas) {
    std::vector<std::pair<ImageGrid, ImageGrid>> comps;
    for (const auto& img : images) comps.emplace_back(gaussian_lowpass(img, sigma), style_residual(img, sigma));
    rows.push_back({sigma, separation_score(comps, fx)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.score > b.score; });
  return rows;
}

EvalReport evaluate_grid(const std::vector<std::vector<ImageGrid>>& grid,
                         const std::vector<ImageGrid>& content_references,
                         const std::vector<ImageGrid>& style_references, double sigma, const FeatureExtractor& fx) {
  if (grid.empty() || grid.size() != content_references.size()) {
    throw Error(ErrorKind::GridIncomplete, "one grid row per content reference required");
  }
  const std::size_t n_s = style_references.size();
  for (const auto& row : grid) {
    if (row.size() != n_s) throw Error(ErrorKind::GridIncomplete, "one grid column per style reference required");
  }
  EvalReport rep;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto ref_c = fx.features(content_references[i]);
    for (std::size_t j = 0; j < n_s; ++j) {
      const auto ref_s = fx.features(style_residual(style_references[j], sigma));
      PairScore p{i, j, feature_similarity(fx.features(grid[i][j]), ref_c),
                  feature_similarity(fx.features(style_residual(grid[i][j], sigma)), ref_s)};
      rep.s_c += p.sim_c;
      rep.s_s += p.sim_s;
      rep.pairs.push_back(p);
    }
  }
  const double n = static_cast<double>(rep.pairs.size());
  rep.s_c /= n;
  rep.s_s /= n;
  rep.s_x = cross_influence(grid, sigma, fx);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["s_c"] = s_c;
  j["s_s"] = s_s;
  j["s_x"] = s_x;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    arr.push_back({{"content", p.content_index}, {"style", p.style_index}, {"sim_c", p.sim_c}, {"sim_s", p.sim_s}});
  }
  j["pairs"] = std::move(arr);
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

}  // namespace craftlora
