#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "craftlora/error.hpp"
#include "craftlora/evalkit.hpp"
#include "craftlora/pairgen.hpp"
#include "craftlora/rng.hpp"

using namespace craftlora;

namespace {

ImageGrid random_image(CounterRng& rng, std::size_t side = 16) {
  ImageGrid img(side, side);
  for (double& p : img.pixels()) p = rng.uniform();
  return img;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Two 1×3 images whose 2-dim features are orthogonal, found by bisection on
/// the angle of the second image within the zero-mean plane.
std::pair<ImageGrid, ImageGrid> orthogonal_feature_pair(const FeatureExtractor& fx) {
  const double inv2 = 1.0 / std::sqrt(2.0);
  const double inv6 = 1.0 / std::sqrt(6.0);
  auto at = [&](double theta) {
    ImageGrid img(1, 3);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    img(0, 0) = 0.5 + 0.3 * (c * inv2 + s * inv6);
    img(0, 1) = 0.5 + 0.3 * (-c * inv2 + s * inv6);
    img(0, 2) = 0.5 + 0.3 * (-2.0 * s * inv6);
    return img;
  };
  const ImageGrid first = at(0.0);
  const auto f0 = fx.features(first);
  double lo = 0.0;
  double hi = std::numbers::pi;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (dot(f0, fx.features(at(mid))) > 0.0 ? lo : hi) = mid;
  }
  return {first, at(0.5 * (lo + hi))};
}

}  // namespace

TEST(FeatureExtractor, UnitNormAndFlatImagesMapToZero) {
  const FeatureExtractor fx;
  CounterRng rng(1);
  const auto f = fx.features(random_image(rng));
  EXPECT_EQ(f.size(), 128u);
  EXPECT_NEAR(dot(f, f), 1.0, 1e-12);
  for (double v : fx.features(ImageGrid(16, 16, 0.3))) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fx.features(ImageGrid(8, 8)), Error);
}

TEST(FeatureSimilarity, BoundsAndDegenerateInput) {
  EXPECT_DOUBLE_EQ(feature_similarity({1.0, 0.0}, {0.0, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(feature_similarity({1.0, 1.0}, {-2.0, -2.0}), -1.0);
  try {
    feature_similarity({0.0, 0.0}, {1.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
  }
}

TEST(ContentPreservation, SelfOrthogonalAndNoisyCopies) {
  const FeatureExtractor fx;
  const ImageGrid ref = content_reference(2, 16, 16);
  EXPECT_NEAR(content_preservation({ref}, ref, fx), 1.0, 1e-12);

  const FeatureExtractor small(3, 2, 5);
  const auto [a, b] = orthogonal_feature_pair(small);
  EXPECT_NEAR(content_preservation({b}, a, small), 0.0, 1e-12);

  CounterRng rng(2);
  std::vector<ImageGrid> copies;
  for (int k = 0; k < 10; ++k) {
    ImageGrid c = ref;
    for (double& p : c.pixels()) p += 0.01 * rng.normal();
    copies.push_back(c);
  }
  EXPECT_GT(content_preservation(copies, ref, fx), 0.9);
  try {
    content_preservation({}, ref, fx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptySet);
  }
}

TEST(StyleFidelity, SelfConstantAndPairedComparison) {
  const FeatureExtractor fx;
  const ImageGrid ref = compose(3, 4, 16, 16, 1);
  EXPECT_NEAR(style_fidelity({ref}, ref, 0.35, fx), 1.0, 1e-12);
  try {
    style_fidelity({ImageGrid(16, 16, 0.5)}, ref, 0.35, fx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
  }
  for (int style = 0; style < 10; ++style) {
    const ImageGrid style_ref = compose(9, style, 16, 16, 1);
    std::vector<ImageGrid> matched;
    std::vector<ImageGrid> mismatched;
    for (int c = 0; c < 3; ++c) {
      matched.push_back(compose(c, style, 16, 16, 1));
      mismatched.push_back(compose(c, (style + 1 + c) % 10, 16, 16, 1));
    }
    EXPECT_GT(style_fidelity(matched, style_ref, 0.35, fx), style_fidelity(mismatched, style_ref, 0.35, fx))
        << "style " << style;
  }
}

TEST(CrossInfluence, IdenticalGridIsZero) {
  const FeatureExtractor fx;
  const ImageGrid img = compose(1, 1, 16, 16, 1);
  const std::vector<std::vector<ImageGrid>> grid(3, std::vector<ImageGrid>(4, img));
  EXPECT_EQ(cross_influence(grid, 0.35, fx), 0.0);
}

TEST(CrossInfluence, IndependentRandomImagesNearCeiling) {
  const FeatureExtractor fx;
  CounterRng rng(3);
  std::vector<std::vector<ImageGrid>> grid(4);
  for (auto& row : grid)
    for (int j = 0; j < 5; ++j) row.push_back(random_image(rng));
  const double sx = cross_influence(grid, 0.35, fx);
  EXPECT_GT(sx, 0.9);
  EXPECT_LE(sx, 1.0);
}

TEST(CrossInfluence, IncompleteGrid) {
  const FeatureExtractor fx;
  const ImageGrid img(16, 16, 0.1);
  for (const auto& grid : {std::vector<std::vector<ImageGrid>>{},
                           std::vector<std::vector<ImageGrid>>{{img, img}, {img}},
                           std::vector<std::vector<ImageGrid>>{{img}, {img}}}) {
    try {
      cross_influence(grid, 0.35, fx);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::GridIncomplete);
    }
  }
}

TEST(SeparationScore, IdenticalAndOrthogonal) {
  const FeatureExtractor fx;
  const ImageGrid img = compose(0, 0, 16, 16, 1);
  EXPECT_NEAR(separation_score({{img, img}}, fx), 0.0, 1e-12);
  const FeatureExtractor small(3, 2, 5);
  const auto [a, b] = orthogonal_feature_pair(small);
  EXPECT_NEAR(separation_score({{a, b}}, small), 1.0, 1e-12);
  try {
    separation_score({}, fx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptySet);
  }
}

TEST(CutoffSweep, RanksAllPaperValues) {
  const FeatureExtractor fx;
  std::vector<ImageGrid> images;
  for (int i = 0; i < 10; ++i) images.push_back(compose(i, (3 * i) % 10, 16, 16, 1));
  const std::vector<double> sigmas = {0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  const auto rows = cutoff_sweep(images, sigmas, fx);
  ASSERT_EQ(rows.size(), 7u);
  for (std::size_t k = 1; k < rows.size(); ++k) EXPECT_GE(rows[k - 1].score, rows[k].score);
  std::vector<double> seen;
  for (const auto& r : rows) seen.push_back(r.sigma);
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, sigmas);
  std::printf("best sigma %.2f (score %.4f)\n", rows.front().sigma, rows.front().score);
}

TEST(EvaluateGrid, PermutationInvariantAndBounded) {
  const FeatureExtractor fx;
  CounterRng rng(4);
  std::vector<std::vector<ImageGrid>> grid(3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      ImageGrid img = compose(i, j, 16, 16, 1);
      for (double& p : img.pixels()) p += 0.05 * rng.normal();
      grid[i].push_back(img);
    }
  std::vector<ImageGrid> crefs;
  std::vector<ImageGrid> srefs;
  for (int i = 0; i < 3; ++i) crefs.push_back(content_reference(i, 16, 16));
  for (int j = 0; j < 4; ++j) srefs.push_back(compose(7, j, 16, 16, 2));
  const EvalReport a = evaluate_grid(grid, crefs, srefs, 0.35, fx);
  for (double v : {a.s_c, a.s_s}) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GE(a.s_x, 0.0);
  EXPECT_LE(a.s_x, 1.0);
  EXPECT_EQ(a.pairs.size(), 12u);

  const std::vector<int> row_perm = {2, 0, 1};
  const std::vector<int> col_perm = {3, 1, 0, 2};
  std::vector<std::vector<ImageGrid>> shuffled;
  std::vector<ImageGrid> crefs2;
  std::vector<ImageGrid> srefs2;
  for (int i : row_perm) {
    shuffled.emplace_back();
    for (int j : col_perm) shuffled.back().push_back(grid[i][j]);
    crefs2.push_back(crefs[i]);
  }
  for (int j : col_perm) srefs2.push_back(srefs[j]);
  const EvalReport b = evaluate_grid(shuffled, crefs2, srefs2, 0.35, fx);
  EXPECT_NEAR(a.s_c, b.s_c, 1e-12);
  EXPECT_NEAR(a.s_s, b.s_s, 1e-12);
  EXPECT_NEAR(a.s_x, b.s_x, 1e-12);

  std::vector<ImageGrid> set = grid[0];
  const double cp = content_preservation(set, crefs[0], fx);
  std::reverse(set.begin(), set.end());
  EXPECT_NEAR(content_preservation(set, crefs[0], fx), cp, 1e-12);

  const EvalReport again = evaluate_grid(grid, crefs, srefs, 0.35, fx);
  EXPECT_EQ(a.to_json(), again.to_json());
}

TEST(EvalReport, JsonCarriesScoresSeedAndHash) {
  EvalReport r;
  r.s_c = 0.5;
  r.s_s = 0.25;
  r.s_x = 0.125;
  r.seed = 42;
  r.config_hash = "abc";
  r.pairs.push_back({1, 2, 0.3, 0.4});
  const std::string j = r.to_json();
  for (const char* key : {"\"s_c\"", "\"s_s\"", "\"s_x\"", "\"pairs\"", "\"seed\"", "\"config_hash\""})
    EXPECT_NE(j.find(key), std::string::npos) << key;
  EXPECT_NE(j.find("42"), std::string::npos);
  EXPECT_NE(j.find("abc"), std::string::npos);
}
