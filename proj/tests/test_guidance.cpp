#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "craftlora/error.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/pairgen.hpp"
#include "helpers.hpp"

using namespace craftlora;

namespace {

Denoiser default_net() { return Denoiser(DenoiserArch{}, NoiseSchedule(50, 1e-4, 0.1)); }

bool all_zero(const Embedding& e) {
  for (double v : e)
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST(ParsePrompt, TwoMarkerExample) {
  const PromptSpec p = parse_prompt("A photo of a person <c> smiling in a watercolor style <s>");
  ASSERT_TRUE(p.has_content_marker());
  ASSERT_TRUE(p.has_style_marker());
  EXPECT_EQ(*p.content_span, "A photo of a person");
  EXPECT_EQ(*p.style_span, "smiling in a watercolor style");
  EXPECT_EQ(p.stripped, "A photo of a person smiling in a watercolor style");
}

TEST(ParsePrompt, NoMarkersAndSingleMarker) {
  const PromptSpec plain = parse_prompt("A plain sentence");
  EXPECT_FALSE(plain.has_content_marker());
  EXPECT_FALSE(plain.has_style_marker());
  EXPECT_EQ(plain.stripped, "A plain sentence");
  const PromptSpec dog = parse_prompt("A dog <c> running");
  EXPECT_TRUE(dog.has_content_marker());
  EXPECT_FALSE(dog.has_style_marker());
  EXPECT_EQ(*dog.content_span, "A dog");
  EXPECT_EQ(dog.stripped, "A dog running");
}

TEST(ParsePrompt, EnclosingMarkersAndStrippedHasNoMarkers) {
  const PromptSpec p = parse_prompt("draw <c>a red car</c> as <s>ukiyo-e</s> art");
  EXPECT_EQ(*p.content_span, "a red car");
  EXPECT_EQ(*p.style_span, "ukiyo-e");
  for (const char* m : {"<c>", "</c>", "<s>", "</s>"}) EXPECT_EQ(p.stripped.find(m), std::string::npos);
}

TEST(ParsePrompt, MalformedMarkers) {
  for (const char* bad : {"a </c> car <c>", "x <c> y <c>", "</s> style"}) {
    try {
      parse_prompt(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::MalformedMarkers) << bad;
    }
  }
}

TEST(EncodeSemantic, NullDeterministicAndOrderSensitive) {
  EXPECT_TRUE(all_zero(encode_semantic("")));
  EXPECT_EQ(encode_semantic("").size(), kEmbeddingDim);
  EXPECT_EQ(encode_semantic("a red car"), encode_semantic("a red car"));
  EXPECT_NE(encode_semantic("red car"), encode_semantic("car red"));
  double norm = 0.0;
  for (double v : encode_semantic("a red car")) norm += v * v;
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(EncodeSemantic, NoCollisionsOverToyVocabulary) {
  std::vector<std::string> words;
  for (const auto* vocab : {&content_vocabulary(), &content_modifier_vocabulary(), &style_vocabulary(),
                            &style_modifier_vocabulary()})
    for (const auto& w : *vocab) words.push_back(w);
  std::vector<std::string> prompts = words;
  for (const auto& c : content_vocabulary())
    for (const auto& s : style_vocabulary()) prompts.push_back(c + " " + s);
  for (const auto& c : content_vocabulary())
    for (const auto& m : content_modifier_vocabulary()) prompts.push_back(m + " " + c);
  std::sort(prompts.begin(), prompts.end());
  prompts.erase(std::unique(prompts.begin(), prompts.end()), prompts.end());
  std::vector<Embedding> emb;
  for (const auto& p : prompts) emb.push_back(encode_semantic(p));
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < emb[i].size(); ++k) d = std::max(d, std::abs(emb[i][k] - emb[j][k]));
      EXPECT_GT(d, 1e-6) << prompts[i] << " / " << prompts[j];
    }
}

TEST(ExpertGammas, InactiveBranchesGiveZero) {
  const auto params = ExpertEncoderParams::defaults();
  const Embedding null(kEmbeddingDim, 0.0);
  EXPECT_EQ(expert_gammas(params, params.id_embedding(0), null, null), (Gammas{0.0, 0.0}));
}

TEST(ExpertGammas, DefaultHeadReproducesMarkerPresence) {
  const auto params = ExpertEncoderParams::defaults();
  EXPECT_EQ(condition_prompt("A photo of a person <c> smiling in a watercolor style <s>", params).branch,
            (Gammas{1.0, 1.0}));
  EXPECT_EQ(condition_prompt("A dog <c> running", params).branch, (Gammas{1.0, 0.0}));
  EXPECT_EQ(condition_prompt("in the style of van gogh <s>", params).branch, (Gammas{0.0, 1.0}));
  EXPECT_EQ(condition_prompt("A plain sentence", params).branch, (Gammas{0.0, 0.0}));
  const auto c = condition_prompt("A dog <c> running", params);
  EXPECT_EQ(c.e_sem, encode_semantic("A dog running"));
}

TEST(ExpertGammas, NonnegativeOverRandomInputs) {
  auto params = ExpertEncoderParams::defaults(3);
  CounterRng rng(11);
  for (double& v : params.head_w.values()) v = rng.normal();
  params.head_b_content = -2.0;
  params.head_b_style = 0.3;
  for (int k = 0; k < 1000; ++k) {
    Embedding id(kEmbeddingDim);
    Embedding ec(kEmbeddingDim);
    Embedding es(kEmbeddingDim);
    for (auto* e : {&id, &ec, &es})
      for (double& v : *e) v = rng.normal() * 3.0;
    const Gammas g = expert_gammas(params, id, ec, es);
    EXPECT_GE(g.content, 0.0);
    EXPECT_GE(g.style, 0.0);
    EXPECT_TRUE(std::isfinite(g.content) && std::isfinite(g.style));
  }
}

TEST(GammaSchedule, WindowExamples) {
  const TimeWindow c{1, 35};
  const TimeWindow s{15, 50};
  EXPECT_EQ(gamma_schedule(10, c, s), (Gammas{1.0, 0.0}));
  EXPECT_EQ(gamma_schedule(40, c, s), (Gammas{0.0, 1.0}));
  EXPECT_EQ(gamma_schedule(20, c, s), (Gammas{1.0, 1.0}));
  EXPECT_EQ(gamma_schedule(35, c, s), (Gammas{1.0, 1.0}));
  EXPECT_EQ(gamma_schedule(36, c, s), (Gammas{0.0, 1.0}));
}

TEST(TemporalAlpha, EndpointsMidpointAndMonotone) {
  GuidanceConfig cfg;
  EXPECT_DOUBLE_EQ(temporal_alpha(50, 50, cfg), cfg.alpha_min);
  EXPECT_NEAR(temporal_alpha(25, 50, cfg), cfg.alpha_min + 0.5 * (cfg.alpha_max - cfg.alpha_min), 1e-15);
  for (int t = 1; t <= 50; ++t) {
    const double a = temporal_alpha(t, 50, cfg);
    const double u = (50.0 - t) / 50.0;
    EXPECT_NEAR(a, 0.5 + 0.5 * (1 - std::cos(std::numbers::pi * u)) / 2, 1e-15);
    EXPECT_GE(a, cfg.alpha_min);
    EXPECT_LE(a, cfg.alpha_max);
    if (t > 1) {
      EXPECT_LE(a, temporal_alpha(t - 1, 50, cfg));
    }
  }
  cfg.curve = ScaleCurve::Linear;
  EXPECT_NEAR(temporal_alpha(10, 50, cfg), 0.5 + 0.5 * 0.8, 1e-15);
}

TEST(GuidanceConfig, Validation) {
  GuidanceConfig cfg;
  cfg.validate(50);
  EXPECT_THROW(cfg.validate(30), Error);
  cfg.alpha_min = 1.5;
  EXPECT_THROW(cfg.validate(50), Error);
  cfg = GuidanceConfig{};
  cfg.omega = -1.0;
  EXPECT_THROW(cfg.validate(50), Error);
  EXPECT_EQ(scale_curve_from_string("linear"), ScaleCurve::Linear);
  EXPECT_THROW(scale_curve_from_string("quadratic"), Error);
}

TEST(CfgCombine, GuidedEstimateAlgebra) {
  CounterRng rng(5);
  ImageGrid c(4, 4);
  ImageGrid u(4, 4);
  for (double& v : c.pixels()) v = rng.normal();
  for (double& v : u.pixels()) v = rng.normal();
  EXPECT_EQ(cfg_combine(c, u, 0.0), c);
  EXPECT_EQ(cfg_combine(c, c, 7.5), c);
  for (double omega : {0.5, 3.0, 7.5}) {
    const ImageGrid g = cfg_combine(c, u, omega);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_EQ(g.pixels()[i], c.pixels()[i] + omega * (c.pixels()[i] - u.pixels()[i]));
      EXPECT_NEAR(g.pixels()[i] + omega * u.pixels()[i], (1 + omega) * c.pixels()[i], 1e-12);
    }
  }
  EXPECT_THROW(cfg_combine(c, ImageGrid(2, 2), 1.0), Error);
}

class AcfgTest : public ::testing::Test {
 protected:
  AcfgTest() : net_(default_net()) {
    w_ = net_.init_backbone(21);
    routing_ = LayerRouting::split_half(w_.names());
    CounterRng rng(22);
    c_ = make_adapter(AdapterKind::Content, w_, routing_, 4, 0.05, 1);
    s_ = make_adapter(AdapterKind::Style, w_, routing_, 4, 0.05, 2);
    for (auto* ad : {&c_, &s_})
      for (auto& [name, f] : ad->factors)
        for (double& v : f.a.values()) v = rng.normal();
    zc_ = make_adapter(AdapterKind::Content, w_, routing_, 4, 0.05, 1);
    zs_ = make_adapter(AdapterKind::Style, w_, routing_, 4, 0.05, 2);
    prompt_ = condition_prompt("a red car <c> in the style of van gogh <s>", ExpertEncoderParams::defaults());
    x_ = net_.gaussian_image(rng);
  }
  Denoiser net_;
  LayeredBackbone w_;
  LayerRouting routing_;
  LoraAdapter c_, s_, zc_, zs_;
  PromptConditioning prompt_;
  ImageGrid x_;
};

TEST_F(AcfgTest, OmegaZeroReturnsConditional) {
  GuidanceConfig cfg;
  cfg.omega = 0.0;
  AcfgGuide guide(net_, w_, &c_, &s_, prompt_.e_sem, prompt_.branch, cfg);
  const AcfgPrediction p = guide.predict(x_, 20);
  EXPECT_EQ(p.eps, p.eps_cond);
  EXPECT_NE(p.eps_cond, p.eps_uncond);
}

TEST_F(AcfgTest, InactiveScheduleAndNullPromptGiveUnconditional) {
  GuidanceConfig cfg;
  cfg.content_window = {1, 10};
  cfg.style_window = {40, 50};
  AcfgGuide guide(net_, w_, &c_, &s_, net_.null_embedding(), prompt_.branch, cfg);
  for (int t : {20, 30}) {
    const AcfgPrediction p = guide.predict(x_, t);
    EXPECT_EQ(p.eps, p.eps_uncond);
  }
}

TEST_F(AcfgTest, ZeroAdaptersMatchStandardCfg) {
  GuidanceConfig cfg;
  AcfgGuide guide(net_, w_, &zc_, &zs_, prompt_.e_sem, prompt_.branch, cfg);
  for (int t : {5, 20, 45}) {
    const ImageGrid expected = cfg_combine(net_.predict_eps(x_, t, prompt_.e_sem, w_),
                                           net_.predict_eps(x_, t, net_.null_embedding(), w_), cfg.omega);
    EXPECT_LE(max_abs_diff(guide.predict(x_, t).eps, expected), 1e-12);
  }
}

TEST_F(AcfgTest, UnconditionalPassIgnoresAdaptersSchedulesAndOmega) {
  GuidanceConfig a;
  GuidanceConfig b;
  b.omega = 2.0;
  b.content_window = {1, 5};
  b.alpha_min = 1.0;
  AcfgGuide ga(net_, w_, &c_, &s_, prompt_.e_sem, prompt_.branch, a);
  AcfgGuide gb(net_, w_, &zc_, nullptr, prompt_.e_sem, prompt_.branch, b);
  const ImageGrid direct = net_.predict_eps(x_, 20, net_.null_embedding(), w_);
  EXPECT_EQ(ga.predict(x_, 20).eps_uncond, direct);
  EXPECT_EQ(gb.predict(x_, 20).eps_uncond, direct);
}

TEST_F(AcfgTest, SymmetricAblationUsesConditionalWeights) {
  GuidanceConfig cfg;
  cfg.symmetric = true;
  AcfgGuide guide(net_, w_, &c_, &s_, prompt_.e_sem, prompt_.branch, cfg);
  const ImageGrid u = guide.predict(x_, 20).eps_uncond;
  EXPECT_EQ(u, net_.predict_eps(x_, 20, net_.null_embedding(), guide.conditional_weights(20)));
  EXPECT_NE(u, net_.predict_eps(x_, 20, net_.null_embedding(), w_));
}

TEST_F(AcfgTest, AdaptersContributeExactlyWhenActive) {
  GuidanceConfig cfg;
  for (const Gammas branch : {Gammas{1.0, 1.0}, Gammas{1.0, 0.0}, Gammas{0.0, 0.7}}) {
    AcfgGuide guide(net_, w_, &c_, &s_, prompt_.e_sem, branch, cfg);
    for (int t = 1; t <= 50; ++t) {
      const Gammas ind = gamma_schedule(t, cfg.content_window, cfg.style_window);
      const Gammas eff = guide.effective_gammas(t);
      const double alpha = temporal_alpha(t, 50, cfg);
      EXPECT_DOUBLE_EQ(eff.content, alpha * branch.content * ind.content);
      EXPECT_DOUBLE_EQ(eff.style, alpha * branch.style * ind.style);
      const LayeredBackbone& wc = guide.conditional_weights(t);
      for (std::size_t l = 0; l < w_.size(); ++l) {
        const bool content_layer = routing_.contains(AdapterKind::Content, w_.layers[l].name);
        const bool active = content_layer ? (ind.content == 1.0 && branch.content > 0.0)
                                          : (ind.style == 1.0 && branch.style > 0.0);
        EXPECT_EQ(wc.layers[l].w != w_.layers[l].w, active) << "t=" << t << " " << w_.layers[l].name;
      }
    }
  }
}

TEST_F(AcfgTest, RebuildsOnlyWhenGainsChange) {
  GuidanceConfig cfg;
  cfg.alpha_min = cfg.alpha_max = 1.0;
  AcfgGuide guide(net_, w_, &c_, &s_, prompt_.e_sem, prompt_.branch, cfg);
  for (int t = 50; t >= 1; --t) guide.predict(x_, t);
  EXPECT_EQ(guide.rebuilds(), 3u);
  EXPECT_EQ(guide.evaluations(), 100u);
}

TEST_F(AcfgTest, SampleUsesTwoEvaluationsPerStepAndIsDeterministic) {
  GuidanceConfig cfg;
  const SampleResult a = acfg_sample(net_, w_, &c_, &s_, prompt_, cfg, 5);
  const SampleResult b = acfg_sample(net_, w_, &c_, &s_, prompt_, cfg, 5);
  const SampleResult c = acfg_sample(net_, w_, &c_, &s_, prompt_, cfg, 6);
  EXPECT_EQ(a.evaluations, 100u);
  EXPECT_EQ(a.image, b.image);
  EXPECT_NE(a.image, c.image);
  ASSERT_EQ(a.trace.size(), 50u);
  EXPECT_EQ(a.trace.front().t, 50);
  EXPECT_EQ(a.trace.back().t, 1);
  EXPECT_EQ(a.trace[30].to_line().rfind("t=20 gamma_c=", 0), 0u);
}

TEST_F(AcfgTest, ZeroAdapterTrajectoryEqualsStandardCfg) {
  GuidanceConfig cfg;
  const SampleResult a = acfg_sample(net_, w_, &zc_, &zs_, prompt_, cfg, 9, true);
  const SampleResult b = cfg_sample(net_, w_, prompt_.e_sem, cfg.omega, 9, true);
  ASSERT_EQ(a.trajectory.size(), 51u);
  ASSERT_EQ(b.trajectory.size(), 51u);
  for (std::size_t k = 0; k < a.trajectory.size(); ++k) EXPECT_EQ(a.trajectory[k], b.trajectory[k]) << k;
}

TEST(AcfgSample, SingleStepIsPosteriorMean) {
  const Denoiser net(DenoiserArch{}, NoiseSchedule::from_betas({0.3}));
  const LayeredBackbone w = net.init_backbone(3);
  const auto routing = LayerRouting::split_half(w.names());
  CounterRng rng(1);
  LoraAdapter c = make_adapter(AdapterKind::Content, w, routing, 2, 0.05, 1);
  for (auto& [name, f] : c.factors)
    for (double& v : f.a.values()) v = rng.normal();
  GuidanceConfig cfg;
  cfg.content_window = {1, 1};
  cfg.style_window = {1, 1};
  const auto prompt = condition_prompt("a red car <c>", ExpertEncoderParams::defaults());
  const SampleResult r = acfg_sample(net, w, &c, nullptr, prompt, cfg, 4, true);
  ASSERT_EQ(r.trajectory.size(), 2u);
  AcfgGuide guide(net, w, &c, nullptr, prompt.e_sem, prompt.branch, cfg);
  const ImageGrid eps = guide.predict(r.trajectory[0], 1).eps;
  CounterRng unused(123);
  EXPECT_EQ(r.image, net.ddpm_step(r.trajectory[0], 1, eps, unused));
  EXPECT_LT(max_abs_diff(r.image, net.predict_x0(r.trajectory[0], 1, eps)), 1e-12);
  EXPECT_EQ(r.evaluations, 2u);
}
