// Acceptance run: one PASS/FAIL line per top-level criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "craftlora/adapters.hpp"
#include "craftlora/checkpoint.hpp"
#include "craftlora/config.hpp"
#include "craftlora/error.hpp"
#include "craftlora/evalkit.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/pairgen.hpp"
#include "craftlora/pipeline.hpp"
#include "craftlora/subspace.hpp"
#include "helpers.hpp"

using namespace craftlora;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

Denoiser default_net() { return Denoiser(DenoiserArch{}, NoiseSchedule(50, 1e-4, 0.1)); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome linear_algebra() {
  CounterRng rng(101);
  double orth = 0.0, recon = 0.0, annihil = 0.0, idem = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t r = rng.uniform_int(1, 16);
    const std::size_t m = rng.uniform_int(r, 64);
    const std::size_t n = rng.uniform_int(1, 64);
    const Matrix b = testutil::random_matrix(m, r, rng);
    const QrResult qr = qr_decompose(b);
    if (qr.q.cols() != r) return {false, "rank-deficient draw"};
    orth = std::max(orth, orthonormality_error(qr.q));
    recon = std::max(recon, max_abs_diff(matmul(qr.q, qr.r), b));
    const Matrix w = testutil::random_matrix(m, n, rng);
    const Matrix p = project_out(w, qr.q);
    annihil = std::max(annihil, matmul_tn(qr.q, p).max_abs());
    idem = std::max(idem, max_abs_diff(project_out(p, qr.q), p));
  }
  const bool ok = orth < 1e-10 && recon < 1e-9 && annihil < 1e-8 && idem < 1e-12;
  std::ostringstream d;
  d << "orth " << orth << ", recon " << recon << ", annihil " << annihil << ", idem " << idem;
  return {ok, d.str()};
}

Outcome rank_schedule() {
  const RankSchedule paper{128, 4, 8};
  bool ok = paper.rank_at(1) == 128 && paper.rank_at(8) == 4;
  CounterRng rng(102);
  for (int k = 0; k < 100 && ok; ++k) {
    const int r_min = static_cast<int>(rng.uniform_int(1, 64));
    const int r_max = r_min + static_cast<int>(rng.uniform_int(0, 256));
    const int L = static_cast<int>(rng.uniform_int(2, 64));
    const RankSchedule s{r_max, r_min, L};
    ok = s.rank_at(1) == r_max && s.rank_at(L) == r_min;
    for (int l = 2; l <= L && ok; ++l) ok = s.rank_at(l) <= s.rank_at(l - 1);
  }
  return {ok, "r(1)=" + std::to_string(paper.rank_at(1)) + ", r(L)=" + std::to_string(paper.rank_at(8)) +
                  ", 100 random triples monotone"};
}

Outcome subspace_merge() {
  CounterRng rng(103);
  int agree = 0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t m = rng.uniform_int(4, 48);
    Matrix qc;
    Matrix qs;
    switch (k % 3) {
      case 0: {  // identical
        qc = testutil::random_orthonormal(m, rng.uniform_int(1, std::min<std::size_t>(m, 8)), rng);
        qs = qc;
        break;
      }
      case 1: {  // orthogonal
        const std::size_t rc = rng.uniform_int(1, m / 2);
        const std::size_t rs = rng.uniform_int(1, m - rc);
        const Matrix all = testutil::random_orthonormal(m, rc + rs, rng);
        qc = Matrix(m, rc);
        qs = Matrix(m, rs);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t c = 0; c < rc; ++c) qc(i, c) = all(i, c);
          for (std::size_t c = 0; c < rs; ++c) qs(i, c) = all(i, rc + c);
        }
        break;
      }
      default: {  // partial overlap: shared columns plus private ones
        const std::size_t shared = rng.uniform_int(1, 3);
        const std::size_t extra_c = rng.uniform_int(0, 3);
        const std::size_t extra_s = rng.uniform_int(0, 3);
        const std::size_t total = std::min(m, shared + extra_c + extra_s);
        const Matrix all = testutil::random_orthonormal(m, total, rng);
        const std::size_t rc = std::min(total, shared + extra_c);
        qc = Matrix(m, rc);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t c = 0; c < rc; ++c) qc(i, c) = all(i, c);
        std::vector<std::size_t> cols;
        for (std::size_t c = 0; c < std::min(shared, total); ++c) cols.push_back(c);
        for (std::size_t c = rc; c < total; ++c) cols.push_back(c);
        qs = Matrix(m, cols.size());
        // rotate the basis so shared directions are not identical columns
        const Matrix mix = testutil::random_orthonormal(cols.size(), cols.size(), rng);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t c = 0; c < cols.size(); ++c) {
            double v = 0.0;
            for (std::size_t t = 0; t < cols.size(); ++t) v += all(i, cols[t]) * mix(t, c);
            qs(i, c) = v;
          }
        break;
      }
    }
    agree += static_cast<int>(merge_subspaces(qc, qs).cols()) == testutil::svd_rank(hconcat(qc, qs));
  }
  return {agree == 200, std::to_string(agree) + "/200 cases match the SVD rank"};
}

Outcome frequency_partition() {
  CounterRng rng(104);
  const std::vector<double> sigmas = {0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    ImageGrid img(16, 16);
    for (double& p : img.pixels()) p = rng.uniform();
    for (double s : sigmas) worst = std::max(worst, max_abs_diff(gaussian_lowpass(img, s) + style_residual(img, s), img));
  }
  const double constant = style_residual(ImageGrid(16, 16, 0.42), 0.35).energy();
  return {worst < 1e-9 && constant == 0.0, fmt("reconstruction %.3g, constant-image residual energy %.3g", worst, constant)};
}

struct GuidanceFixture {
  Denoiser net = default_net();
  LayeredBackbone w = net.init_backbone(105);
  LayerRouting routing = LayerRouting::split_half(w.names());
  PromptConditioning prompt =
      condition_prompt("a red car <c> in the style of van gogh <s>", ExpertEncoderParams::defaults());

  LoraAdapter adapter(AdapterKind kind, std::uint64_t seed, bool zero) const {
    LoraAdapter a = make_adapter(kind, w, routing, 4, 0.05, seed);
    if (!zero) {
      CounterRng rng(seed, 7);
      for (auto& [name, f] : a.factors)
        for (double& v : f.a.values()) v = rng.normal();
      for (double& v : a.gate_w) v = 0.1 * rng.normal();
    }
    return a;
  }
};

Outcome acfg_equivalence() {
  const GuidanceFixture fx;
  const LoraAdapter zc = fx.adapter(AdapterKind::Content, 1, true);
  const LoraAdapter zs = fx.adapter(AdapterKind::Style, 2, true);
  const GuidanceConfig cfg;
  int equal = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SampleResult a = acfg_sample(fx.net, fx.w, &zc, &zs, fx.prompt, cfg, seed, true);
    const SampleResult b = cfg_sample(fx.net, fx.w, fx.prompt.e_sem, cfg.omega, seed, true);
    bool same = a.trajectory.size() == b.trajectory.size();
    for (std::size_t k = 0; same && k < a.trajectory.size(); ++k) same = a.trajectory[k] == b.trajectory[k];
    equal += same;
  }
  const LoraAdapter c = fx.adapter(AdapterKind::Content, 3, false);
  const LoraAdapter s = fx.adapter(AdapterKind::Style, 4, false);
  GuidanceConfig zero = cfg;
  zero.omega = 0.0;
  AcfgGuide guide(fx.net, fx.w, &c, &s, fx.prompt.e_sem, fx.prompt.branch, zero);
  CounterRng rng(5);
  bool omega_zero = true;
  for (int t : {1, 10, 20, 40, 50}) {
    const AcfgPrediction p = guide.predict(fx.net.gaussian_image(rng), t);
    omega_zero = omega_zero && p.eps == p.eps_cond;
  }
  return {equal == 10 && omega_zero, std::to_string(equal) + "/10 trajectories bit-identical; omega=0 output " +
                                         (omega_zero ? "== eps_cond" : "!= eps_cond")};
}

Outcome unconditional_purity() {
  const GuidanceFixture fx;
  CounterRng rng(106);
  const ImageGrid x = fx.net.gaussian_image(rng);
  const int t = 25;
  const ImageGrid reference = fx.net.predict_eps(x, t, fx.net.null_embedding(), fx.w);
  int same = 0;
  for (int k = 0; k < 20; ++k) {
    const LoraAdapter c = fx.adapter(AdapterKind::Content, 200 + k, k % 4 == 0);
    const LoraAdapter s = fx.adapter(AdapterKind::Style, 300 + k, k % 5 == 0);
    GuidanceConfig cfg;
    cfg.omega = 0.5 * k;
    cfg.content_window = {1 + k % 5, 30 + k % 20};
    cfg.style_window = {5 + k % 7, 50};
    cfg.alpha_min = 0.25 + 0.02 * k;
    cfg.curve = k % 2 ? ScaleCurve::Linear : ScaleCurve::Cosine;
    const Gammas branch{0.1 * (k % 11), 0.05 * (k % 21)};
    AcfgGuide guide(fx.net, fx.w, k % 3 ? &c : nullptr, k % 2 ? &s : nullptr, fx.prompt.e_sem, branch, cfg);
    same += guide.predict(x, t).eps_uncond == reference;
  }
  return {same == 20, std::to_string(same) + "/20 configurations leave eps_uncond bytewise unchanged"};
}

Outcome two_pass_cost() {
  const GuidanceFixture fx;
  const LoraAdapter c = fx.adapter(AdapterKind::Content, 1, false);
  const LoraAdapter s = fx.adapter(AdapterKind::Style, 2, false);
  const SampleResult r = acfg_sample(fx.net, fx.w, &c, &s, fx.prompt, GuidanceConfig{}, 7);
  const std::size_t steps = static_cast<std::size_t>(fx.net.schedule().steps());
  return {r.evaluations == 2 * steps && steps == 50,
          std::to_string(r.evaluations) + " network evaluations for T=" + std::to_string(steps)};
}

Outcome gradient_checks() {
  const Denoiser net = testutil::small_net(3, 16, 4);
  const LayeredBackbone w0 = net.init_backbone(107);
  PairGenConfig pc;
  pc.n_content = 2;
  pc.n_style = 2;
  pc.height = pc.width = 4;
  const auto examples = make_trunk_examples(generate_pair_dataset(pc), net.arch().embedding_dim);
  const SubspaceBases bases = init_bases(w0, RankSchedule{4, 2, 3}, 5, 0.5);
  const ConvFeatureExtractor features;
  CounterRng rng(108);
  const auto draws = draw_trunk_batch(net, examples.size(), 2, rng);
  TrunkLossOptions opts;
  opts.lambda_reg = 1e-2;
  const TrunkLossTerms t = trunk_loss(net, w0, bases, examples, draws, features, opts);
  TrunkLossOptions plain = opts;
  plain.with_gradients = false;
  const double h = 1e-5;
  double worst_trunk = 0.0;
  for (int k = 0; k < 50; ++k) {
    const bool content = rng.uniform() < 0.5;
    const std::size_t l = rng.uniform_int(0, bases.size() - 1);
    const Matrix& b = content ? bases.content[l] : bases.style[l];
    const std::size_t i = rng.uniform_int(0, b.rows() - 1);
    const std::size_t j = rng.uniform_int(0, b.cols() - 1);
    SubspaceBases p = bases;
    SubspaceBases m = bases;
    (content ? p.content : p.style)[l](i, j) += h;
    (content ? m.content : m.style)[l](i, j) -= h;
    const double fd = (trunk_loss(net, w0, p, examples, draws, features, plain).total -
                       trunk_loss(net, w0, m, examples, draws, features, plain).total) /
                      (2 * h);
    worst_trunk = std::max(worst_trunk, testutil::rel_err((content ? t.grad_content : t.grad_style)[l](i, j), fd));
  }

  const LayerRouting routing = LayerRouting::split_half(w0.names());
  LoraAdapter ad = make_adapter(AdapterKind::Style, w0, routing, 3, 0.3, 9, net.arch().embedding_dim);
  for (auto& [name, f] : ad.factors)
    for (double& v : f.a.values()) v = 0.2 * rng.normal();
  for (double& v : ad.gate_w) v = 0.3 * rng.normal();
  ImageGrid img(4, 4);
  for (double& v : img.pixels()) v = rng.uniform();
  const Embedding e = encode_semantic("in the style of van gogh");
  const ImageGrid noise = net.gaussian_image(rng);
  LoraGrads g;
  adapter_loss(net, w0, ad, img, e, 17, noise, &g);
  std::vector<std::string> layers;
  for (const auto& [name, f] : ad.factors) layers.push_back(name);
  double worst_adapter = 0.0;
  for (int k = 0; k < 50; ++k) {
    LoraAdapter p = ad;
    LoraAdapter m = ad;
    double analytic = 0.0;
    const double pick = rng.uniform();
    if (pick < 0.1) {
      p.gate_b += h;
      m.gate_b -= h;
      analytic = g.gate_b;
    } else if (pick < 0.2) {
      const std::size_t i = rng.uniform_int(0, ad.gate_w.size() - 1);
      p.gate_w[i] += h;
      m.gate_w[i] -= h;
      analytic = g.gate_w[i];
    } else {
      const std::string& name = layers[rng.uniform_int(0, layers.size() - 1)];
      const bool use_b = rng.uniform() < 0.5;
      Matrix& mp = use_b ? p.factors[name].b : p.factors[name].a;
      Matrix& mm = use_b ? m.factors[name].b : m.factors[name].a;
      const std::size_t idx = rng.uniform_int(0, mp.size() - 1);
      mp.values()[idx] += h;
      mm.values()[idx] -= h;
      analytic = (use_b ? g.factors.at(name).b : g.factors.at(name).a).values()[idx];
    }
    const double fd = (adapter_loss(net, w0, p, img, e, 17, noise, nullptr) -
                       adapter_loss(net, w0, m, img, e, 17, noise, nullptr)) /
                      (2 * h);
    worst_adapter = std::max(worst_adapter, testutil::rel_err(analytic, fd));
  }
  return {worst_trunk < 1e-4 && worst_adapter < 1e-4,
          fmt("worst relative error: trunk %.3g, adapter %.3g", worst_trunk, worst_adapter)};
}

Outcome gradient_masking() {
  const Denoiser net = default_net();
  const LayeredBackbone w = net.init_backbone(109);
  const LayerRouting routing = LayerRouting::split_half(w.names());
  std::size_t checked = 0;
  std::size_t clean = 0;
  for (AdapterKind kind : {AdapterKind::Style, AdapterKind::Content}) {
    AdapterTrainConfig cfg;
    cfg.steps = 200;
    cfg.seed = 110;
    const std::string prompt = kind == AdapterKind::Style ? "in the style of van gogh <s>" : "a red car <c>";
    train_adapter(net, kind, w, routing, compose(1, 2, 16, 16, 1), prompt, cfg, [&](const AdapterStepView& v) {
      double out = 0.0;
      for (const auto& [name, f] : v.factors) {
        if (routing.contains(kind, name)) continue;
        for (double x : f.b.values()) out += std::abs(x);
        for (double x : f.a.values()) out += std::abs(x);
      }
      ++checked;
      clean += out == 0.0;
    });
  }
  return {checked == 400 && clean == 400,
          std::to_string(clean) + "/" + std::to_string(checked) + " steps with exactly zero out-of-set gradient"};
}

Outcome directional_disentanglement() {
  int wins = 0;
  std::ostringstream d;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig cfg;
    cfg.seed = seed;
    const Denoiser net = make_denoiser(cfg);
    const LayeredBackbone base = train_base(net, cfg);
    const auto pairs = generate_pair_dataset(cfg.pair_config());
    const TrunkResult trunk = finetune_trunk(net, base, pairs, cfg.trunk_config());
    const double plain = disentanglement_on_host(net, base, pairs, cfg, 3, 3).s_x;
    const double limited = disentanglement_on_host(net, trunk.w_init, pairs, cfg, 3, 3).s_x;
    const bool win = limited <= 0.9 * plain;
    wins += win;
    d << (seed > 1 ? "; " : "") << "seed " << seed << ": " << fmt("%.3f -> %.3f", plain, limited);
  }
  return {wins == 3, std::to_string(wins) + "/3 seeds at least 10% lower S_x (" + d.str() + ")"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CRAFTLORA_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

bool run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string s = "--seed 4 ";
  const fs::path data = dir / "data";
  std::ofstream(dir / "grid.json")
      << R"({"seed": 4,
  "contents": [{"prompt": "a red car <c>", "reference": "data/pair_0000_content.pgm", "adapter": "content.crft"}],
  "styles": [{"prompt": "in the style of van gogh <s>", "reference": "data/pair_0000_style.pgm", "adapter": "style.crft"},
             {"prompt": "in the style of ukiyo-e <s>", "reference": "data/pair_0001_style.pgm"}]})";
  return run_cli(s + "gen-pairs --out " + q(data)) == 0 &&
         run_cli(s + "train-trunk --data " + q(data) + " --out " + q(dir / "winit.crft")) == 0 &&
         run_cli(s + "train-lora --kind content --reference " + q(data / "pair_0000_content.pgm") +
                 " --prompt \"a red car <c>\" --backbone " + q(dir / "winit.crft") + " --out " +
                 q(dir / "content.crft")) == 0 &&
         run_cli(s + "train-lora --kind style --reference " + q(data / "pair_0000_style.pgm") +
                 " --prompt \"in the style of van gogh <s>\" --backbone " + q(dir / "winit.crft") + " --out " +
                 q(dir / "style.crft")) == 0 &&
         run_cli(s + "sample --prompt \"a red car <c> in the style of van gogh <s>\" --backbone " +
                 q(dir / "winit.crft") + " --content-adapter " + q(dir / "content.crft") + " --style-adapter " +
                 q(dir / "style.crft") + " --trace " + q(dir / "trace.txt") + " --out " + q(dir / "sample.pgm")) ==
             0 &&
         run_cli(s + "eval --grid " + q(dir / "grid.json") + " --backbone " + q(dir / "winit.crft") + " --out " +
                 q(dir / "report.json")) == 0;
}

Outcome end_to_end() {
  const fs::path root = fs::temp_directory_path() / "craftlora_acceptance";
  if (!run_pipeline(root / "run1") || !run_pipeline(root / "run2")) return {false, "a pipeline command failed"};
  std::size_t files = 0;
  std::size_t same = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "run1")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "run2" / fs::relative(e.path(), root / "run1");
    same += fs::exists(other) && read_file(e.path()) == read_file(other);
  }
  return {files > 200 && same == files, std::to_string(same) + "/" + std::to_string(files) + " artifacts byte-identical"};
}

Outcome checkpoint_round_trip() {
  const Denoiser net = default_net();
  const LayeredBackbone w = net.init_backbone(111);
  const fs::path dir = fs::temp_directory_path() / "craftlora_acceptance_ckpt";
  fs::create_directories(dir);

  save_checkpoint(dir / "b.crft", backbone_checkpoint(w));
  const LayeredBackbone wb = backbone_from_checkpoint(load_checkpoint(dir / "b.crft"));
  bool ok = wb.size() == w.size();
  for (std::size_t l = 0; ok && l < w.size(); ++l) ok = wb.layers[l].w == narrow32(w.layers[l].w);

  const LayerRouting routing = LayerRouting::split_half(w.names());
  LoraAdapter ad = make_adapter(AdapterKind::Content, w, routing, 16, 0.05, 3);
  CounterRng rng(112);
  for (auto& [name, f] : ad.factors)
    for (double& v : f.a.values()) v = rng.normal();
  save_checkpoint(dir / "a.crft", adapter_checkpoint(ad, host_hash(w)));
  const LoraAdapter ab = adapter_from_checkpoint(load_checkpoint(dir / "a.crft"));
  for (const auto& [name, f] : ad.factors)
    ok = ok && ab.factors.at(name).b == narrow32(f.b) && ab.factors.at(name).a == narrow32(f.a);

  const ExpertEncoderParams enc = ExpertEncoderParams::defaults(5);
  save_checkpoint(dir / "e.crft", encoder_checkpoint(enc));
  const ExpertEncoderParams eb = encoder_from_checkpoint(load_checkpoint(dir / "e.crft"));
  ok = ok && eb.identity.w == narrow32(enc.identity.w) && eb.content.w == narrow32(enc.content.w) &&
       eb.style.w == narrow32(enc.style.w) && eb.head_w == narrow32(enc.head_w) && eb.id_table == narrow32(enc.id_table);
  for (const char* name : {"b.crft", "a.crft", "e.crft"})
    ok = ok && serialize(load_checkpoint(dir / name)) == read_file(dir / name);

  int rejected = 0;
  for (const char* name : {"b.crft", "a.crft", "e.crft"}) {
    std::string bytes = read_file(dir / name);
    bytes[bytes.size() - 2] ^= 0x10;
    std::ofstream(dir / "corrupt.crft", std::ios::binary) << bytes;
    rejected += run_cli("inspect " + q(dir / "corrupt.crft")) == 2;
  }
  return {ok && rejected == 3, std::string(ok ? "3 kinds bit-exact at 32 bits" : "round-trip mismatch") + ", " +
                                   std::to_string(rejected) + "/3 corrupted files exit 2"};
}

struct Criterion {
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"linear-algebra suite", 10, linear_algebra},
      {"rank-schedule exactness", 1, rank_schedule},
      {"subspace-merge oracle", 10, subspace_merge},
      {"frequency partition", 5, frequency_partition},
      {"acfg equivalence", 30, acfg_equivalence},
      {"unconditional-path purity", 10, unconditional_purity},
      {"two-pass cost", 10, two_pass_cost},
      {"gradient checks", 60, gradient_checks},
      {"gradient masking", 60, gradient_masking},
      {"directional disentanglement", 600, directional_disentanglement},
      {"end-to-end determinism", 600, end_to_end},
      {"checkpoint round-trip", 60, checkpoint_round_trip},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const Criterion& c = criteria[k];
    if (!only.empty() && only != std::to_string(k + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.ok && secs < c.limit_seconds;
    failures += !pass;
    std::printf("%s [%2zu] %s: %s (%.1fs, limit %.0fs)\n", pass ? "PASS" : "FAIL", k + 1, c.name, o.detail.c_str(),
                secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
