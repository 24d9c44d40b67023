#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "craftlora/checkpoint.hpp"
#include "craftlora/config.hpp"
#include "craftlora/error.hpp"
#include "craftlora/evalkit.hpp"
#include "craftlora/guidance.hpp"
#include "craftlora/pipeline.hpp"
#include "craftlora/subspace.hpp"

namespace fs = std::filesystem;
using namespace craftlora;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;

  RunConfig load() const {
    RunConfig c = RunConfig::load(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path));
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    c.validate();
    return c;
  }
};

fs::path sidecar(const fs::path& out, const std::string& tag) {
  fs::path p = out;
  p.replace_extension();
  return p.string() + "." + tag + ".crft";
}

LayeredBackbone base_or_train(const Denoiser& net, const RunConfig& cfg, const std::string& base_path) {
  if (!base_path.empty()) {
    LayeredBackbone b = backbone_from_checkpoint(load_checkpoint(base_path));
    net.check_weights(b);
    return b;
  }
  std::fprintf(stderr, "training base denoiser (%zu steps)\n", cfg.denoiser.steps);
  // Round through 32 bits so the in-memory base equals what is saved.
  LayeredBackbone b = train_base(net, cfg);
  return backbone_from_checkpoint(deserialize(serialize(backbone_checkpoint(b))));
}

LayeredBackbone load_backbone(const Denoiser& net, const std::string& path) {
  LayeredBackbone b = backbone_from_checkpoint(load_checkpoint(path));
  net.check_weights(b);
  return b;
}

std::optional<LoraAdapter> load_adapter(const std::string& path, AdapterKind kind, const LayeredBackbone& host,
                                        bool check) {
  if (path.empty()) return std::nullopt;
  const Checkpoint ck = load_checkpoint(path);
  if (check) check_host(ck, host);
  LoraAdapter ad = adapter_from_checkpoint(ck);
  if (ad.kind != kind) {
    throw Error(ErrorKind::RoutingViolation, path + " holds a " + to_string(ad.kind) + " adapter");
  }
  ad.validate(host);
  return ad;
}

int cmd_gen_pairs(const Globals& g, const std::string& out, const std::string& base_path) {
  const RunConfig cfg = g.load();
  const PairGenConfig pc = cfg.pair_config();
  std::vector<ContrastPair> pairs;
  if (pc.mode == PairMode::Diffusion) {
    const Denoiser net = make_denoiser(cfg);
    const LayeredBackbone base = base_or_train(net, cfg, base_path);
    pairs = generate_pair_dataset(pc, {&net, &base});
  } else {
    pairs = generate_pair_dataset(pc);
  }
  write_dataset(out, pairs);
  std::printf("wrote %zu pairs to %s\n", pairs.size(), out.c_str());
  return 0;
}

int cmd_train_trunk(const Globals& g, const std::string& data, const std::string& out, const std::string& base_path) {
  const RunConfig cfg = g.load();
  const Denoiser net = make_denoiser(cfg);
  const auto pairs = read_dataset(data);
  const LayeredBackbone base = base_or_train(net, cfg, base_path);
  const TrunkResult r = finetune_trunk(net, base, pairs, cfg.trunk_config());
  if (r.degenerate_pairs > 0) {
    std::fprintf(stderr, "warning: %zu pairs have identical content and style members\n", r.degenerate_pairs);
  }
  save_checkpoint(out, backbone_checkpoint(r.w_init));
  save_checkpoint(sidecar(out, "bases"), bases_checkpoint(r.bases, base.names()));
  save_checkpoint(sidecar(out, "base"), backbone_checkpoint(base));
  std::printf("eval loss %.6f -> %.6f\n", r.initial_eval_loss, r.final_eval_loss);
  std::printf("final minibatch loss %.6f\n", r.losses.empty() ? r.final_eval_loss : r.losses.back());
  std::printf("%-10s %6s %6s %6s\n", "layer", "r_c", "r_s", "merged");
  for (std::size_t l = 0; l < base.size(); ++l) {
    std::printf("%-10s %6zu %6zu %6zu\n", base.layers[l].name.c_str(), r.bases.content[l].cols(),
                r.bases.style[l].cols(), r.q_combined[l].cols());
  }
  std::printf("host hash %s\n", host_hash(r.w_init).c_str());
  return 0;
}

int cmd_train_lora(const Globals& g, const std::string& kind_text, const std::string& reference,
                   const std::string& prompt, const std::string& backbone, const std::string& out) {
  const RunConfig cfg = g.load();
  const Denoiser net = make_denoiser(cfg);
  const AdapterKind kind = adapter_kind_from_string(kind_text);
  const LayeredBackbone host = load_backbone(net, backbone);
  const ImageGrid ref = read_pgm(reference);
  const AdapterTrainResult r = train_adapter(net, kind, host, cfg.routing(), ref, prompt, cfg.adapter_config());
  save_checkpoint(out, adapter_checkpoint(r.adapter, host_hash(host)));
  if (!r.losses.empty()) std::printf("final step loss %.6f\n", r.losses.back());
  std::printf("wrote %s adapter (%zu layers, rank %zu)\n", to_string(kind).c_str(), r.adapter.factors.size(),
              r.adapter.rank);
  return 0;
}

struct SampleOptions {
  std::string prompt;
  std::string backbone;
  std::string content_adapter;
  std::string style_adapter;
  std::string encoder;
  std::size_t concept_id = 0;
  std::string out;
  std::string host = "matched";
  bool symmetric = false;
  std::string trace;
  std::optional<double> gamma_c;
  std::optional<double> gamma_s;
  std::optional<double> omega;
};

int cmd_sample(const Globals& g, const SampleOptions& o) {
  const RunConfig cfg = g.load();
  const Denoiser net = make_denoiser(cfg);
  const LayeredBackbone host = load_backbone(net, o.backbone);
  const bool check = o.host != "plain";
  const auto ca = load_adapter(o.content_adapter, AdapterKind::Content, host, check);
  const auto sa = load_adapter(o.style_adapter, AdapterKind::Style, host, check);
  const ExpertEncoderParams enc =
      o.encoder.empty() ? ExpertEncoderParams::defaults() : encoder_from_checkpoint(load_checkpoint(o.encoder));
  PromptConditioning pc = condition_prompt(o.prompt, enc, o.concept_id, cfg.arch.embedding_dim);
  if (o.gamma_c) pc.branch.content = *o.gamma_c;
  if (o.gamma_s) pc.branch.style = *o.gamma_s;
  GuidanceConfig gc = cfg.guidance;
  gc.symmetric = o.symmetric;
  if (o.omega) gc.omega = *o.omega;
  const SampleResult r = acfg_sample(net, host, ca ? &*ca : nullptr, sa ? &*sa : nullptr, pc, gc, cfg.seed);
  write_pgm(o.out, clamp01(r.image));
  if (!o.trace.empty()) {
    std::ofstream file;
    if (o.trace != "-") {
      file.open(o.trace, std::ios::binary | std::ios::trunc);
      if (!file) throw Error(ErrorKind::IoError, "cannot write " + o.trace);
    }
    std::ostream& os = o.trace == "-" ? std::cout : file;
    for (const auto& rec : r.trace) os << rec.to_line() << '\n';
  }
  std::fprintf(stderr, "%zu network evaluations\n", r.evaluations);
  return 0;
}

int cmd_eval(const Globals& g, const std::string& grid, const std::string& backbone, const std::string& out,
             const std::string& host_mode) {
  const RunConfig cfg = g.load();
  const Denoiser net = make_denoiser(cfg);
  const LayeredBackbone host = load_backbone(net, backbone);
  GridSpec spec = load_grid_spec(grid, host, host_mode != "plain");
  if (g.seed) spec.seed = *g.seed;
  const EvalReport rep = evaluate_spec(net, host, spec, cfg, ExpertEncoderParams::defaults());
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + out);
  f << rep.to_json();
  std::printf("S_c %.4f  S_s %.4f  S_x %.4f\n", rep.s_c, rep.s_s, rep.s_x);
  return 0;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint c = load_checkpoint(path);
  std::printf("kind       %s\n", to_string(c.kind).c_str());
  std::printf("version    %u\n", Checkpoint::kVersion);
  std::printf("crc        ok\n");
  for (const auto& [k, v] : c.metadata) std::printf("meta       %s = %s\n", k.c_str(), v.c_str());
  std::printf("tensors    %zu\n", c.tensors.size());
  for (const auto& t : c.tensors) std::printf("  %-20s %4zu x %-4zu\n", t.name.c_str(), t.value.rows(), t.value.cols());
  if (c.kind == CheckpointKind::Backbone && c.meta("role").value_or("weights") == "weights") {
    std::printf("host hash  %s\n", host_hash(backbone_from_checkpoint(c)).c_str());
  }
  if (c.kind == CheckpointKind::Adapter) {
    const LoraAdapter ad = adapter_from_checkpoint(c);
    std::printf("routing    content {%s}\n", c.meta("routing_content").value_or("").c_str());
    std::printf("routing    style   {%s}\n", c.meta("routing_style").value_or("").c_str());
    std::printf("disjoint   yes\n");
    for (const auto& [name, f] : ad.factors) std::printf("rank       %s %zu\n", name.c_str(), f.b.cols());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-limited content/style LoRA toolkit on a toy diffusion denoiser"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run config (falls back to $CRAFTLORA_CONFIG)");
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--threads", g.threads, "Worker threads; results do not depend on it");

  std::string out;
  std::string base;

  auto* gen = app.add_subcommand("gen-pairs", "Build the contrastive content/style dataset");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--base", base, "Base denoiser checkpoint (diffusion mode)");

  std::string data;
  auto* trunk = app.add_subcommand("train-trunk", "Rank-limited backbone fine-tuning");
  trunk->add_option("--data", data, "Dataset directory")->required();
  trunk->add_option("--out", out, "W_init checkpoint; .bases and .base sidecars are written next to it")->required();
  trunk->add_option("--base", base, "Base denoiser checkpoint; trained on the fly if absent");

  std::string kind;
  std::string reference;
  std::string prompt;
  std::string backbone;
  auto* lora = app.add_subcommand("train-lora", "Train a content or style adapter on one reference");
  lora->add_option("--kind", kind, "content or style")->required()->check(CLI::IsMember({"content", "style"}));
  lora->add_option("--reference", reference, "Reference image (PGM)")->required();
  lora->add_option("--prompt", prompt, "Prompt with <c> or <s> marker")->required();
  lora->add_option("--backbone", backbone, "Host backbone checkpoint")->required();
  lora->add_option("--out", out, "Adapter checkpoint")->required();

  SampleOptions so;
  auto* sample = app.add_subcommand("sample", "Asymmetric CFG sampling");
  sample->add_option("--prompt", so.prompt, "Prompt with optional <c>/<s> markers")->required();
  sample->add_option("--backbone", so.backbone, "Host backbone checkpoint")->required();
  sample->add_option("--content-adapter", so.content_adapter, "Content adapter checkpoint");
  sample->add_option("--style-adapter", so.style_adapter, "Style adapter checkpoint");
  sample->add_option("--encoder", so.encoder, "Expert encoder checkpoint");
  sample->add_option("--concept", so.concept_id, "Concept id for the identity branch");
  sample->add_option("--out", so.out, "Output image (PGM)")->required();
  sample->add_option("--host", so.host, "matched (hash-checked) or plain (any backbone)")
      ->check(CLI::IsMember({"matched", "plain"}));
  sample->add_flag("--symmetric-cfg", so.symmetric, "Run the unconditional pass on the adapted weights");
  sample->add_option("--trace", so.trace, "Write per-step records to FILE ('-' for stdout)");
  sample->add_option("--gamma-c", so.gamma_c, "Override the content gain");
  sample->add_option("--gamma-s", so.gamma_s, "Override the style gain");
  sample->add_option("--omega", so.omega, "Override the guidance scale");

  std::string grid;
  std::string host_mode = "matched";
  auto* eval = app.add_subcommand("eval", "Sample a content × style grid and score it");
  eval->add_option("--grid", grid, "Grid spec JSON")->required();
  eval->add_option("--backbone", backbone, "Host backbone checkpoint")->required();
  eval->add_option("--out", out, "Report JSON")->required();
  eval->add_option("--host", host_mode, "matched or plain")->check(CLI::IsMember({"matched", "plain"}));

  std::string ckpt;
  auto* inspect = app.add_subcommand("inspect", "Summarise a checkpoint");
  inspect->add_option("checkpoint", ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_pairs(g, out, base);
    if (*trunk) return cmd_train_trunk(g, data, out, base);
    if (*lora) return cmd_train_lora(g, kind, reference, prompt, backbone, out);
    if (*sample) return cmd_sample(g, so);
    if (*eval) return cmd_eval(g, grid, backbone, out, host_mode);
    if (*inspect) return cmd_inspect(ckpt);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
