#include "craftlora/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "craftlora/checkpoint.hpp"
#include "craftlora/error.hpp"
#include "craftlora/parallel.hpp"
#include "craftlora/prompt.hpp"

namespace craftlora {

Denoiser make_denoiser(const RunConfig& config) { return Denoiser(config.arch, config.schedule()); }

std::vector<TrainingExample> base_training_set(const RunConfig& config) {
  std::vector<TrainingExample> data;
  const auto& cv = content_vocabulary();
  const auto& sv = style_vocabulary();
  for (int i = 0; i < static_cast<int>(cv.size()); ++i) {
    for (int j = 0; j < static_cast<int>(sv.size()); ++j) {
      data.push_back({compose(i, j, config.arch.image_height, config.arch.image_width, config.seed),
                      encode_semantic(cv[i] + " " + sv[j], config.arch.embedding_dim)});
    }
  }
  return data;
}

LayeredBackbone train_base(const Denoiser& net, const RunConfig& config) {
  return train_denoiser(net, base_training_set(config), config.denoiser_config()).weights;
}

namespace {

std::string pair_file(int pair_id, const char* member) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "pair_%04d_%s.pgm", pair_id, member);
  return buf;
}

int vocab_index(const std::vector<std::string>& vocab, const std::string& word) {
  const auto it = std::find(vocab.begin(), vocab.end(), word);
  return it == vocab.end() ? 0 : static_cast<int>(it - vocab.begin());
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<ContrastPair>& pairs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!manifest) throw Error(ErrorKind::IoError, "cannot write " + (dir / "manifest.tsv").string());
  for (const auto& p : pairs) {
    const std::string cf = pair_file(p.pair_id, "content");
    const std::string sf = pair_file(p.pair_id, "style");
    write_pgm(dir / cf, p.content_image);
    write_pgm(dir / sf, p.style_image);
    manifest << p.pair_id << '\t' << cf << '\t' << sf << '\t' << p.content_prompt << '\t' << p.style_prompt << '\t'
             << p.content_modifier << '\t' << p.style_modifier << '\n';
  }
  if (!manifest) throw Error(ErrorKind::IoError, "write failed for manifest.tsv");
}

std::vector<ContrastPair> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw Error(ErrorKind::IoError, "cannot read " + (dir / "manifest.tsv").string());
  std::vector<ContrastPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) {
      throw Error(ErrorKind::IoError, "manifest line " + std::to_string(line_no) + " needs 7 tab-separated fields");
    }
    ContrastPair p;
    try {
      p.pair_id = std::stoi(f[0]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::IoError, "manifest line " + std::to_string(line_no) + ": bad pair id");
    }
    p.content_image = read_pgm(dir / f[1]);
    p.style_image = read_pgm(dir / f[2]);
    p.content_prompt = f[3];
    p.style_prompt = f[4];
    p.content_modifier = f[5];
    p.style_modifier = f[6];
    p.content_index = vocab_index(content_vocabulary(), p.content_prompt);
    p.style_index = vocab_index(style_vocabulary(), p.style_prompt);
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw Error(ErrorKind::IoError, "dataset " + dir.string() + " is empty");
  return pairs;
}

GridSpec load_grid_spec(const std::filesystem::path& path, const LayeredBackbone& host, bool check_hosts) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read grid spec " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, std::string("grid spec is not valid JSON: ") + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  auto entries = [&](const char* key) {
    std::vector<GridEntry> out;
    if (!j.contains(key) || !j[key].is_array()) {
      throw Error(ErrorKind::GridIncomplete, std::string("grid spec needs a '") + key + "' array");
    }
    for (const auto& e : j[key]) {
      if (!e.is_object() || !e.contains("prompt") || !e.contains("reference")) {
        throw Error(ErrorKind::GridIncomplete, std::string("every '") + key + "' entry needs prompt and reference");
      }
      GridEntry g;
      g.prompt = e["prompt"].get<std::string>();
      g.reference = read_pgm(resolve(e["reference"].get<std::string>()));
      if (e.contains("adapter")) {
        const Checkpoint ck = load_checkpoint(resolve(e["adapter"].get<std::string>()));
        if (check_hosts) check_host(ck, host);
        g.adapter = adapter_from_checkpoint(ck);
      }
      out.push_back(std::move(g));
    }
    if (out.empty()) throw Error(ErrorKind::GridIncomplete, std::string("grid spec has no ") + key);
    return out;
  };
  GridSpec spec;
  spec.contents = entries("contents");
  spec.styles = entries("styles");
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  return spec;
}

std::vector<std::vector<ImageGrid>> sample_grid(const Denoiser& net, const LayeredBackbone& host,
                                                const GridSpec& spec, const GuidanceConfig& guidance,
                                                const ExpertEncoderParams& encoder, unsigned threads) {
  const std::size_t n_c = spec.contents.size();
  const std::size_t n_s = spec.styles.size();
  std::vector<ImageGrid> flat(n_c * n_s);
  parallel_for(flat.size(), threads, [&](std::size_t k) {
    const GridEntry& c = spec.contents[k / n_s];
    const GridEntry& s = spec.styles[k % n_s];
    const PromptConditioning pc = condition_prompt(c.prompt + " " + s.prompt, encoder, 0, net.arch().embedding_dim);
    const LoraAdapter* ca = c.adapter ? &*c.adapter : nullptr;
    const LoraAdapter* sa = s.adapter ? &*s.adapter : nullptr;
    flat[k] = acfg_sample(net, host, ca, sa, pc, guidance, spec.seed).image;
  });
  std::vector<std::vector<ImageGrid>> grid(n_c);
  for (std::size_t k = 0; k < flat.size(); ++k) grid[k / n_s].push_back(std::move(flat[k]));
  return grid;
}

EvalReport evaluate_spec(const Denoiser& net, const LayeredBackbone& host, const GridSpec& spec,
                         const RunConfig& config, const ExpertEncoderParams& encoder) {
  const auto grid = sample_grid(net, host, spec, config.guidance, encoder, config.threads);
  std::vector<ImageGrid> cref;
  std::vector<ImageGrid> sref;
  for (const auto& e : spec.contents) cref.push_back(e.reference);
  for (const auto& e : spec.styles) sref.push_back(e.reference);
  const FeatureExtractor fx(config.arch.pixels());
  EvalReport rep = evaluate_grid(grid, cref, sref, config.dataset.sigma, fx);
  rep.seed = spec.seed;
  rep.config_hash = config.hash();
  return rep;
}

EvalReport disentanglement_on_host(const Denoiser& net, const LayeredBackbone& host,
                                   const std::vector<ContrastPair>& pairs, const RunConfig& config,
                                   int n_content, int n_style) {
  const LayerRouting routing = config.routing();
  GridSpec spec;
  spec.seed = config.seed;
  spec.contents.resize(n_content);
  spec.styles.resize(n_style);
  parallel_for(static_cast<std::size_t>(n_content + n_style), config.threads, [&](std::size_t k) {
    AdapterTrainConfig ac = config.adapter_config();
    ac.threads = 1;
    ac.seed = config.seed * 1000 + k + 1;
    if (k < static_cast<std::size_t>(n_content)) {
      const int i = static_cast<int>(k);
      GridEntry& e = spec.contents[i];
      e.prompt = content_vocabulary()[i % 10] + " <c>";
      e.reference = content_reference(i, config.arch.image_height, config.arch.image_width);
      e.adapter = train_adapter(net, AdapterKind::Content, host, routing, e.reference, e.prompt, ac).adapter;
    } else {
      const int j = static_cast<int>(k) - n_content;
      const auto it = std::find_if(pairs.begin(), pairs.end(), [&](const ContrastPair& p) {
        return p.style_index == j;
      });
      if (it == pairs.end()) throw Error(ErrorKind::GridIncomplete, "no pair carries style " + std::to_string(j));
      GridEntry& e = spec.styles[j];
      e.prompt = style_vocabulary()[j % 10] + " <s>";
      e.reference = it->style_image;
      e.adapter = train_adapter(net, AdapterKind::Style, host, routing, e.reference, e.prompt, ac).adapter;
    }
  });
  return evaluate_spec(net, host, spec, config, ExpertEncoderParams::defaults());
}

}  // namespace craftlora
