#include "craftlora/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "craftlora/error.hpp"

namespace craftlora {

namespace {

using Json = nlohmann::ordered_json;

class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::ConfigInvalid, path_ + " must be a JSON object");
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::ConfigInvalid, "config key " + path_ + "." + key + " has the wrong type");
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw Error(ErrorKind::ConfigInvalid, "unknown config key " + path_ + "." + k);
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void window_from(Section& s, const char* key, TimeWindow& w) {
  std::vector<int> v{w.first, w.last};
  s.get(key, v);
  if (v.size() != 2) throw Error(ErrorKind::ConfigInvalid, std::string("guidance.") + key + " needs [first, last]");
  w = {v[0], v[1]};
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = text.find_first_not_of(" \t\r\n") == std::string::npos ? Json::object() : Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  {
    Section s = root.sub("denoiser");
    std::size_t size = c.arch.image_height;
    s.get("image_size", size);
    c.arch.image_height = c.arch.image_width = size;
    s.get("hidden", c.arch.hidden);
    s.get("layers", c.arch.layers);
    s.get("data_variance", c.arch.data_variance);
    s.get("train_steps", c.denoiser.steps);
    s.get("batch", c.denoiser.batch);
    s.get("lr", c.denoiser.lr);
    s.get("cond_dropout", c.denoiser.cond_dropout);
    s.finish();
  }
  {
    Section s = root.sub("schedule");
    s.get("steps", c.schedule_steps);
    s.get("beta_start", c.beta_start);
    s.get("beta_end", c.beta_end);
    s.finish();
  }
  {
    Section s = root.sub("trunk");
    s.get("r_max", c.trunk.ranks.r_max);
    s.get("r_min", c.trunk.ranks.r_min);
    s.get("steps", c.trunk.steps);
    s.get("batch", c.trunk.batch);
    s.get("lr_start", c.trunk.lr.start);
    s.get("lr_peak", c.trunk.lr.peak);
    s.get("lr_floor", c.trunk.lr.floor);
    s.get("warmup", c.trunk.lr.warmup);
    s.get("lambda_reg", c.trunk.lambda_reg);
    s.get("alpha_perc", c.trunk.alpha_perc);
    s.get("init_scale", c.trunk.init_scale);
    s.get("eval_pairs", c.trunk.eval_pairs);
    s.finish();
  }
  {
    Section s = root.sub("adapter");
    s.get("rank", c.adapter.rank);
    s.get("steps", c.adapter.steps);
    s.get("batch", c.adapter.batch);
    s.get("lr", c.adapter.lr);
    s.get("init_scale", c.adapter.init_scale);
    s.get("routing_content", c.routing_content);
    s.get("routing_style", c.routing_style);
    s.finish();
  }
  {
    Section s = root.sub("guidance");
    s.get("omega", c.guidance.omega);
    window_from(s, "t_content", c.guidance.content_window);
    window_from(s, "t_style", c.guidance.style_window);
    s.get("alpha_min", c.guidance.alpha_min);
    s.get("alpha_max", c.guidance.alpha_max);
    std::string g = to_string(c.guidance.curve);
    s.get("g_kind", g);
    c.guidance.curve = scale_curve_from_string(g);
    s.finish();
  }
  {
    Section s = root.sub("dataset");
    s.get("sigma", c.dataset.sigma);
    s.get("n_content", c.dataset.n_content);
    s.get("n_style", c.dataset.n_style);
    std::string mode = c.dataset.mode == PairMode::Synthetic ? "synthetic" : "diffusion";
    s.get("mode", mode);
    if (mode == "synthetic") {
      c.dataset.mode = PairMode::Synthetic;
    } else if (mode == "diffusion") {
      c.dataset.mode = PairMode::Diffusion;
    } else {
      throw Error(ErrorKind::ConfigInvalid, "dataset.mode must be 'synthetic' or 'diffusion'");
    }
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::optional<std::filesystem::path>& path) {
  std::optional<std::filesystem::path> p = path;
  if (!p) {
    if (const char* env = std::getenv("CRAFTLORA_CONFIG"); env && *env) p = env;
  }
  if (!p) return RunConfig{};
  std::ifstream in(*p);
  if (!in) throw Error(ErrorKind::IoError, "cannot read config " + p->string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["denoiser"] = {{"image_size", arch.image_height}, {"hidden", arch.hidden},
                   {"layers", arch.layers},           {"data_variance", arch.data_variance},
                   {"train_steps", denoiser.steps},   {"batch", denoiser.batch},
                   {"lr", denoiser.lr},               {"cond_dropout", denoiser.cond_dropout}};
  j["schedule"] = {{"steps", schedule_steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
  j["trunk"] = {{"r_max", trunk.ranks.r_max},   {"r_min", trunk.ranks.r_min},       {"steps", trunk.steps},
                {"batch", trunk.batch},         {"lr_start", trunk.lr.start},       {"lr_peak", trunk.lr.peak},
                {"lr_floor", trunk.lr.floor},   {"warmup", trunk.lr.warmup},        {"lambda_reg", trunk.lambda_reg},
                {"alpha_perc", trunk.alpha_perc}, {"init_scale", trunk.init_scale}, {"eval_pairs", trunk.eval_pairs}};
  const LayerRouting r = routing();
  j["adapter"] = {{"rank", adapter.rank},
                  {"steps", adapter.steps},
                  {"batch", adapter.batch},
                  {"lr", adapter.lr},
                  {"init_scale", adapter.init_scale},
                  {"routing_content", std::vector<std::string>(r.content().begin(), r.content().end())},
                  {"routing_style", std::vector<std::string>(r.style().begin(), r.style().end())}};
  j["guidance"] = {{"omega", guidance.omega},
                   {"t_content", {guidance.content_window.first, guidance.content_window.last}},
                   {"t_style", {guidance.style_window.first, guidance.style_window.last}},
                   {"alpha_min", guidance.alpha_min},
                   {"alpha_max", guidance.alpha_max},
                   {"g_kind", to_string(guidance.curve)}};
  j["dataset"] = {{"sigma", dataset.sigma},
                  {"n_content", dataset.n_content},
                  {"n_style", dataset.n_style},
                  {"mode", dataset.mode == PairMode::Synthetic ? "synthetic" : "diffusion"}};
  return j.dump(2) + "\n";
}

std::string RunConfig::hash() const {
  Json canonical = Json::parse(to_json());
  canonical.erase("threads");
  const std::string text = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LayerRouting RunConfig::routing() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < arch.layers; ++i) names.push_back(arch.layer_name(i));
  if (routing_content.empty() && routing_style.empty()) return LayerRouting::split_half(names);
  return LayerRouting({routing_content.begin(), routing_content.end()}, {routing_style.begin(), routing_style.end()});
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigInvalid, msg); };
  if (arch.image_height == 0 || arch.hidden == 0) fail("denoiser.image_size and hidden must be >= 1");
  if (arch.layers < 2) fail("denoiser.layers must be >= 2");
  if (!(arch.data_variance > 0.0)) fail("denoiser.data_variance must be > 0");
  if (denoiser.batch == 0) fail("denoiser.batch must be >= 1");
  if (!(denoiser.lr > 0.0)) fail("denoiser.lr must be > 0");
  if (denoiser.cond_dropout < 0.0 || denoiser.cond_dropout > 1.0) fail("denoiser.cond_dropout must be in [0, 1]");
  if (schedule_steps < 1) fail("schedule.steps must be >= 1");
  if (!(beta_start > 0.0) || beta_end < beta_start || !(beta_end < 1.0)) fail("need 0 < beta_start <= beta_end < 1");
  trunk_config().validate();
  adapter.validate();
  const LayerRouting r = routing();
  for (const auto* set : {&r.content(), &r.style()}) {
    for (const auto& name : *set) {
      bool known = false;
      for (std::size_t i = 0; i < arch.layers; ++i) known = known || arch.layer_name(i) == name;
      if (!known) fail("routing names unknown layer '" + name + "'");
    }
  }
  guidance.validate(schedule_steps);
  if (!(dataset.sigma > 0.0 && dataset.sigma <= 1.0)) fail("dataset.sigma must be in (0, 1]");
  if (dataset.n_content < 1 || dataset.n_style < 1) fail("dataset.n_content and n_style must be >= 1");
}

DenoiserTrainConfig RunConfig::denoiser_config() const {
  DenoiserTrainConfig d = denoiser;
  d.seed = seed;
  d.threads = threads;
  return d;
}

TrunkConfig RunConfig::trunk_config() const {
  TrunkConfig t = trunk;
  t.ranks.layers = static_cast<int>(arch.layers);
  t.seed = seed;
  t.threads = threads;
  return t;
}

AdapterTrainConfig RunConfig::adapter_config() const {
  AdapterTrainConfig a = adapter;
  a.seed = seed;
  a.threads = threads;
  return a;
}

PairGenConfig RunConfig::pair_config() const {
  PairGenConfig p = dataset;
  p.seed = seed;
  p.height = arch.image_height;
  p.width = arch.image_width;
  p.threads = threads;
  return p;
}

}  // namespace craftlora
