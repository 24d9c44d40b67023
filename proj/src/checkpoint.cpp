#include "craftlora/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <zlib.h>

#include "craftlora/error.hpp"

namespace craftlora {

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::Backbone: return "backbone";
    case CheckpointKind::Adapter: return "adapter";
    case CheckpointKind::Encoder: return "encoder";
  }
  return "unknown";
}

std::optional<std::string> Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

void Checkpoint::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata.emplace_back(key, std::move(value));
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw Error(ErrorKind::CorruptCheckpoint, "checkpoint has no tensor '" + name + "'");
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'F', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw Error(ErrorKind::CorruptCheckpoint, "checkpoint truncated");
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.kind));
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_str(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    for (double v : t.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::CorruptCheckpoint, "not a CRFT checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  Reader trailer(bytes.substr(body), 4);
  const std::uint32_t stored = trailer.u32();
  if (stored != crc_of(bytes.data(), body)) throw Error(ErrorKind::CorruptCheckpoint, "checkpoint CRC mismatch");

  Reader r(bytes, body);
  r.need(4);
  (void)r.u32();  // magic
  if (const auto v = r.u32(); v != Checkpoint::kVersion) {
    throw Error(ErrorKind::CorruptCheckpoint, "unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ckpt;
  const std::uint32_t kind = r.u32();
  if (kind > 2) throw Error(ErrorKind::CorruptCheckpoint, "unknown checkpoint kind " + std::to_string(kind));
  ckpt.kind = static_cast<CheckpointKind>(kind);
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ckpt.metadata.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    r.need(static_cast<std::size_t>(rows) * cols * 4);
    t.value = Matrix(rows, cols);
    for (double& v : t.value.values()) v = static_cast<double>(r.f32());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::CorruptCheckpoint, "unexpected bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  const std::string bytes = serialize(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Matrix narrow32(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

std::string host_hash(const LayeredBackbone& backbone) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& layer : backbone.layers) {
    feed(layer.name.data(), layer.name.size());
    for (double v : layer.w.values()) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                   static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      feed(le, 4);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Checkpoint backbone_checkpoint(const LayeredBackbone& backbone) {
  Checkpoint c;
  c.kind = CheckpointKind::Backbone;
  c.set_meta("role", "weights");
  c.set_meta("trained", backbone.trained ? "1" : "0");
  for (const auto& layer : backbone.layers) c.tensors.push_back({layer.name, layer.w});
  return c;
}

LayeredBackbone backbone_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::Backbone || ckpt.meta("role").value_or("weights") != "weights") {
    throw Error(ErrorKind::CorruptCheckpoint, "expected a backbone weights checkpoint, got " + to_string(ckpt.kind));
  }
  LayeredBackbone b;
  b.trained = ckpt.meta("trained").value_or("0") == "1";
  for (const auto& t : ckpt.tensors) b.layers.push_back({t.name, t.value});
  b.validate();
  return b;
}

Checkpoint bases_checkpoint(const SubspaceBases& bases, const std::vector<std::string>& layer_names) {
  if (bases.content.size() != layer_names.size() || bases.style.size() != layer_names.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one content and one style basis per layer required");
  }
  Checkpoint c;
  c.kind = CheckpointKind::Backbone;
  c.set_meta("role", "bases");
  for (std::size_t l = 0; l < layer_names.size(); ++l) {
    c.tensors.push_back({"content/" + layer_names[l], bases.content[l]});
    c.tensors.push_back({"style/" + layer_names[l], bases.style[l]});
  }
  return c;
}

SubspaceBases bases_from_checkpoint(const Checkpoint& ckpt, const std::vector<std::string>& layer_names) {
  if (ckpt.kind != CheckpointKind::Backbone || ckpt.meta("role") != "bases") {
    throw Error(ErrorKind::CorruptCheckpoint, "expected a bases checkpoint");
  }
  SubspaceBases b;
  for (const auto& name : layer_names) {
    b.content.push_back(ckpt.tensor("content/" + name));
    b.style.push_back(ckpt.tensor("style/" + name));
  }
  return b;
}

namespace {

std::string join(const std::set<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ",") + n;
  return out;
}

std::set<std::string> split(const std::string& text) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    if (end > start) out.insert(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string require(const Checkpoint& c, const std::string& key) {
  auto v = c.meta(key);
  if (!v) throw Error(ErrorKind::CorruptCheckpoint, "checkpoint lacks '" + key + "' record");
  return *v;
}

}  // namespace

Checkpoint adapter_checkpoint(const LoraAdapter& adapter, const std::string& host) {
  Checkpoint c;
  c.kind = CheckpointKind::Adapter;
  c.set_meta("adapter_kind", to_string(adapter.kind));
  c.set_meta("routing_content", join(adapter.routing.content()));
  c.set_meta("routing_style", join(adapter.routing.style()));
  c.set_meta("rank", std::to_string(adapter.rank));
  c.set_meta("host_hash", host);
  Matrix gate(1, adapter.gate_w.size() + 1);
  for (std::size_t i = 0; i < adapter.gate_w.size(); ++i) gate(0, i) = adapter.gate_w[i];
  gate(0, adapter.gate_w.size()) = adapter.gate_b;
  c.tensors.push_back({"gate", gate});
  for (const auto& [name, f] : adapter.factors) {
    c.tensors.push_back({name + "/B", f.b});
    c.tensors.push_back({name + "/A", f.a});
  }
  return c;
}

LoraAdapter adapter_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::Adapter) {
    throw Error(ErrorKind::CorruptCheckpoint, "expected an adapter checkpoint, got " + to_string(ckpt.kind));
  }
  LoraAdapter ad;
  ad.kind = adapter_kind_from_string(require(ckpt, "adapter_kind"));
  ad.routing = LayerRouting(split(require(ckpt, "routing_content")), split(require(ckpt, "routing_style")));
  ad.rank = std::stoul(require(ckpt, "rank"));
  const Matrix& gate = ckpt.tensor("gate");
  if (gate.rows() != 1 || gate.cols() < 1) throw Error(ErrorKind::CorruptCheckpoint, "malformed gate tensor");
  ad.gate_w.assign(gate.values().begin(), gate.values().end() - 1);
  ad.gate_b = gate(0, gate.cols() - 1);
  for (const auto& t : ckpt.tensors) {
    if (t.name == "gate") continue;
    const auto slash = t.name.rfind('/');
    if (slash == std::string::npos) throw Error(ErrorKind::CorruptCheckpoint, "unexpected tensor " + t.name);
    const std::string layer = t.name.substr(0, slash);
    const std::string part = t.name.substr(slash + 1);
    if (part == "B") {
      ad.factors[layer].b = t.value;
    } else if (part == "A") {
      ad.factors[layer].a = t.value;
    } else {
      throw Error(ErrorKind::CorruptCheckpoint, "unexpected tensor " + t.name);
    }
  }
  for (const auto& [name, f] : ad.factors) {
    if (!ad.routing.contains(ad.kind, name)) {
      throw Error(ErrorKind::RoutingViolation, "adapter factor '" + name + "' outside its routing set");
    }
  }
  return ad;
}

void check_host(const Checkpoint& adapter_ckpt, const LayeredBackbone& backbone) {
  const std::string expected = require(adapter_ckpt, "host_hash");
  const std::string actual = host_hash(backbone);
  if (expected != actual) {
    throw Error(ErrorKind::HostMismatch,
                "adapter was trained on backbone " + expected + " but the given backbone hashes to " + actual);
  }
}

Checkpoint encoder_checkpoint(const ExpertEncoderParams& params) {
  auto bias = [](const std::vector<double>& b) { return Matrix(1, b.size(), b); };
  Checkpoint c;
  c.kind = CheckpointKind::Encoder;
  c.tensors.push_back({"identity/w", params.identity.w});
  c.tensors.push_back({"identity/b", bias(params.identity.b)});
  c.tensors.push_back({"content/w", params.content.w});
  c.tensors.push_back({"content/b", bias(params.content.b)});
  c.tensors.push_back({"style/w", params.style.w});
  c.tensors.push_back({"style/b", bias(params.style.b)});
  c.tensors.push_back({"head/w", params.head_w});
  c.tensors.push_back({"head/b", Matrix(1, 2, std::vector<double>{params.head_b_content, params.head_b_style})});
  c.tensors.push_back({"id_table", params.id_table});
  return c;
}

ExpertEncoderParams encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::Encoder) {
    throw Error(ErrorKind::CorruptCheckpoint, "expected an encoder checkpoint, got " + to_string(ckpt.kind));
  }
  auto branch = [&](const std::string& name) {
    const Matrix& b = ckpt.tensor(name + "/b");
    return ExpertEncoderParams::Branch{ckpt.tensor(name + "/w"), std::vector<double>(b.values().begin(), b.values().end())};
  };
  ExpertEncoderParams p;
  p.identity = branch("identity");
  p.content = branch("content");
  p.style = branch("style");
  p.head_w = ckpt.tensor("head/w");
  const Matrix& hb = ckpt.tensor("head/b");
  if (hb.size() != 2) throw Error(ErrorKind::CorruptCheckpoint, "malformed head bias");
  p.head_b_content = hb(0, 0);
  p.head_b_style = hb(0, 1);
  p.id_table = ckpt.tensor("id_table");
  return p;
}

}  // namespace craftlora
