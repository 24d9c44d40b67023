#include "craftlora/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>

#include "craftlora/error.hpp"
#include "craftlora/rng.hpp"

namespace craftlora {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

struct Marker {
  std::size_t pos;
  char kind;     // 'c' or 's'
  bool closing;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

PromptSpec parse_prompt(std::string_view text) {
  PromptSpec spec;
  spec.raw = std::string(text);

  std::vector<Marker> markers;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '<') continue;
    for (const auto& [tag, kind, closing] :
         {std::tuple{"<c>", 'c', false}, std::tuple{"</c>", 'c', true},
          std::tuple{"<s>", 's', false}, std::tuple{"</s>", 's', true}}) {
      const std::string_view t(tag);
      if (text.substr(i, t.size()) == t) {
        markers.push_back({i, kind, closing});
        break;
      }
    }
  }

  auto marker_len = [](const Marker& m) { return m.closing ? std::size_t{4} : std::size_t{3}; };

  // Validate ordering: a closing marker needs an earlier opener of its kind.
  for (char kind : {'c', 's'}) {
    int openers = 0;
    int closers = 0;
    bool open = false;
    for (const auto& m : markers) {
      if (m.kind != kind) continue;
      if (m.closing) {
        if (!open) {
          throw Error(ErrorKind::MalformedMarkers,
                      std::string("closing </") + kind + "> precedes its opener");
        }
        open = false;
        ++closers;
      } else {
        open = true;
        ++openers;
      }
    }
    if (openers > 1 || closers > 1) {
      throw Error(ErrorKind::MalformedMarkers, std::string("repeated <") + kind + "> marker");
    }
  }

  for (std::size_t idx = 0; idx < markers.size(); ++idx) {
    const Marker& m = markers[idx];
    if (m.closing) continue;
    std::string span;
    const Marker* closer = nullptr;
    for (std::size_t j = idx + 1; j < markers.size(); ++j) {
      if (markers[j].kind == m.kind && markers[j].closing) closer = &markers[j];
    }
    if (closer != nullptr) {
      const std::size_t begin = m.pos + marker_len(m);
      std::string inner;
      // Any other markers inside the enclosed span are dropped.
      std::size_t cur = begin;
      for (const auto& other : markers) {
        if (other.pos < begin || other.pos >= closer->pos) continue;
        inner += text.substr(cur, other.pos - cur);
        cur = other.pos + marker_len(other);
      }
      inner += text.substr(cur, closer->pos - cur);
      span = inner;
    } else {
      std::size_t begin = 0;
      if (idx > 0) begin = markers[idx - 1].pos + marker_len(markers[idx - 1]);
      for (std::size_t p = m.pos; p > begin; --p) {
        if (is_sentence_end(text[p - 1])) {
          begin = p;
          break;
        }
      }
      span = std::string(text.substr(begin, m.pos - begin));
    }
    span = collapse_whitespace(trim(span));
    if (m.kind == 'c') {
      spec.content_span = span;
    } else {
      spec.style_span = span;
    }
  }

  std::string stripped;
  std::size_t cur = 0;
  for (const auto& m : markers) {
    stripped += text.substr(cur, m.pos - cur);
    stripped.push_back(' ');
    cur = m.pos + marker_len(m);
  }
  stripped += text.substr(cur);
  spec.stripped = collapse_whitespace(trim(stripped));
  return spec;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<double> encode_semantic(std::string_view stripped, std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  const auto tokens = tokenize(stripped);
  if (tokens.empty()) return e;
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const double weight = 1.0 / static_cast<double>(p + 1);
    CounterRng rng(fnv1a(tokens[p]), 0x70CE);
    for (double& v : e) v += weight * rng.normal();
  }
  double norm = 0.0;
  for (double v : e) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : e) v /= norm;
  return e;
}

}  // namespace craftlora
