#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace craftlora {

inline constexpr std::size_t kEmbeddingDim = 64;

/// Routing view of a raw prompt. `<c>` / `<s>` close a span that runs back to
/// the previous marker or sentence start; `<c>…</c>` / `<s>…</s>` enclose one.
struct PromptSpec {
  std::string raw;
  std::string stripped;
  std::optional<std::string> content_span;
  std::optional<std::string> style_span;

  bool has_content_marker() const noexcept { return content_span.has_value(); }
  bool has_style_marker() const noexcept { return style_span.has_value(); }
};

/// Throws MalformedMarkers when a closing marker precedes its opener or a
/// marker is repeated.
PromptSpec parse_prompt(std::string_view text);

std::vector<std::string> tokenize(std::string_view text);

/// Deterministic toy text encoder: each lower-cased whitespace token is hashed
/// to a seeded Gaussian vector; tokens are combined with weights 1/(position+1)
/// and the result is scaled to unit norm. The empty string maps to zero.
std::vector<double> encode_semantic(std::string_view stripped, std::size_t dim = kEmbeddingDim);

}  // namespace craftlora
