#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace craftlora {

/// Single-channel H×W pixel field, row-major. Stored images live in [0, 1];
/// intermediate results (noisy latents, residuals) may be signed.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(std::size_t height, std::size_t width, double fill = 0.0);
  ImageGrid(std::size_t height, std::size_t width, std::vector<double> pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }

  double& operator()(std::size_t y, std::size_t x) { return pixels_[y * width_ + x]; }
  double operator()(std::size_t y, std::size_t x) const { return pixels_[y * width_ + x]; }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }

  double mean() const noexcept;
  /// Σ p²
  double energy() const noexcept;
  bool same_shape(const ImageGrid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  ImageGrid& operator+=(const ImageGrid& other);
  ImageGrid& operator-=(const ImageGrid& other);
  ImageGrid& operator*=(double s) noexcept;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

ImageGrid operator+(ImageGrid a, const ImageGrid& b);
ImageGrid operator-(ImageGrid a, const ImageGrid& b);
ImageGrid operator*(double s, ImageGrid a);

double max_abs_diff(const ImageGrid& a, const ImageGrid& b);
ImageGrid clamp01(ImageGrid img);

/// Pixel values are (value - offset) / scale when written, so signed images
/// round-trip through the [0, 1] sample range.
struct PgmEncoding {
  double offset = 0.0;
  double scale = 1.0;
};

/// Binary PGM (P5), maxval 65535, big-endian samples. A non-default encoding
/// is recorded in a header comment.
std::string encode_pgm(const ImageGrid& img, PgmEncoding enc = {});
ImageGrid decode_pgm(const std::string& bytes);

void write_pgm(const std::filesystem::path& path, const ImageGrid& img, PgmEncoding enc = {});
ImageGrid read_pgm(const std::filesystem::path& path);

/// Encoding that maps [min, max] of a signed image onto [0, 1].
PgmEncoding signed_encoding(const ImageGrid& img);

}  // namespace craftlora
