#include "craftlora/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "craftlora/error.hpp"

namespace craftlora {

ImageGrid::ImageGrid(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width, fill) {}

ImageGrid::ImageGrid(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != height * width) {
    throw Error(ErrorKind::ShapeMismatch, "image pixel count does not match dimensions");
  }
}

double ImageGrid::mean() const noexcept {
  if (pixels_.empty()) return 0.0;
  double s = 0.0;
  for (double p : pixels_) s += p;
  return s / static_cast<double>(pixels_.size());
}

double ImageGrid::energy() const noexcept {
  double s = 0.0;
  for (double p : pixels_) s += p * p;
  return s;
}

ImageGrid& ImageGrid::operator+=(const ImageGrid& other) {
  if (!same_shape(other)) throw Error(ErrorKind::ShapeMismatch, "image add");
  for (std::size_t i = 0; i < pixels_.size(); ++i) pixels_[i] += other.pixels_[i];
  return *this;
}

ImageGrid& ImageGrid::operator-=(const ImageGrid& other) {
  if (!same_shape(other)) throw Error(ErrorKind::ShapeMismatch, "image subtract");
  for (std::size_t i = 0; i < pixels_.size(); ++i) pixels_[i] -= other.pixels_[i];
  return *this;
}

ImageGrid& ImageGrid::operator*=(double s) noexcept {
  for (double& p : pixels_) p *= s;
  return *this;
}

ImageGrid operator+(ImageGrid a, const ImageGrid& b) { return a += b; }
ImageGrid operator-(ImageGrid a, const ImageGrid& b) { return a -= b; }
ImageGrid operator*(double s, ImageGrid a) { return a *= s; }

double max_abs_diff(const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "image diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  return m;
}

ImageGrid clamp01(ImageGrid img) {
  for (double& p : img.pixels()) p = std::clamp(p, 0.0, 1.0);
  return img;
}

PgmEncoding signed_encoding(const ImageGrid& img) {
  if (img.size() == 0) return {};
  auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  const double span = *hi - *lo;
  return {*lo, span > 0.0 ? span : 1.0};
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string encode_pgm(const ImageGrid& img, PgmEncoding enc) {
  std::string out = "P5\n";
  if (enc.offset != 0.0 || enc.scale != 1.0) {
    out += "# craftlora offset=" + format_double(enc.offset) + " scale=" + format_double(enc.scale) + "\n";
  }
  out += std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
  out.reserve(out.size() + 2 * img.size());
  for (double p : img.pixels()) {
    const double stored = std::clamp((p - enc.offset) / enc.scale, 0.0, 1.0);
    const auto sample = static_cast<unsigned>(std::lround(stored * 65535.0));
    out.push_back(static_cast<char>((sample >> 8) & 0xFF));
    out.push_back(static_cast<char>(sample & 0xFF));
  }
  return out;
}

ImageGrid decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  PgmEncoding enc;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        const std::size_t eol = bytes.find('\n', pos);
        const std::string line = bytes.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        double off = 0.0;
        double sc = 1.0;
        if (std::sscanf(line.c_str(), "# craftlora offset=%lf scale=%lf", &off, &sc) == 2) {
          enc = {off, sc};
        }
        pos = eol == std::string::npos ? bytes.size() : eol + 1;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
      ++digits;
    }
    if (digits == 0) throw Error(ErrorKind::IoError, "malformed PGM header");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw Error(ErrorKind::IoError, "not a binary PGM (P5)");
  }
  pos = 2;
  const std::size_t width = read_uint();
  const std::size_t height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval == 0 || maxval > 65535) throw Error(ErrorKind::IoError, "unsupported PGM maxval");
  ++pos;  // single whitespace before raster
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + width * height * bytes_per_sample) {
    throw Error(ErrorKind::IoError, "truncated PGM raster");
  }
  ImageGrid img(height, width);
  for (std::size_t i = 0; i < width * height; ++i) {
    unsigned sample = static_cast<unsigned char>(bytes[pos + i * bytes_per_sample]);
    if (bytes_per_sample == 2) {
      sample = (sample << 8) | static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    }
    img.pixels()[i] = enc.offset + enc.scale * (static_cast<double>(sample) / static_cast<double>(maxval));
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const ImageGrid& img, PgmEncoding enc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  const std::string bytes = encode_pgm(img, enc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + path.string());
}

ImageGrid read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pgm(ss.str());
}

}  // namespace craftlora
