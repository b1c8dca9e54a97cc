#pragma once

#include "sdedit/errors.hpp"
#include "sdedit/guide.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sdedit {

/// Interleaved (HWC) raster with values in [0,1]; 1 or 3 channels.
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> pixels;

  RasterImage() = default;
  RasterImage(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c) {
    if (w < 1 || h < 1) throw ShapeError("image dimensions must be >= 1");
    if (c != 1 && c != 3) throw ShapeError("image must have 1 or 3 channels");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  double& at(int x, int y, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  double at(int x, int y, int ch) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const RasterImage& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const RasterImage&) const = default;

  void clamp() {
    for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
  }
};

inline Guide to_guide(const RasterImage& img) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(img.pixels.size()));
  Eigen::Index i = 0;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) v[i++] = img.at(x, y, c);
  return Guide(std::move(v), Shape::image_chw(img.channels, img.height, img.width));
}

/// Values are clamped to [0,1].
inline RasterImage to_image(const Eigen::VectorXd& v, const Shape& shape) {
  if (!shape.image) throw ShapeError("vector-shaped data cannot be written as an image");
  if (v.size() != shape.size()) throw ShapeError("data size does not match shape " + shape.describe());
  RasterImage img(shape.width, shape.height, shape.channels);
  Eigen::Index i = 0;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) img.at(x, y, c) = std::clamp(v[i++], 0.0, 1.0);
  return img;
}

// ---------------------------------------------------------------------------
// Netpbm (binary P5 / P6, 8-bit)

namespace detail {
inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in) {
  skip_pnm_space(in);
  int v = -1;
  if (!(in >> v)) throw FormatError("malformed PNM header");
  return v;
}
} // namespace detail

inline RasterImage decode_pnm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic(2, '\0');
  if (!in.read(magic.data(), 2) || (magic != "P5" && magic != "P6"))
    throw FormatError("only binary PGM (P5) and PPM (P6) are supported");
  const int channels = magic == "P6" ? 3 : 1;
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (w < 1 || h < 1) throw FormatError("PNM dimensions must be positive");
  if (maxval < 1 || maxval > 255) throw FormatError("only 8-bit PNM (maxval <= 255) is supported");
  in.get(); // single whitespace before raster
  RasterImage img(w, h, channels);
  std::vector<unsigned char> raw(img.pixels.size());
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError("truncated PNM raster");
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<double>(raw[i]) / maxval;
  return img;
}

inline std::string encode_pnm(const RasterImage& img) {
  std::ostringstream out;
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::string header = out.str();
  std::string bytes = header;
  bytes.reserve(header.size() + img.pixels.size());
  for (double v : img.pixels)
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  return bytes;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline RasterImage read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }
inline void write_pnm(const std::filesystem::path& path, const RasterImage& img) { write_file(path, encode_pnm(img)); }

// ---------------------------------------------------------------------------
// Flat text vectors: numbers separated by whitespace or commas, '#' starts a comment.

inline Eigen::VectorXd parse_text_vector(const std::string& text) {
  std::string cleaned;
  bool comment = false;
  for (char ch : text) {
    if (ch == '\n') comment = false;
    else if (ch == '#') comment = true;
    cleaned.push_back(comment || ch == ',' ? ' ' : ch);
  }
  std::istringstream in(cleaned);
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError("not a number in vector file: '" + tok + "'");
    }
  }
  if (vals.empty()) throw FormatError("empty vector");
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline std::string format_text_vector(const Eigen::VectorXd& v) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
  out << '\n';
  return out.str();
}

inline bool looks_like_pnm(const std::string& bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6');
}

/// A PNM image becomes an image guide; anything else is parsed as a text vector.
inline Guide decode_guide(const std::string& bytes) {
  if (looks_like_pnm(bytes)) return to_guide(decode_pnm(bytes));
  return Guide(parse_text_vector(bytes));
}

inline Guide load_guide(const std::filesystem::path& path) { return decode_guide(read_file(path)); }

/// Masks use the same containers; any nonzero sample marks an editable coordinate.
/// A single-channel mask is broadcast over the guide's channels.
inline EditMask decode_mask(const std::string& bytes, const Shape& guide_shape) {
  const Guide raw = decode_guide(bytes);
  EditMask m{Eigen::VectorXd(raw.size())};
  for (Eigen::Index i = 0; i < raw.size(); ++i) m.omega[i] = raw.data[i] != 0.0 ? 1.0 : 0.0;
  if (raw.shape.image && guide_shape.image && raw.shape.channels == 1 && guide_shape.channels > 1 &&
      raw.shape.height == guide_shape.height && raw.shape.width == guide_shape.width) {
    EditMask wide{Eigen::VectorXd(guide_shape.size())};
    for (int c = 0; c < guide_shape.channels; ++c) wide.omega.segment(c * raw.size(), raw.size()) = m.omega;
    return wide;
  }
  if (raw.size() != guide_shape.size() || (raw.shape.image && raw.shape != guide_shape))
    throw ShapeError("mask shape " + raw.shape.describe() + " does not match guide " + guide_shape.describe());
  return m;
}

inline std::string encode_output(const Eigen::VectorXd& v, const Shape& shape) {
  return shape.image ? encode_pnm(to_image(v, shape)) : format_text_vector(v);
}

// ---------------------------------------------------------------------------
// Base64 (RFC 4648) for JSON payloads.

inline std::string base64_encode(const std::string& in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t n = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i < in.size()) {
    std::uint32_t n = std::uint8_t(in[i]) << 16;
    if (i + 1 < in.size()) n |= std::uint8_t(in[i + 1]) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < in.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_decode(const std::string& in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=' ) break;
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    const int v = value(c);
    if (v < 0) throw FormatError("invalid base64 payload");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

} // namespace sdedit
