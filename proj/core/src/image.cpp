// SPDX-License-Identifier: Apache-2.0
#include "siga/image.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "siga/errors.hpp"

namespace siga {

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

double iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("iou: mask size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

double dequantize(std::uint8_t q) { return static_cast<double>(q) / 255.0; }

void write_pgm(const Image& img, const std::filesystem::path& path) {
  if (img.pixels.size() != img.height * img.width) {
    throw ContractError("write_pgm: raster size does not match dimensions");
  }
  std::string bytes;
  bytes.reserve(img.pixels.size());
  for (double v : img.pixels) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("write_pgm: value " + std::to_string(v) + " outside [0,1] for " +
                          path.string());
    }
    bytes.push_back(static_cast<char>(quantize(v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open image " + path.string());
  if (header_token(in) != "P5") throw ParseError("not a binary PGM: " + path.string());
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(in));
    h = std::stoul(header_token(in));
    maxval = std::stoul(header_token(in));
  } catch (const std::exception&) {
    throw ParseError("malformed PGM header in " + path.string());
  }
  if (maxval != 255) throw ParseError("unsupported PGM maxval in " + path.string());
  std::string bytes(w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw ParseError("truncated PGM raster in " + path.string());
  }
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.pixels[i] = dequantize(static_cast<std::uint8_t>(bytes[i]));
  }
  return img;
}

}  // namespace siga
