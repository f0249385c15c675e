// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "siga/image.hpp"
#include "siga/rng.hpp"

namespace siga::data {

/// The 36 symbols the renderer can draw, in class-index order.
inline constexpr std::string_view kFullCharset = "0123456789abcdefghijklmnopqrstuvwxyz";

/// Horizontal extent [x0, x1) of one character cell in pixels.
struct CharBox {
  int x0 = 0;
  int x1 = 0;
  bool operator==(const CharBox&) const = default;
};

struct Sample {
  Image image;
  std::string label;
  std::vector<CharBox> char_boxes;
  Mask glyph_mask;
  bool operator==(const Sample&) const = default;
};

struct SynthConfig {
  std::size_t height = 16;
  std::size_t width = 64;
  std::string charset{kFullCharset};
  int min_len = 1;
  int max_len = 7;
  /// Longest label the recognizer accepts plus one (EOS slot); labels are < this.
  int max_chars = 8;
  double noise_sigma = 0.0;
  double min_contrast = 0.5;
  double invert_prob = 0.0;
  /// Upper bound on the horizontal glyph scale; the vertical scale always fills the height.
  int max_xscale = 1;
};

/// Throws ConfigError when the configuration cannot produce valid samples.
void validate(const SynthConfig& cfg);

/// 5x7 bitmap for `ch`; row r, column c is set when bit (4 - c) of rows[r] is 1.
struct Glyph {
  std::uint8_t rows[7];
};
const Glyph& glyph_for(char ch);
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

/// Draws a label then renders it.
Sample render_sample(Rng& rng, const SynthConfig& cfg);
/// Renders a fixed label; contrast, placement and noise are still drawn from rng.
Sample render_text(const std::string& label, Rng& rng, const SynthConfig& cfg);
/// Sample `index` of the corpus identified by `seed`.
Sample generate(std::uint64_t seed, std::uint64_t index, const SynthConfig& cfg);
std::vector<Sample> generate_corpus(std::uint64_t seed, std::size_t count, const SynthConfig& cfg);

struct ManifestRecord {
  std::string image_path;  // relative to the dataset root
  std::string label;
  std::vector<CharBox> boxes;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::uint64_t seed = 0;
  SynthConfig config;
};

/// Writes `index.tsv`, `meta.txt`, `img/NNNNNN.pgm` and `mask/NNNNNN.pgm`.
DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                              std::uint64_t seed = 0, const SynthConfig& cfg = {});
/// Reads every record of `index.tsv`. Glyph masks are loaded when present and
/// left empty otherwise.
std::vector<Sample> read_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

std::string format_boxes(const std::vector<CharBox>& boxes);
/// Throws ParseError (without line info) on malformed input.
std::vector<CharBox> parse_boxes(std::string_view text);

}  // namespace siga::data
