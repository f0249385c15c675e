// SPDX-License-Identifier: Apache-2.0
#include "siga/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "siga/errors.hpp"
#include "siga/kv.hpp"

namespace siga::data {

namespace {

// clang-format off
constexpr std::array<Glyph, 36> kFont = {{
  {{0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},  // 0
  {{0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},  // 1
  {{0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},  // 2
  {{0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},  // 3
  {{0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},  // 4
  {{0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},  // 5
  {{0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},  // 6
  {{0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},  // 7
  {{0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},  // 8
  {{0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},  // 9
  {{0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},  // a
  {{0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E}},  // b
  {{0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},  // c
  {{0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F}},  // d
  {{0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},  // e
  {{0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08}},  // f
  {{0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}},  // g
  {{0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},  // h
  {{0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},  // i
  {{0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},  // j
  {{0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},  // k
  {{0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},  // l
  {{0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11}},  // m
  {{0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},  // n
  {{0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},  // o
  {{0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10}},  // p
  {{0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01}},  // q
  {{0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},  // r
  {{0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E}},  // s
  {{0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},  // t
  {{0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},  // u
  {{0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},  // v
  {{0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A}},  // w
  {{0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},  // x
  {{0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}},  // y
  {{0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},  // z
}};
// clang-format on

// Horizontal pitch in glyph units: 5 columns of glyph plus 1 of spacing.
constexpr int kPitch = kGlyphWidth + 1;

int vertical_scale(const SynthConfig& cfg) {
  return static_cast<int>(cfg.height - 2) / kGlyphHeight;
}

int horizontal_scale(const SynthConfig& cfg, int len) {
  const int fit = (static_cast<int>(cfg.width) - 2 + 1) / (kPitch * len);
  return std::min({vertical_scale(cfg), cfg.max_xscale, fit});
}

}  // namespace

const Glyph& glyph_for(char ch) {
  const auto pos = kFullCharset.find(ch);
  if (pos == std::string_view::npos) {
    throw ContractError(std::string("no glyph for character '") + ch + "'");
  }
  return kFont[pos];
}

void validate(const SynthConfig& cfg) {
  if (cfg.charset.empty()) throw ConfigError("charset is empty");
  for (char c : cfg.charset) {
    if (kFullCharset.find(c) == std::string_view::npos) {
      throw ConfigError(std::string("charset symbol '") + c + "' is outside 0-9a-z");
    }
  }
  if (cfg.min_len < 1) throw ConfigError("min_len must be at least 1");
  if (cfg.max_len < cfg.min_len) {
    throw ConfigError("max_len (" + std::to_string(cfg.max_len) + ") < min_len (" +
                      std::to_string(cfg.min_len) + ")");
  }
  if (cfg.max_len > cfg.max_chars - 1) {
    throw ConfigError("max_len exceeds the recognizer limit of " +
                      std::to_string(cfg.max_chars - 1));
  }
  if (vertical_scale(cfg) < 1) throw ConfigError("image height too small for the 5x7 font");
  if (cfg.max_xscale < 1) throw ConfigError("max_xscale must be at least 1");
  if (horizontal_scale(cfg, cfg.max_len) < 1) {
    throw ConfigError("image width too small for " + std::to_string(cfg.max_len) + " characters");
  }
  if (cfg.noise_sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
  if (!(cfg.min_contrast > 0.0 && cfg.min_contrast <= 1.0)) {
    throw ConfigError("min_contrast must lie in (0, 1]");
  }
  if (!(cfg.invert_prob >= 0.0 && cfg.invert_prob <= 1.0)) {
    throw ConfigError("invert_prob must lie in [0, 1]");
  }
}

Sample render_text(const std::string& label, Rng& rng, const SynthConfig& cfg) {
  validate(cfg);
  const int len = static_cast<int>(label.size());
  if (len < 1 || len > cfg.max_chars - 1) {
    throw ContractError("label length " + std::to_string(len) + " outside [1, " +
                        std::to_string(cfg.max_chars - 1) + "]");
  }
  const int sy = vertical_scale(cfg);
  const int sx = horizontal_scale(cfg, len);
  if (sx < 1) throw ContractError("label '" + label + "' does not fit the image width");
  const int H = static_cast<int>(cfg.height), W = static_cast<int>(cfg.width);
  const int text_w = len * kPitch * sx - sx;
  const int text_h = kGlyphHeight * sy;

  const double contrast = rng.uniform(cfg.min_contrast, 1.0);
  const double bg = rng.uniform(0.0, 1.0 - contrast);
  const double fg = bg + contrast;
  const int x_start = rng.uniform_int(1, W - 1 - text_w);
  const int y_start = rng.uniform_int(1, H - 1 - text_h);
  const bool invert = rng.bernoulli(cfg.invert_prob);

  Sample s;
  s.label = label;
  s.image = Image(cfg.height, cfg.width, bg);
  s.glyph_mask = Mask(cfg.height, cfg.width);
  for (int k = 0; k < len; ++k) {
    const Glyph& g = glyph_for(label[static_cast<std::size_t>(k)]);
    const int x0 = x_start + k * kPitch * sx;
    s.char_boxes.push_back({x0, x0 + kGlyphWidth * sx});
    for (int r = 0; r < kGlyphHeight; ++r) {
      for (int c = 0; c < kGlyphWidth; ++c) {
        if (!((g.rows[r] >> (kGlyphWidth - 1 - c)) & 1)) continue;
        for (int dy = 0; dy < sy; ++dy) {
          for (int dx = 0; dx < sx; ++dx) {
            const auto py = static_cast<std::size_t>(y_start + r * sy + dy);
            const auto px = static_cast<std::size_t>(x0 + c * sx + dx);
            s.image.at(py, px) = fg;
            s.glyph_mask.at(py, px) = 1;
          }
        }
      }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    for (double& v : s.image.pixels) v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
  }
  if (invert) {
    for (double& v : s.image.pixels) v = 1.0 - v;
  }
  return s;
}

Sample render_sample(Rng& rng, const SynthConfig& cfg) {
  validate(cfg);
  const int len = rng.uniform_int(cfg.min_len, cfg.max_len);
  std::string label;
  for (int i = 0; i < len; ++i) {
    label.push_back(cfg.charset[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(cfg.charset.size()) - 1))]);
  }
  return render_text(label, rng, cfg);
}

Sample generate(std::uint64_t seed, std::uint64_t index, const SynthConfig& cfg) {
  Rng rng = Rng::for_index(seed, index);
  return render_sample(rng, cfg);
}

std::vector<Sample> generate_corpus(std::uint64_t seed, std::size_t count, const SynthConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(seed, i, cfg));
  return out;
}

std::string format_boxes(const std::vector<CharBox>& boxes) {
  std::string s;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(boxes[i].x0) + "," + std::to_string(boxes[i].x1);
  }
  return s;
}

std::vector<CharBox> parse_boxes(std::string_view text) {
  std::vector<CharBox> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto semi = std::min(text.find(';', pos), text.size());
    const std::string item(text.substr(pos, semi - pos));
    int x0 = 0, x1 = 0;
    char tail = 0;
    if (std::sscanf(item.c_str(), "%d,%d%c", &x0, &x1, &tail) != 2 || x1 <= x0 || x0 < 0) {
      throw ParseError("malformed character box '" + item + "'");
    }
    out.push_back({x0, x1});
    pos = semi + 1;
  }
  return out;
}

namespace {

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.pgm", i);
  return buf;
}

Image mask_to_image(const Mask& m) {
  Image img(m.height, m.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 1.0 : 0.0;
  return img;
}

}  // namespace

DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                              std::uint64_t seed, const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "mask");
  DatasetManifest manifest{dir, {}, seed, cfg};
  std::ofstream index(dir / "index.tsv");
  if (!index) throw Error("cannot write " + (dir / "index.tsv").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string rel = "img/" + image_name(i);
    write_pgm(s.image, dir / rel);
    if (!s.glyph_mask.bits.empty()) write_pgm(mask_to_image(s.glyph_mask), dir / "mask" / image_name(i));
    index << rel << '\t' << s.label << '\t' << format_boxes(s.char_boxes) << '\n';
    manifest.records.push_back({rel, s.label, s.char_boxes});
  }
  std::ofstream meta(dir / "meta.txt");
  meta << "seed = " << seed << "\n"
       << "height = " << cfg.height << "\n"
       << "width = " << cfg.width << "\n"
       << "charset = " << cfg.charset << "\n"
       << "count = " << samples.size() << "\n"
       << "min_len = " << cfg.min_len << "\n"
       << "max_len = " << cfg.max_len << "\n"
       << "noise_sigma = " << cfg.noise_sigma << "\n"
       << "min_contrast = " << cfg.min_contrast << "\n"
       << "invert_prob = " << cfg.invert_prob << "\n"
       << "max_xscale = " << cfg.max_xscale << "\n";
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  DatasetManifest m;
  m.root = dir;
  const auto meta_path = dir / "meta.txt";
  if (std::filesystem::exists(meta_path)) {
    for (const KeyValue& kv : read_key_values(meta_path)) {
      if (kv.key == "seed") m.seed = static_cast<std::uint64_t>(parse_int(kv));
      else if (kv.key == "height") m.config.height = static_cast<std::size_t>(parse_int(kv));
      else if (kv.key == "width") m.config.width = static_cast<std::size_t>(parse_int(kv));
      else if (kv.key == "charset") m.config.charset = kv.value;
      else if (kv.key == "min_len") m.config.min_len = static_cast<int>(parse_int(kv));
      else if (kv.key == "max_len") m.config.max_len = static_cast<int>(parse_int(kv));
      else if (kv.key == "noise_sigma") m.config.noise_sigma = parse_double(kv);
      else if (kv.key == "min_contrast") m.config.min_contrast = parse_double(kv);
      else if (kv.key == "invert_prob") m.config.invert_prob = parse_double(kv);
      else if (kv.key == "max_xscale") m.config.max_xscale = static_cast<int>(parse_int(kv));
    }
  }
  std::ifstream index(dir / "index.tsv");
  if (!index) throw ParseError("missing manifest " + (dir / "index.tsv").string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(index, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw ParseError("manifest record needs 3 tab-separated fields", n);
    }
    ManifestRecord rec;
    rec.image_path = line.substr(0, t1);
    rec.label = line.substr(t1 + 1, t2 - t1 - 1);
    try {
      rec.boxes = parse_boxes(std::string_view(line).substr(t2 + 1));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    }
    if (rec.label.empty() || rec.boxes.size() != rec.label.size()) {
      throw ParseError("label '" + rec.label + "' and box count disagree", n);
    }
    for (char c : rec.label) {
      if (kFullCharset.find(c) == std::string_view::npos) {
        throw ParseError(std::string("label symbol '") + c + "' outside 0-9a-z", n);
      }
    }
    if (!std::filesystem::exists(dir / rec.image_path)) {
      throw ParseError("image file not found: " + (dir / rec.image_path).string(), n);
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<Sample> out;
  out.reserve(m.records.size());
  for (const ManifestRecord& rec : m.records) {
    Sample s;
    s.image = read_pgm(dir / rec.image_path);
    s.label = rec.label;
    s.char_boxes = rec.boxes;
    const auto mask_path = dir / "mask" / std::filesystem::path(rec.image_path).filename();
    if (std::filesystem::exists(mask_path)) {
      const Image mi = read_pgm(mask_path);
      s.glyph_mask = Mask(mi.height, mi.width);
      for (std::size_t i = 0; i < mi.pixels.size(); ++i) s.glyph_mask.bits[i] = mi.pixels[i] > 0.5;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace siga::data
