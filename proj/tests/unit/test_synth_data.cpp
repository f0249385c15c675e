// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "siga/errors.hpp"
#include "siga/image.hpp"
#include "siga/synth.hpp"

using namespace siga;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("siga_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Render, NoiselessGlyphMaskIsThresholdedImage) {
  data::SynthConfig cfg;
  cfg.min_contrast = 1.0;
  Rng rng(3);
  const data::Sample s = data::render_text("a1", rng, cfg);
  ASSERT_EQ(s.char_boxes.size(), 2u);
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
    EXPECT_EQ(s.glyph_mask.bits[i], s.image.pixels[i] > 0.5 ? 1 : 0) << i;
  }
}

TEST(Render, SameSeedIsBitwiseIdentical) {
  data::SynthConfig cfg;
  cfg.noise_sigma = 0.05;
  cfg.invert_prob = 0.5;
  EXPECT_EQ(data::generate(11, 7, cfg), data::generate(11, 7, cfg));
  EXPECT_NE(data::generate(11, 7, cfg), data::generate(11, 8, cfg));
}

TEST(Render, LengthsAndCharsetOverThousandSamples) {
  data::SynthConfig cfg;
  std::map<std::size_t, int> lengths;
  for (const data::Sample& s : data::generate_corpus(4, 1000, cfg)) {
    ASSERT_GE(s.label.size(), 1u);
    ASSERT_LE(s.label.size(), 7u);
    ++lengths[s.label.size()];
    for (char c : s.label) ASSERT_NE(cfg.charset.find(c), std::string::npos);
  }
  EXPECT_EQ(lengths.size(), 7u);
}

TEST(Render, SampleInvariants) {
  data::SynthConfig cfg;
  cfg.noise_sigma = 0.1;
  cfg.invert_prob = 0.3;
  for (const data::Sample& s : data::generate_corpus(9, 300, cfg)) {
    ASSERT_EQ(s.label.size(), s.char_boxes.size());
    for (std::size_t k = 0; k < s.char_boxes.size(); ++k) {
      const data::CharBox& b = s.char_boxes[k];
      ASSERT_GE(b.x0, 0);
      ASSERT_LE(b.x1, 64);
      ASSERT_LT(b.x0, b.x1);
      if (k) ASSERT_LE(s.char_boxes[k - 1].x1, b.x0);
    }
    for (std::size_t c = 0; c < s.image.width; ++c) {
      bool inside = false;
      for (const auto& b : s.char_boxes) inside |= static_cast<int>(c) >= b.x0 && static_cast<int>(c) < b.x1;
      if (inside) continue;
      for (std::size_t r = 0; r < s.image.height; ++r) ASSERT_EQ(s.glyph_mask.at(r, c), 0);
    }
    for (double v : s.image.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Render, ContrastFloorBeforeNoise) {
  data::SynthConfig cfg;
  cfg.min_contrast = 0.7;
  for (const data::Sample& s : data::generate_corpus(5, 200, cfg)) {
    double fg = -1, bg = -1;
    for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
      (s.glyph_mask.bits[i] ? fg : bg) = s.image.pixels[i];
    }
    EXPECT_GE(std::abs(fg - bg), 0.7 - 1e-12);
  }
}

TEST(Render, ConfigErrors) {
  data::SynthConfig cfg;
  cfg.min_len = 5;
  cfg.max_len = 3;
  EXPECT_THROW(data::validate(cfg), ConfigError);
  cfg = {};
  cfg.max_len = 8;
  EXPECT_THROW(data::validate(cfg), ConfigError);
  cfg = {};
  cfg.charset = "ab#";
  EXPECT_THROW(data::validate(cfg), ConfigError);
}

TEST(Render, SymbolFrequencyNearUniform) {
  data::SynthConfig cfg;
  std::map<char, int> freq;
  std::size_t total = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    for (char c : data::generate(21, i, cfg).label) {
      ++freq[c];
      ++total;
    }
  }
  const double expect = static_cast<double>(total) / 36.0;
  ASSERT_EQ(freq.size(), 36u);
  for (const auto& [c, n] : freq) {
    EXPECT_GE(n, 0.7 * expect) << c;
    EXPECT_LE(n, 1.3 * expect) << c;
  }
}

TEST(Image, QuantizeHalfIs128) {
  EXPECT_EQ(quantize(0.5), 128);
  EXPECT_DOUBLE_EQ(dequantize(128), 128.0 / 255.0);
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
}

TEST(Image, PgmBytes2x2) {
  Image img(2, 2);
  img.pixels = {0, 1, 1, 0};
  const fs::path p = scratch("pgm") / "a.pgm";
  write_pgm(img, p);
  const std::string header = "P5\n2 2\n255\n";
  std::vector<unsigned char> want(header.begin(), header.end());
  for (unsigned char b : {0, 255, 255, 0}) want.push_back(b);
  EXPECT_EQ(file_bytes(p), want);
}

TEST(Image, PgmZeros16x64) {
  const fs::path p = scratch("pgm0") / "z.pgm";
  write_pgm(Image(16, 64), p);
  const auto bytes = file_bytes(p);
  const std::string header = "P5\n64 16\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 1024);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) ASSERT_EQ(bytes[i], 0);
}

TEST(Image, PgmRoundTrip) {
  Image img(3, 5);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i) / 14.0;
  const fs::path p = scratch("pgmrt") / "r.pgm";
  write_pgm(img, p);
  const Image back = read_pgm(p);
  ASSERT_EQ(back.height, 3u);
  ASSERT_EQ(back.width, 5u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(quantize(back.pixels[i]), quantize(img.pixels[i]));
}

TEST(Image, OutOfRangeIsContractError) {
  Image img(1, 2);
  img.pixels = {0.2, 1.5};
  EXPECT_THROW(write_pgm(img, scratch("bad") / "b.pgm"), ContractError);
}

TEST(Image, IouEmptyIsOne) {
  EXPECT_EQ(iou(Mask(2, 2), Mask(2, 2)), 1.0);
  Mask a(1, 4), b(1, 4);
  a.bits = {1, 1, 0, 0};
  b.bits = {1, 0, 0, 1};
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
}

TEST(Dataset, RoundTripTenSamples) {
  data::SynthConfig cfg;
  cfg.noise_sigma = 0.05;
  const auto samples = data::generate_corpus(8, 10, cfg);
  const fs::path dir = scratch("ds");
  data::write_dataset(samples, dir, 8, cfg);
  const auto back = data::read_dataset(dir);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].label, samples[i].label);
    EXPECT_EQ(back[i].char_boxes, samples[i].char_boxes);
    EXPECT_EQ(back[i].glyph_mask, samples[i].glyph_mask);
    for (std::size_t p = 0; p < samples[i].image.pixels.size(); ++p) {
      ASSERT_EQ(back[i].image.pixels[p], dequantize(quantize(samples[i].image.pixels[p])));
    }
  }
  const auto m = data::read_manifest(dir);
  EXPECT_EQ(m.seed, 8u);
  EXPECT_EQ(m.records.size(), 10u);
}

TEST(Dataset, ManifestLineFormat) {
  data::SynthConfig cfg;
  const auto samples = data::generate_corpus(2, 1, cfg);
  const fs::path dir = scratch("dsfmt");
  data::write_dataset(samples, dir, 2, cfg);
  std::ifstream in(dir / "index.tsv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "img/000000.pgm\t" + samples[0].label + "\t" + data::format_boxes(samples[0].char_boxes));
}

TEST(Dataset, MissingImageNamesPath) {
  const fs::path dir = scratch("dsmiss");
  data::write_dataset(data::generate_corpus(1, 2, {}), dir);
  fs::remove(dir / "img" / "000001.pgm");
  try {
    (void)data::read_dataset(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("000001.pgm"), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Dataset, MalformedLineCarriesLineNumber) {
  const fs::path dir = scratch("dsbad");
  data::write_dataset(data::generate_corpus(1, 2, {}), dir);
  std::ofstream(dir / "index.tsv", std::ios::app) << "img/000000.pgm\tab\n";
  try {
    (void)data::read_dataset(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Boxes, FormatParseRoundTrip) {
  const std::vector<data::CharBox> boxes{{1, 6}, {7, 12}, {40, 45}};
  EXPECT_EQ(data::format_boxes(boxes), "1,6;7,12;40,45");
  EXPECT_EQ(data::parse_boxes("1,6;7,12;40,45"), boxes);
  EXPECT_THROW(data::parse_boxes("1,6;x"), ParseError);
  EXPECT_THROW(data::parse_boxes("5,3"), ParseError);
}
