// SPDX-License-Identifier: Apache-2.0
#include "siga/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "siga/errors.hpp"

namespace siga {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams& ps) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ps.entries().size()));
  for (const ModelParams::Entry& e : ps.entries()) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContractError("checkpoint: parameter name too long: " + e.name);
    }
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const Shape& shape = e.value.shape();
    if (shape.size() > 255) throw ContractError("checkpoint: rank too large for " + e.name);
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const std::uint8_t version = r.u8("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32("entry count");
  ModelParams ps;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = r.pos();
    const std::uint16_t len = r.u16("name length");
    if (len == 0) throw FormatError("empty parameter name", start);
    const std::string name = r.bytes(len, "name");
    if (ps.contains(name)) throw FormatError("duplicate parameter '" + name + "'", start);
    const std::uint8_t rank = r.u8("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32("dimension"));
      n *= shape.back();
    }
    r.need(n * 4, "values");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(r.u32("values"));
    const bool trainable = !(ends_with(name, ".running_mean") || ends_with(name, ".running_var") ||
                             name.rfind("meta.", 0) == 0);
    ps.add(name, std::move(shape), std::move(values), trainable);
  }
  if (!r.done()) throw FormatError("trailing bytes after the last entry", r.pos());
  return ps;
}

void save_checkpoint(const ModelParams& ps, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_params(ps);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace siga
