// SPDX-License-Identifier: Apache-2.0
#include "siga/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

#include "siga/errors.hpp"
#include "siga/kv.hpp"

namespace siga {

namespace {

// std::size_t and std::uint64_t may be the same type, so the seed gets a tag.
struct SeedRef {
  std::uint64_t* p;
};
using Field = std::variant<std::size_t*, double*, bool*, int*, SeedRef>;

std::map<std::string, Field> fields(TrainConfig& c) {
  Geometry& g = c.geometry;
  Switches& s = c.switches;
  return {
      {"height", &g.height},
      {"width", &g.width},
      {"seq_len", &g.seq_len},
      {"channels", &g.channels},
      {"decode_steps", &g.decode_steps},
      {"max_chars", &g.max_chars},
      {"c0", &g.c0},
      {"c1", &g.c1},
      {"c2", &g.c2},
      {"embed_dim", &g.embed_dim},
      {"attn_dim", &g.attn_dim},
      {"enable_js", &s.enable_js},
      {"enable_acfm", &s.enable_acfm},
      {"enable_align", &s.enable_align},
      {"enable_cor", &s.enable_cor},
      {"enable_dif", &s.enable_dif},
      {"mu", &c.mu},
      {"lambda", &c.lambda},
      {"delta", &c.delta},
      {"k", &c.kmeans_k},
      {"kmeans_iters", &c.kmeans_iters},
      {"w_rec", &c.w_rec},
      {"w_ins", &c.w_ins},
      {"w_seq", &c.w_seq},
      {"w_seg", &c.w_seg},
      {"lr", &c.lr},
      {"beta1", &c.beta1},
      {"beta2", &c.beta2},
      {"adam_eps", &c.adam_eps},
      {"grad_clip", &c.grad_clip},
      {"batch_size", &c.batch_size},
      {"steps", &c.steps},
      {"eval_every", &c.eval_every},
      {"eval_samples", &c.eval_samples},
      {"seed", SeedRef{&c.seed}},
      {"deterministic", &c.deterministic},
  };
}

}  // namespace

void validate(const TrainConfig& c) {
  const Geometry& g = c.geometry;
  if (g.height % 4 != 0 || g.width % 4 != 0 || g.height < 4) {
    throw ConfigError("height and width must be positive multiples of 4");
  }
  if (g.seq_len != g.width / 4) throw ConfigError("seq_len must equal width / 4");
  if (g.decode_steps > g.max_chars + 1) throw ConfigError("decode_steps must be <= max_chars + 1");
  if (g.decode_steps < 1 || g.max_chars < 2) throw ConfigError("decode_steps/max_chars too small");
  if (c.switches.enable_acfm && g.decode_steps > g.max_chars) {
    throw ConfigError("fusion needs one glyph slot per decoding step (decode_steps <= max_chars)");
  }
  if (g.channels == 0 || g.c0 == 0 || g.c1 == 0 || g.c2 == 0 || g.embed_dim == 0 ||
      g.attn_dim == 0) {
    throw ConfigError("channel counts must be positive");
  }
  if (!(c.delta > 0.0 && c.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(c.mu > 0.0)) throw ConfigError("mu must be positive");
  if (c.kmeans_k != 2) throw ConfigError("only k = 2 clustering is supported");
  if (c.kmeans_iters < 1) throw ConfigError("kmeans_iters must be positive");
  for (double w : {c.w_rec, c.w_ins, c.w_seq, c.w_seg}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  }
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (c.eval_every < 1) throw ConfigError("eval_every must be positive");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  auto table = fields(cfg);
  std::vector<KeyValue> kvs;
  try {
    kvs = parse_key_values(text);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  for (const KeyValue& kv : kvs) {
    auto it = table.find(kv.key);
    if (it == table.end()) {
      throw ConfigError("unknown config key '" + kv.key + "' (line " + std::to_string(kv.line) +
                        ")");
    }
    try {
      std::visit(
          [&](auto p) {
            if constexpr (std::is_same_v<decltype(p), SeedRef>) {
              const long long v = parse_int(kv);
              if (v < 0) throw ParseError("'seed' must be nonnegative", kv.line);
              *p.p = static_cast<std::uint64_t>(v);
              return;
            } else {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, bool>) {
              *p = parse_bool(kv);
            } else if constexpr (std::is_same_v<T, double>) {
              *p = parse_double(kv);
            } else {
              const long long v = parse_int(kv);
              if (v < 0 && !std::is_same_v<T, int>) {
                throw ParseError("'" + kv.key + "' must be nonnegative", kv.line);
              }
              *p = static_cast<T>(v);
            }
            }
          },
          it->second);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  std::ostringstream out;
  out.precision(17);
  for (const auto& [key, field] : fields(copy)) {
    out << key << " = ";
    std::visit(
        [&](auto p) {
          if constexpr (std::is_same_v<decltype(p), SeedRef>) {
            out << *p.p;
          } else if constexpr (std::is_same_v<decltype(p), bool*>) {
            out << (*p ? "true" : "false");
          } else {
            out << *p;
          }
        },
        field);
    out << "\n";
  }
  return out.str();
}

}  // namespace siga
