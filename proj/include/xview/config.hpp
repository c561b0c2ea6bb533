#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xview/encoder.hpp"
#include "xview/error.hpp"
#include "xview/losses.hpp"
#include "xview/manifest.hpp"
#include "xview/rng.hpp"
#include "xview/synthproxy.hpp"

namespace xview {

enum class Stage { baseline_ga, baseline_synth, joint, fusion };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::baseline_ga: return "baseline-ga";
    case Stage::baseline_synth: return "baseline-synth";
    case Stage::joint: return "joint";
    case Stage::fusion: return "fusion";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::baseline_ga, Stage::baseline_synth, Stage::joint, Stage::fusion})
    if (stage_name(st) == s) return st;
  throw ConfigError("unknown stage '" + s + "' (expected baseline-ga, baseline-synth, joint or fusion)");
}

// Input geometry of one view (channels, height, width).
struct ImageShape {
  std::size_t channels = 0, height = 0, width = 0;
  bool known() const noexcept { return channels && height && width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

inline std::string shape_text(const ImageShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Everything one training stage needs. Defaults are the published settings;
// the synthetic benchmark overrides the step counts and learning rate.
struct StageConfig {
  Stage stage = Stage::baseline_ga;
  std::size_t batch = 30;
  std::size_t steps_exhaustive = 2000;
  std::size_t steps_hard_negative = 1000;
  double lr = 1e-5;
  LossConfig loss;
  std::string preset = "toy";  // toy | full
  std::size_t embed_dim = 64;
  double dropout = 0.5;
  bool multiscale = true;
  bool use_gap = false;
  bool normalize = false;
  bool share_weights = false;
  bool edgemap = false;
  ProxyConfig proxy;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // train-subset recall@1 logging period, 0 = off

  // Filled from the data when a stage runs; stored with the checkpoint.
  ImageShape ground_shape;
  ImageShape aerial_shape;

  std::uint64_t config_digest = 0;  // not serialized

  void validate() const {
    if (batch < 2) throw ConfigError("batch must be at least 2");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (preset != "toy" && preset != "full") throw ConfigError("preset must be 'toy' or 'full'");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    loss.validate();
    proxy.validate();
  }
};

inline StageConfig default_stage_config(Stage s) {
  StageConfig c;
  c.stage = s;
  c.batch = s == Stage::joint ? 24 : 30;
  return c;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long u = std::stoull(v, &used);
      if (used == v.size()) return u;
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, sep)) {
    const auto t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline ImageShape parse_image_shape(const std::string& key, const std::string& v) {
  const auto parts = split_list(v, 'x');
  if (parts.size() != 3) throw ConfigError("'" + key + "': expected CxHxW, got '" + v + "'");
  return {parse_uint(key, parts[0]), parse_uint(key, parts[1]), parse_uint(key, parts[2])};
}

inline void apply_key(StageConfig& c, const std::string& key, const std::string& v) {
  if (key == "batch") c.batch = parse_uint(key, v);
  else if (key == "steps_exhaustive") c.steps_exhaustive = parse_uint(key, v);
  else if (key == "steps_hard_negative") c.steps_hard_negative = parse_uint(key, v);
  else if (key == "lr") c.lr = parse_real(key, v);
  else if (key == "margin") c.loss.margin = parse_real(key, v);
  else if (key == "alpha") c.loss.alpha = parse_real(key, v);
  else if (key == "lambda1") c.loss.lambda1 = parse_real(key, v);
  else if (key == "lambda2") c.loss.lambda2 = parse_real(key, v);
  else if (key == "distance") {
    if (v == "euclidean") c.loss.distance = DistanceMode::euclidean;
    else if (v == "squared-euclidean") c.loss.distance = DistanceMode::squared_euclidean;
    else throw ConfigError("'distance': expected euclidean or squared-euclidean, got '" + v + "'");
  }
  else if (key == "preset") c.preset = v;
  else if (key == "embed_dim") c.embed_dim = parse_uint(key, v);
  else if (key == "dropout") c.dropout = parse_real(key, v);
  else if (key == "multiscale") c.multiscale = parse_bool(key, v);
  else if (key == "use_gap") c.use_gap = parse_bool(key, v);
  else if (key == "normalize") c.normalize = parse_bool(key, v);
  else if (key == "share_weights") c.share_weights = parse_bool(key, v);
  else if (key == "edgemap") c.edgemap = parse_bool(key, v);
  else if (key == "proxy_fidelity") c.proxy.fidelity = parse_real(key, v);
  else if (key == "proxy_noise_std") c.proxy.noise_std = parse_real(key, v);
  else if (key == "proxy_seed") c.proxy.seed = parse_uint(key, v);
  else if (key == "proxy_complement_mask") {
    c.proxy.complement_mask.clear();
    for (const auto& s : split_list(v, ';')) c.proxy.complement_mask.insert(parse_uint(key, s));
  }
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "eval_every") c.eval_every = parse_uint(key, v);
  else if (key == "ground_shape") c.ground_shape = parse_image_shape(key, v);
  else if (key == "aerial_shape") c.aerial_shape = parse_image_shape(key, v);
  else if (key == "stage") c.stage = parse_stage(v);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

// Parsed `key = value` file. Keys before the first `[section]` apply to every
// stage; a `[stage-name]` section overrides them for that stage.
struct ConfigFile {
  std::string text;
  std::vector<std::pair<std::string, std::string>> global;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;

  static ConfigFile parse(const std::string& text, const std::string& origin = "<config>") {
    ConfigFile cf;
    cf.text = text;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
        section = detail::trim(line.substr(1, line.size() - 2));
        parse_stage(section);  // only stage sections exist
        cf.sections[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      auto kv = std::make_pair(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
      // Validate eagerly so errors carry a line number.
      try {
        StageConfig probe;
        detail::apply_key(probe, kv.first, kv.second);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
      (section.empty() ? cf.global : cf.sections[section]).push_back(std::move(kv));
    }
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse(std::string(std::istreambuf_iterator<char>(in), {}), path);
  }

  // Defaults, then global keys, then the stage's section. `seed_override`
  // (normally from XVIEW_SEED) wins over both.
  StageConfig resolve(Stage s, std::optional<std::uint64_t> seed_override = std::nullopt) const {
    StageConfig c = default_stage_config(s);
    for (const auto& [k, v] : global) detail::apply_key(c, k, v);
    if (auto it = sections.find(stage_name(s)); it != sections.end())
      for (const auto& [k, v] : it->second) detail::apply_key(c, k, v);
    c.stage = s;
    if (seed_override) c.seed = *seed_override;
    c.validate();
    c.config_digest = digest(c.seed);
    return c;
  }

  // Identifies the file contents together with the effective seed.
  std::uint64_t digest(std::uint64_t seed) const { return fnv1a64(text + "\nseed=" + std::to_string(seed)); }
};

// XVIEW_SEED, when set to a valid integer.
inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("XVIEW_SEED");
  if (!v || !*v) return std::nullopt;
  return detail::parse_uint("XVIEW_SEED", v);
}

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Canonical text of a resolved config; parses back to the same values.
inline std::string to_text(const StageConfig& c) {
  std::ostringstream os;
  os << "stage = " << stage_name(c.stage) << '\n'
     << "batch = " << c.batch << '\n'
     << "steps_exhaustive = " << c.steps_exhaustive << '\n'
     << "steps_hard_negative = " << c.steps_hard_negative << '\n'
     << "lr = " << fmt_real(c.lr) << '\n'
     << "margin = " << fmt_real(c.loss.margin) << '\n'
     << "alpha = " << fmt_real(c.loss.alpha) << '\n'
     << "lambda1 = " << fmt_real(c.loss.lambda1) << '\n'
     << "lambda2 = " << fmt_real(c.loss.lambda2) << '\n'
     << "distance = " << (c.loss.distance == DistanceMode::euclidean ? "euclidean" : "squared-euclidean") << '\n'
     << "preset = " << c.preset << '\n'
     << "embed_dim = " << c.embed_dim << '\n'
     << "dropout = " << fmt_real(c.dropout) << '\n'
     << "multiscale = " << (c.multiscale ? "true" : "false") << '\n'
     << "use_gap = " << (c.use_gap ? "true" : "false") << '\n'
     << "normalize = " << (c.normalize ? "true" : "false") << '\n'
     << "share_weights = " << (c.share_weights ? "true" : "false") << '\n'
     << "edgemap = " << (c.edgemap ? "true" : "false") << '\n'
     << "proxy_fidelity = " << fmt_real(c.proxy.fidelity) << '\n'
     << "proxy_noise_std = " << fmt_real(c.proxy.noise_std) << '\n'
     << "proxy_seed = " << c.proxy.seed << '\n'
     << "proxy_complement_mask = ";
  bool first = true;
  for (std::size_t m : c.proxy.complement_mask) {
    os << (first ? "" : ";") << m;
    first = false;
  }
  os << '\n' << "seed = " << c.seed << '\n' << "eval_every = " << c.eval_every << '\n';
  if (c.ground_shape.known()) os << "ground_shape = " << shape_text(c.ground_shape) << '\n';
  if (c.aerial_shape.known()) os << "aerial_shape = " << shape_text(c.aerial_shape) << '\n';
  return os.str();
}

inline StageConfig from_text(const std::string& text) {
  StageConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("stored config line '" + line + "' is malformed");
    detail::apply_key(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return c;
}

// Encoder for one view under a stage config.
inline EncoderConfig encoder_config(const StageConfig& c, const ImageShape& in) {
  if (!in.known()) throw ConfigError("encoder input shape is not known");
  EncoderConfig e = c.preset == "full" ? EncoderConfig::full_depth(in.channels, in.height, in.width, c.embed_dim)
                                       : EncoderConfig::toy(in.channels, in.height, in.width, c.embed_dim);
  e.dropout_p = c.dropout;
  e.use_gap = c.use_gap;
  e.normalize = c.normalize;
  if (!c.multiscale) e = e.single_scale();
  return e;
}

}  // namespace xview
