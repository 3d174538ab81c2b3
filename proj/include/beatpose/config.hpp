// Pipeline configuration: a small TOML subset ([section] headers, key = value
// with ints, floats, bools, quoted strings, and flat number arrays), strict
// about unknown keys, validated against module preconditions at load time.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "beatpose/common.hpp"
#include "beatpose/context.hpp"
#include "beatpose/eval.hpp"
#include "beatpose/model.hpp"

namespace beatpose {

struct PipelineConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  double rate = 30.0;

  WindowConfig window;  // h, T, n, n_ref, horizon

  int d_z = 32;
  int hidden = 64;
  int row_dim = 16;
  double lr = 1e-2;
  double momentum = 0.9;
  double lambda_match = 0.1;
  int batch = 16;
  int steps = 200;
  std::string precision = "f64";

  int dataset_stride = 1;

  int rollout_stride = 10;
  int rollout_blend = 3;
  bool style_per_window = false;

  LaneGeometry lanes;
  ScoringGeometry scoring;

  ModelDims model_dims() const {
    ModelDims d;
    d.d_z = d_z;
    d.hidden = hidden;
    d.row_dim = row_dim;
    d.h = window.h;
    d.T = window.T;
    d.n = window.n;
    d.n_ref = window.n_ref;
    return d;
  }

  void validate() const;
  nlohmann::json to_json() const;
};

namespace detail {

struct RawValue {
  std::string token;  // unquoted content for strings, raw text otherwise
  bool quoted = false;
  int line = 0;
};

inline Error config_error(const std::string& key, int line, const std::string& what) {
  return Error(ErrorKind::Config, "config key " + key + ": " + what,
               {{"key", key}, {"line", std::to_string(line)}});
}

// Flat section.key -> raw value map. Duplicate keys are rejected.
inline std::map<std::string, RawValue> parse_toml_subset(std::string_view text) {
  std::map<std::string, RawValue> values;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;

    // strip comments outside quotes
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line.resize(i);
        break;
      }
    }
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);

    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw Error(ErrorKind::Config, "malformed section header",
                    {{"line", std::to_string(line_no)}});
      section = line.substr(1, line.size() - 2);
      for (char c : section)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
          throw Error(ErrorKind::Config, "malformed section name: " + section,
                      {{"line", std::to_string(line_no)}});
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Config, "expected key = value",
                  {{"line", std::to_string(line_no)}});
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto kl = key.find_last_not_of(" \t");
    key = key.substr(0, kl == std::string::npos ? 0 : kl + 1);
    const auto vf = value.find_first_not_of(" \t");
    value = vf == std::string::npos ? "" : value.substr(vf);
    if (key.empty() || value.empty())
      throw Error(ErrorKind::Config, "expected key = value",
                  {{"line", std::to_string(line_no)}});
    for (char c : key)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
        throw Error(ErrorKind::Config, "malformed key: " + key,
                    {{"line", std::to_string(line_no)}});

    RawValue rv;
    rv.line = line_no;
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"')
        throw Error(ErrorKind::Config, "unterminated string",
                    {{"line", std::to_string(line_no)}});
      rv.token = value.substr(1, value.size() - 2);
      rv.quoted = true;
    } else {
      rv.token = value;
    }
    const std::string path = section.empty() ? key : section + "." + key;
    if (!values.emplace(path, std::move(rv)).second)
      throw Error(ErrorKind::Config, "duplicate key " + path,
                  {{"key", path}, {"line", std::to_string(line_no)}});
  }
  return values;
}

// Typed extraction that consumes keys so leftovers can be rejected.
class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, RawValue> values)
      : values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void take_int(const std::string& key, int& out) {
    if (auto rv = take(key)) out = to_int(key, *rv);
  }
  void take_u64(const std::string& key, std::uint64_t& out) {
    if (auto rv = take(key)) {
      if (rv->quoted) throw config_error(key, rv->line, "expected an integer");
      std::uint64_t v = 0;
      auto res = std::from_chars(rv->token.data(), rv->token.data() + rv->token.size(), v);
      if (res.ec != std::errc() || res.ptr != rv->token.data() + rv->token.size())
        throw config_error(key, rv->line, "expected an unsigned integer");
      out = v;
    }
  }
  void take_double(const std::string& key, double& out) {
    if (auto rv = take(key)) out = to_double(key, *rv);
  }
  void take_bool(const std::string& key, bool& out) {
    if (auto rv = take(key)) {
      if (rv->token == "true")
        out = true;
      else if (rv->token == "false")
        out = false;
      else
        throw config_error(key, rv->line, "expected true or false");
    }
  }
  void take_string(const std::string& key, std::string& out) {
    if (auto rv = take(key)) {
      if (!rv->quoted) throw config_error(key, rv->line, "expected a quoted string");
      out = rv->token;
    }
  }
  template <std::size_t N>
  void take_array(const std::string& key, std::array<double, N>& out) {
    if (auto rv = take(key)) {
      if (rv->quoted || rv->token.size() < 2 || rv->token.front() != '[' ||
          rv->token.back() != ']')
        throw config_error(key, rv->line, "expected [v, v, ...]");
      std::vector<double> vals;
      std::string inner = rv->token.substr(1, rv->token.size() - 2);
      std::size_t start = 0;
      while (start <= inner.size()) {
        std::size_t comma = std::min(inner.find(',', start), inner.size());
        std::string item = inner.substr(start, comma - start);
        const auto f = item.find_first_not_of(" \t");
        if (f != std::string::npos) {
          const auto l = item.find_last_not_of(" \t");
          item = item.substr(f, l - f + 1);
          RawValue iv{item, false, rv->line};
          vals.push_back(to_double(key, iv));
        }
        if (comma == inner.size()) break;
        start = comma + 1;
      }
      if (vals.size() != N)
        throw config_error(key, rv->line,
                           "expected exactly " + std::to_string(N) + " values");
      for (std::size_t i = 0; i < N; ++i) out[i] = vals[i];
    }
  }

  void reject_leftovers() const {
    if (values_.empty()) return;
    throw Error(ErrorKind::Config, "unknown config key " + values_.begin()->first,
                {{"key", values_.begin()->first},
                 {"line", std::to_string(values_.begin()->second.line)}});
  }

 private:
  std::optional<RawValue> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    RawValue rv = it->second;
    values_.erase(it);
    return rv;
  }
  static int to_int(const std::string& key, const RawValue& rv) {
    if (rv.quoted) throw config_error(key, rv.line, "expected an integer");
    int v = 0;
    auto res = std::from_chars(rv.token.data(), rv.token.data() + rv.token.size(), v);
    if (res.ec != std::errc() || res.ptr != rv.token.data() + rv.token.size())
      throw config_error(key, rv.line, "expected an integer");
    return v;
  }
  static double to_double(const std::string& key, const RawValue& rv) {
    if (rv.quoted) throw config_error(key, rv.line, "expected a number");
    double v = 0;
    auto res = std::from_chars(rv.token.data(), rv.token.data() + rv.token.size(), v);
    if (res.ec != std::errc() || res.ptr != rv.token.data() + rv.token.size())
      throw config_error(key, rv.line, "expected a number");
    return v;
  }

  std::map<std::string, RawValue> values_;
};

}  // namespace detail

inline PipelineConfig parse_config(std::string_view text) {
  detail::ConfigReader r(detail::parse_toml_subset(text));
  PipelineConfig c;
  r.take_u64("pipeline.seed", c.seed);
  r.take_int("pipeline.threads", c.threads);
  r.take_double("pose.rate", c.rate);
  r.take_int("context.h", c.window.h);
  r.take_int("context.T", c.window.T);
  r.take_int("context.n", c.window.n);
  r.take_int("context.n_ref", c.window.n_ref);
  r.take_double("context.horizon", c.window.horizon);
  r.take_int("model.d_z", c.d_z);
  r.take_int("model.hidden", c.hidden);
  r.take_int("model.row_dim", c.row_dim);
  r.take_double("model.lr", c.lr);
  r.take_double("model.momentum", c.momentum);
  r.take_double("model.lambda_match", c.lambda_match);
  r.take_int("model.batch", c.batch);
  r.take_int("model.steps", c.steps);
  r.take_string("model.precision", c.precision);
  r.take_int("dataset.stride", c.dataset_stride);
  r.take_int("rollout.stride", c.rollout_stride);
  r.take_int("rollout.blend", c.rollout_blend);
  r.take_bool("rollout.style_per_window", c.style_per_window);
  r.take_array("lanes.column_x", c.lanes.column_x);
  r.take_array("lanes.row_y", c.lanes.row_y);
  r.take_double("lanes.cell_width", c.lanes.cell_width);
  r.take_double("lanes.cell_height", c.lanes.cell_height);
  r.take_double("lanes.z_spawn", c.lanes.z_spawn);
  r.take_double("lanes.beam_speed", c.lanes.beam_speed);
  r.take_double("lanes.full_wall_height", c.lanes.full_wall_height);
  r.take_double("lanes.crouch_wall_bottom", c.lanes.crouch_wall_bottom);
  r.take_double("lanes.crouch_wall_height", c.lanes.crouch_wall_height);
  r.take_double("scoring.hit_window", c.scoring.hit_window);
  r.take_double("scoring.cell_half_depth", c.scoring.cell_half_depth);
  r.take_double("scoring.min_hand_speed", c.scoring.min_hand_speed);
  r.take_double("scoring.direction_cos_min", c.scoring.direction_cos_min);
  r.take_double("scoring.bomb_radius", c.scoring.bomb_radius);
  r.take_double("scoring.head_radius", c.scoring.head_radius);
  r.take_int("scoring.supersample", c.scoring.supersample);
  r.reject_leftovers();
  c.scoring.lanes = c.lanes;
  c.validate();
  return c;
}

inline void PipelineConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& what) {
    throw detail::config_error(key, 0, what);
  };
  if (threads < 1) fail("pipeline.threads", "must be >= 1");
  if (!(rate > 0)) fail("pose.rate", "must be positive");
  if (window.h < 1) fail("context.h", "must be >= 1");
  if (window.T < 1) fail("context.T", "must be >= 1");
  if (window.n < 1) fail("context.n", "must be >= 1");
  if (window.n_ref < 1) fail("context.n_ref", "must be >= 1");
  if (!(window.horizon > 0)) fail("context.horizon", "must be positive");
  if (d_z < 1) fail("model.d_z", "must be >= 1");
  if (hidden < 1) fail("model.hidden", "must be >= 1");
  if (row_dim < 1) fail("model.row_dim", "must be >= 1");
  if (lr < 0) fail("model.lr", "must be >= 0");
  if (momentum < 0 || momentum >= 1) fail("model.momentum", "must be in [0, 1)");
  if (lambda_match < 0) fail("model.lambda_match", "must be >= 0");
  if (batch < 1) fail("model.batch", "must be >= 1");
  if (steps < 0) fail("model.steps", "must be >= 0");
  if (precision != "f64" && precision != "f32")
    fail("model.precision", "must be \"f64\" or \"f32\"");
  if (dataset_stride < 1 || dataset_stride > window.T)
    fail("dataset.stride", "must be in [1, T]");
  if (rollout_stride < 1 || rollout_stride > window.T)
    fail("rollout.stride", "must be in [1, T]");
  if (rollout_blend < 0 || rollout_blend >= rollout_stride)
    fail("rollout.blend", "must satisfy 0 <= blend < stride");
  if (rollout_stride + rollout_blend > window.T)
    fail("rollout.blend", "stride + blend must not exceed T");
  if (!(lanes.cell_width > 0)) fail("lanes.cell_width", "must be positive");
  if (!(lanes.cell_height > 0)) fail("lanes.cell_height", "must be positive");
  if (!(lanes.beam_speed > 0)) fail("lanes.beam_speed", "must be positive");
  try {
    scoring.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, std::string("scoring: ") + e.what(),
                {{"key", "scoring"}});
  }
}

inline nlohmann::json PipelineConfig::to_json() const {
  return {
      {"pipeline", {{"seed", seed}, {"threads", threads}}},
      {"pose", {{"rate", rate}}},
      {"context",
       {{"h", window.h},
        {"T", window.T},
        {"n", window.n},
        {"n_ref", window.n_ref},
        {"horizon", window.horizon}}},
      {"model",
       {{"d_z", d_z},
        {"hidden", hidden},
        {"row_dim", row_dim},
        {"lr", lr},
        {"momentum", momentum},
        {"lambda_match", lambda_match},
        {"batch", batch},
        {"steps", steps},
        {"precision", precision}}},
      {"dataset", {{"stride", dataset_stride}}},
      {"rollout",
       {{"stride", rollout_stride},
        {"blend", rollout_blend},
        {"style_per_window", style_per_window}}},
      {"lanes",
       {{"column_x", lanes.column_x},
        {"row_y", lanes.row_y},
        {"cell_width", lanes.cell_width},
        {"cell_height", lanes.cell_height},
        {"z_spawn", lanes.z_spawn},
        {"beam_speed", lanes.beam_speed},
        {"full_wall_height", lanes.full_wall_height},
        {"crouch_wall_bottom", lanes.crouch_wall_bottom},
        {"crouch_wall_height", lanes.crouch_wall_height}}},
      {"scoring",
       {{"hit_window", scoring.hit_window},
        {"cell_half_depth", scoring.cell_half_depth},
        {"min_hand_speed", scoring.min_hand_speed},
        {"direction_cos_min", scoring.direction_cos_min},
        {"bomb_radius", scoring.bomb_radius},
        {"head_radius", scoring.head_radius},
        {"supersample", scoring.supersample}}},
  };
}

}  // namespace beatpose
