#pragma once

#include <fstream>
#include <sstream>

#include "dfyp/model.hpp"

namespace dfyp {
namespace config {

// Fully resolved run configuration: model geometry plus training knobs.
// Serializes to a flat key=value snapshot; parsing rejects unknown keys so a
// snapshot always round-trips to the identical run.
struct RunConfig {
  std::string preset = "toy";
  model::ModelConfig model;
  double lr = 1e-3;
  int batch = 16;
  int epochs = 50;
  long steps = 25000;
  int patience = 10;
  std::uint64_t seed = 7;
  std::string operator_pin;  // empty = adaptive gate
  int workers = 1;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> v{"modis", "sentinel2", "toy"};
  return v;
}

inline RunConfig make_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "modis") {
    c.model.channels = 9;
    c.model.image = 32;
    c.model.gsd = 500.0;
    c.model.cnn_channels = {128, 256, 256, 512, 512, 512};
    c.model.cnn_strides = {1, 2, 1, 2, 1, 2};
    c.model.dropout = 0.1;
    c.model.vit_depth = 4;
    c.model.vit_heads = 8;
    c.model.vit_dim = 256;
    c.model.vit_mlp = 512;
    c.model.vit_patch = 4;
    c.lr = 1e-4;
    c.batch = 64;
    c.steps = 25000;
  } else if (name == "sentinel2") {
    c.model.channels = 3;
    c.model.image = 256;
    c.model.gsd = 10.0;
    c.model.cnn_channels = {32, 64, 128, 128};
    c.model.cnn_strides = {2, 2, 2, 1};
    c.model.dropout = 0.1;
    c.model.vit_depth = 6;
    c.model.vit_heads = 6;
    c.model.vit_dim = 128;
    c.model.vit_mlp = 256;
    c.model.vit_patch = 16;
    c.lr = 1e-4;
    c.batch = 16;
    c.steps = 25000;
  } else if (name == "toy") {
    // Desk-scale model; geometry fields are defaults and are re-fitted to the
    // dataset tensors by the train/ablate commands.
    c.model.channels = 3;
    c.model.image = 8;
    c.model.gsd = 500.0;
    c.model.cnn_channels = {16, 32};
    c.model.cnn_strides = {1, 2};
    c.model.dropout = 0.0;
    c.model.vit_depth = 2;
    c.model.vit_heads = 2;
    c.model.vit_dim = 16;
    c.model.vit_mlp = 24;
    c.model.vit_patch = 4;
    c.lr = 1e-3;
    c.batch = 16;
    c.steps = 25000;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad integer '" + tok + "' in key '" + key + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list for key '" + key + "'");
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class F>
void numeric(const std::string& key, const std::string& value, F assign) {
  try {
    assign(value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + value + "' for key '" + key + "'");
  }
}

}  // namespace detail

// Applies one key=value assignment. `preset` resets every field to the named
// preset, so it should come first in a config file; later keys override it.
inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::numeric;
  if (key == "preset") {
    c = make_preset(value);
  } else if (key == "variant") {
    model::check_variant(value);
    c.model.variant = value;
  } else if (key == "channels") {
    numeric(key, value, [&](const std::string& v) { c.model.channels = std::stoi(v); });
  } else if (key == "image") {
    numeric(key, value, [&](const std::string& v) { c.model.image = std::stoi(v); });
  } else if (key == "gsd") {
    numeric(key, value, [&](const std::string& v) { c.model.gsd = std::stod(v); });
  } else if (key == "rca_ratio") {
    numeric(key, value, [&](const std::string& v) { c.model.rca_ratio = std::stoi(v); });
  } else if (key == "cnn_channels") {
    c.model.cnn_channels = detail::parse_int_list(value, key);
  } else if (key == "cnn_strides") {
    c.model.cnn_strides = detail::parse_int_list(value, key);
  } else if (key == "dropout") {
    numeric(key, value, [&](const std::string& v) { c.model.dropout = std::stod(v); });
  } else if (key == "vit_depth") {
    numeric(key, value, [&](const std::string& v) { c.model.vit_depth = std::stoi(v); });
  } else if (key == "vit_heads") {
    numeric(key, value, [&](const std::string& v) { c.model.vit_heads = std::stoi(v); });
  } else if (key == "vit_dim") {
    numeric(key, value, [&](const std::string& v) { c.model.vit_dim = std::stoi(v); });
  } else if (key == "vit_mlp") {
    numeric(key, value, [&](const std::string& v) { c.model.vit_mlp = std::stoi(v); });
  } else if (key == "vit_patch") {
    numeric(key, value, [&](const std::string& v) { c.model.vit_patch = std::stoi(v); });
  } else if (key == "lr") {
    numeric(key, value, [&](const std::string& v) { c.lr = std::stod(v); });
  } else if (key == "batch") {
    numeric(key, value, [&](const std::string& v) { c.batch = std::stoi(v); });
  } else if (key == "epochs") {
    numeric(key, value, [&](const std::string& v) { c.epochs = std::stoi(v); });
  } else if (key == "steps") {
    numeric(key, value, [&](const std::string& v) { c.steps = std::stol(v); });
  } else if (key == "patience") {
    numeric(key, value, [&](const std::string& v) { c.patience = std::stoi(v); });
  } else if (key == "seed") {
    numeric(key, value, [&](const std::string& v) { c.seed = std::stoull(v); });
  } else if (key == "operator") {
    c.operator_pin = value;
  } else if (key == "workers") {
    numeric(key, value, [&](const std::string& v) { c.workers = std::stoi(v); });
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

// Flat key=value text; '#' starts a comment, blank lines ignored.
inline RunConfig parse_config_text(const std::string& text, RunConfig base = RunConfig()) {
  RunConfig c = base;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    apply_key(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = RunConfig()) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), base);
}

// Fully resolved snapshot: parsing it back reproduces the config exactly.
// `preset` is intentionally omitted so later keys are not clobbered.
inline std::string snapshot(const RunConfig& c) {
  std::ostringstream out;
  out << "variant=" << c.model.variant << "\n";
  out << "channels=" << c.model.channels << "\n";
  out << "image=" << c.model.image << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", c.model.gsd);
  out << "gsd=" << buf << "\n";
  out << "rca_ratio=" << c.model.rca_ratio << "\n";
  out << "cnn_channels=" << detail::join_ints(c.model.cnn_channels) << "\n";
  out << "cnn_strides=" << detail::join_ints(c.model.cnn_strides) << "\n";
  std::snprintf(buf, sizeof(buf), "%.10g", c.model.dropout);
  out << "dropout=" << buf << "\n";
  out << "vit_depth=" << c.model.vit_depth << "\n";
  out << "vit_heads=" << c.model.vit_heads << "\n";
  out << "vit_dim=" << c.model.vit_dim << "\n";
  out << "vit_mlp=" << c.model.vit_mlp << "\n";
  out << "vit_patch=" << c.model.vit_patch << "\n";
  std::snprintf(buf, sizeof(buf), "%.10g", c.lr);
  out << "lr=" << buf << "\n";
  out << "batch=" << c.batch << "\n";
  out << "epochs=" << c.epochs << "\n";
  out << "steps=" << c.steps << "\n";
  out << "patience=" << c.patience << "\n";
  out << "seed=" << c.seed << "\n";
  if (!c.operator_pin.empty()) out << "operator=" << c.operator_pin << "\n";
  out << "workers=" << c.workers << "\n";
  return out.str();
}

}  // namespace config
}  // namespace dfyp
