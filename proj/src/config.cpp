#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "grformer/errors.hpp"
#include "grformer/network.hpp"

namespace grf {

std::size_t ModelConfig::ffn_hidden() const {
  return static_cast<std::size_t>(std::llround(ffn_ratio * static_cast<double>(channels)));
}

GrsaShape ModelConfig::grsa_shape() const {
  return GrsaShape{channels, heads, c_hidden_rpb, window, variant};
}

void ModelConfig::validate() const {
  if (scale < 2 || scale > 4) {
    throw ContractError("scale must be 2, 3 or 4, got " + std::to_string(scale));
  }
  if (channels == 0) throw DimensionError("channels must be positive");
  if (channels % 2 != 0) {
    throw DimensionError("channels must be even, got " + std::to_string(channels));
  }
  if (c_in == 0 || c_out == 0) throw DimensionError("image channels must be positive");
  if (!(ffn_ratio > 0.0) || ffn_hidden() == 0) throw ContractError("ffn_ratio must be positive");
  validate_grsa_shape(grsa_shape());
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(std::size_t line, const std::string& key, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + " (" + key + "): " + what);
}

std::size_t parse_count(std::size_t line, const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    fail(line, key, "expected a non-negative integer, got '" + value + "'");
  }
  if (pos != value.size() || value[0] == '-') {
    fail(line, key, "expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

bool parse_bool(std::size_t line, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  fail(line, key, "expected true/false, got '" + value + "'");
}

double parse_real(std::size_t line, const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    fail(line, key, "expected a number, got '" + value + "'");
  }
  if (pos != value.size()) fail(line, key, "expected a number, got '" + value + "'");
  return v;
}

// Shortest text that parses back to the same double.
std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string content = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line) + ": expected 'name = value'");
    }
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    if (value.empty()) fail(line, key, "missing value");
    if (key == "num_groups") cfg.num_groups = parse_count(line, key, value);
    else if (key == "blocks_per_group") cfg.blocks_per_group = parse_count(line, key, value);
    else if (key == "channels") cfg.channels = parse_count(line, key, value);
    else if (key == "heads") cfg.heads = parse_count(line, key, value);
    else if (key == "window_h") cfg.window.h = parse_count(line, key, value);
    else if (key == "window_w") cfg.window.w = parse_count(line, key, value);
    else if (key == "scale") cfg.scale = parse_count(line, key, value);
    else if (key == "ffn_ratio") cfg.ffn_ratio = parse_real(line, key, value);
    else if (key == "c_in") cfg.c_in = parse_count(line, key, value);
    else if (key == "c_out") cfg.c_out = parse_count(line, key, value);
    else if (key == "shift_windows") cfg.shift_windows = parse_bool(line, key, value);
    else if (key == "c_hidden_rpb") cfg.c_hidden_rpb = parse_count(line, key, value);
    else if (key == "grouped") cfg.variant.grouped = parse_bool(line, key, value);
    else if (key == "residual") cfg.variant.residual = parse_bool(line, key, value);
    else if (key == "position_bias") {
      if (value == "es-rpb") cfg.variant.es_rpb = true;
      else if (value == "table") cfg.variant.es_rpb = false;
      else fail(line, key, "expected es-rpb or table, got '" + value + "'");
    } else {
      fail(line, key, "unknown field");
    }
  }
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "num_groups = " << cfg.num_groups << '\n'
     << "blocks_per_group = " << cfg.blocks_per_group << '\n'
     << "channels = " << cfg.channels << '\n'
     << "heads = " << cfg.heads << '\n'
     << "window_h = " << cfg.window.h << '\n'
     << "window_w = " << cfg.window.w << '\n'
     << "scale = " << cfg.scale << '\n'
     << "ffn_ratio = " << format_real(cfg.ffn_ratio) << '\n'
     << "c_in = " << cfg.c_in << '\n'
     << "c_out = " << cfg.c_out << '\n'
     << "shift_windows = " << (cfg.shift_windows ? "true" : "false") << '\n'
     << "c_hidden_rpb = " << cfg.c_hidden_rpb << '\n'
     << "grouped = " << (cfg.variant.grouped ? "true" : "false") << '\n'
     << "residual = " << (cfg.variant.residual ? "true" : "false") << '\n'
     << "position_bias = " << (cfg.variant.es_rpb ? "es-rpb" : "table") << '\n';
  return os.str();
}

}  // namespace grf
