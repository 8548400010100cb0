#include "kpmix/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kpmix {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

FlatConfig parse_flat_config(const std::string& text) {
  FlatConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected `key = value`, got: " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    }
    cfg[key] = value;
  }
  return cfg;
}

FlatConfig read_flat_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_flat_config(ss.str());
}

void write_flat_config(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config file: " + path);
  for (const auto& [k, v] : rows) os << k << " = " << v << "\n";
}

const std::string& cfg_get(const FlatConfig& cfg, const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw std::invalid_argument("config: missing required key `" + key + "`");
  return it->second;
}

std::string cfg_get_or(const FlatConfig& cfg, const std::string& key,
                       const std::string& fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : it->second;
}

int cfg_int_or(const FlatConfig& cfg, const std::string& key, int fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key `" + key + "` is not an integer: " + it->second);
  }
}

double cfg_double_or(const FlatConfig& cfg, const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key `" + key + "` is not a number: " + it->second);
  }
}

uint64_t cfg_uint64_or(const FlatConfig& cfg, const std::string& key, uint64_t fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key `" + key + "` is not an integer: " + it->second);
  }
}

std::vector<int> cfg_ints_or(const FlatConfig& cfg, const std::string& key,
                             const std::vector<int>& fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](char c) { return c == ' '; }), tok.end());
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key `" + key + "` has a bad list entry: " + tok);
    }
  }
  return out;
}

void cfg_require_known(const FlatConfig& cfg, const std::vector<std::string>& allowed,
                       const std::string& context) {
  for (const auto& [k, _] : cfg) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      std::string msg = context + ": unknown key `" + k + "`; known keys:";
      for (const auto& a : allowed) msg += " " + a;
      throw std::invalid_argument(msg);
    }
  }
}

}  // namespace kpmix
