#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace kpmix {

// Flat `key = value` text config; '#' starts a comment.
using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_flat_config(const std::string& text);
FlatConfig read_flat_config(const std::string& path);
void write_flat_config(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& rows);

const std::string& cfg_get(const FlatConfig& cfg, const std::string& key);
std::string cfg_get_or(const FlatConfig& cfg, const std::string& key, const std::string& fallback);
int cfg_int_or(const FlatConfig& cfg, const std::string& key, int fallback);
double cfg_double_or(const FlatConfig& cfg, const std::string& key, double fallback);
uint64_t cfg_uint64_or(const FlatConfig& cfg, const std::string& key, uint64_t fallback);
std::vector<int> cfg_ints_or(const FlatConfig& cfg, const std::string& key,
                             const std::vector<int>& fallback);

// Throws naming the first key outside `allowed`.
void cfg_require_known(const FlatConfig& cfg, const std::vector<std::string>& allowed,
                       const std::string& context);

}  // namespace kpmix
