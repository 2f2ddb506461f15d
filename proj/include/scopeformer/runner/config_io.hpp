#pragma once

#include <string>
#include <vector>

#include "scopeformer/model/config.hpp"

namespace scopeformer::runner {

using model::ScopeformerConfig;

/// Parse the flat `key = value` format. Blank lines and `#` comments are
/// ignored; list values are comma separated. Unknown keys, duplicate keys,
/// malformed values and missing required keys raise ConfigError; errors on a
/// specific line are prefixed with "<source>:<line>:".
ScopeformerConfig parse_config(const std::string& text, const std::string& source = "<config>");
ScopeformerConfig load_config(const std::string& path);

/// Every key with its current value; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ScopeformerConfig& config);
void save_config(const std::string& path, const ScopeformerConfig& config);

/// Keys that must appear in every config file.
const std::vector<std::string>& required_config_keys();
/// All recognized keys, in serialization order.
std::vector<std::string> config_keys();

}  // namespace scopeformer::runner
