#include "scopeformer/runner/config_io.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "scopeformer/core/binary_io.hpp"

namespace scopeformer::runner {

using core::ConfigError;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty entry in list '" + value + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

template <typename T>
T parse_unsigned(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest form that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (parse_double(shorter) == v) return shorter;
  }
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + f(xs[i]);
  return out;
}

struct KeySpec {
  std::string name;
  bool required;
  std::function<void(ScopeformerConfig&, const std::string&)> set;
  std::function<std::string(const ScopeformerConfig&)> get;
};

#define SIZE_KEY(field, req)                                                                     \
  KeySpec{#field, req, [](ScopeformerConfig& c, const std::string& v) { c.field = parse_unsigned<std::size_t>(v); }, \
          [](const ScopeformerConfig& c) { return std::to_string(c.field); }}
#define DOUBLE_KEY(field)                                                                              \
  KeySpec{#field, false, [](ScopeformerConfig& c, const std::string& v) { c.field = parse_double(v); }, \
          [](const ScopeformerConfig& c) { return fmt_double(c.field); }}
#define BOOL_KEY(field)                                                                              \
  KeySpec{#field, false, [](ScopeformerConfig& c, const std::string& v) { c.field = parse_bool(v); }, \
          [](const ScopeformerConfig& c) { return std::string(c.field ? "true" : "false"); }}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"variant", false, [](ScopeformerConfig& c, const std::string& v) { c.variant = v; },
       [](const ScopeformerConfig& c) { return c.variant; }},
      {"vit_kind", true, [](ScopeformerConfig& c, const std::string& v) { c.vit_kind = vit::vit_kind_from_string(v); },
       [](const ScopeformerConfig& c) { return vit::to_string(c.vit_kind); }},
      SIZE_KEY(n_backbones, false),
      {"backbone_arch", false, [](ScopeformerConfig& c, const std::string& v) { c.backbone_arch = split_list(v); },
       [](const ScopeformerConfig& c) { return join(c.backbone_arch, [](const std::string& s) { return s; }); }},
      {"backbone_seed", false,
       [](ScopeformerConfig& c, const std::string& v) { c.backbone_seed = parse_unsigned<std::uint64_t>(v); },
       [](const ScopeformerConfig& c) { return std::to_string(c.backbone_seed); }},
      {"pretrain_tag", false,
       [](ScopeformerConfig& c, const std::string& v) {
         c.pretrain_tags.clear();
         for (const auto& s : split_list(v)) c.pretrain_tags.push_back(backbone::pretrain_tag_from_string(s));
       },
       [](const ScopeformerConfig& c) {
         return join(c.pretrain_tags, [](backbone::PretrainTag t) { return backbone::to_string(t); });
       }},
      SIZE_KEY(d, true),
      SIZE_KEY(layers, true),
      SIZE_KEY(mlp_dim, true),
      SIZE_KEY(heads, true),
      {"attention", false,
       [](ScopeformerConfig& c, const std::string& v) { c.attention = vit::attention_kind_from_string(v); },
       [](const ScopeformerConfig& c) { return vit::to_string(c.attention); }},
      {"reattention_norm", false,
       [](ScopeformerConfig& c, const std::string& v) { c.reattention_norm = vit::reattention_norm_from_string(v); },
       [](const ScopeformerConfig& c) { return vit::to_string(c.reattention_norm); }},
      SIZE_KEY(patch, false),
      {"cls_axis", false,
       [](ScopeformerConfig& c, const std::string& v) {
         if (v == "default") c.cls_axis.reset();
         else c.cls_axis = vit::cls_axis_from_string(v);
       },
       [](const ScopeformerConfig& c) { return c.cls_axis ? vit::to_string(*c.cls_axis) : std::string("default"); }},
      BOOL_KEY(uneven_heads),
      SIZE_KEY(head_hidden, false),
      SIZE_KEY(image_size, false),
      SIZE_KEY(grid, false),
      DOUBLE_KEY(frozen_fraction),
      BOOL_KEY(pretrain_backbone),
      SIZE_KEY(pretrain_epochs, false),
      DOUBLE_KEY(learning_rate),
      DOUBLE_KEY(beta1),
      DOUBLE_KEY(beta2),
      DOUBLE_KEY(adam_eps),
      SIZE_KEY(batch_size, false),
      SIZE_KEY(epochs, false),
      DOUBLE_KEY(val_fraction),
      BOOL_KEY(flip),
      SIZE_KEY(early_stop_patience, false),
      {"class_weights", false,
       [](ScopeformerConfig& c, const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != c.class_weights.alpha.size()) {
           throw ConfigError("class_weights needs " + std::to_string(c.class_weights.alpha.size()) + " entries, got " +
                             std::to_string(items.size()));
         }
         for (std::size_t i = 0; i < items.size(); ++i) c.class_weights.alpha[i] = parse_double(items[i]);
       },
       [](const ScopeformerConfig& c) {
         return join(std::vector<double>(c.class_weights.alpha.begin(), c.class_weights.alpha.end()), fmt_double);
       }},
      {"seed", false, [](ScopeformerConfig& c, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>(v); },
       [](const ScopeformerConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

}  // namespace

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& spec : key_table())
      if (spec.required) k.push_back(spec.name);
    return k;
  }();
  return keys;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& spec : key_table()) k.push_back(spec.name);
  return k;
}

ScopeformerConfig parse_config(const std::string& text, const std::string& source) {
  std::map<std::string, const KeySpec*> by_name;
  for (const auto& spec : key_table()) by_name[spec.name] = &spec;

  ScopeformerConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key before '='");
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "key '" + key + "' has no value");
    try {
      it->second->set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + "invalid value for '" + key + "': " + e.what());
    }
  }
  for (const auto& key : required_config_keys()) {
    if (!seen.count(key)) throw ConfigError(source + ": missing required key '" + key + "'");
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return config;
}

ScopeformerConfig load_config(const std::string& path) {
  const std::vector<std::uint8_t> bytes = core::read_file_bytes(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path);
}

std::string serialize_config(const ScopeformerConfig& config) {
  std::string out;
  for (const auto& spec : key_table()) out += spec.name + " = " + spec.get(config) + "\n";
  return out;
}

void save_config(const std::string& path, const ScopeformerConfig& config) {
  const std::string text = serialize_config(config);
  core::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace scopeformer::runner
