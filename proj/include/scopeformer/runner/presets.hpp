#pragma once

#include <string>
#include <vector>

#include "scopeformer/model/config.hpp"

namespace scopeformer::runner {

/// Named architecture presets. The published family uses the toy-wide backbone
/// (2048 output channels) so projection and parameter geometry line up with
/// the published configurations; "efficient-desk" is the scaled-down
/// efficient model trained in the desk-scale experiments.
model::ScopeformerConfig preset(const std::string& name);

/// Every preset name, published configurations first.
const std::vector<std::string>& preset_names();

/// Published parameter count for a preset (0 for presets without one).
double published_parameter_count(const std::string& name);

}  // namespace scopeformer::runner
