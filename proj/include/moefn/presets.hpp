#pragma once

#include <optional>
#include <string_view>

namespace moefn {

/// JSON text of a built-in preset ("desk" or "paper").
std::optional<std::string_view> preset_text(std::string_view name);

}  // namespace moefn
