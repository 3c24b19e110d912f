#include "mrgnn/common.hpp"

#include <algorithm>

namespace mrgnn {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::bike:
      return "bike";
    case Mode::subway:
      return "subway";
    case Mode::ridehail:
      return "ridehail";
  }
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : all_modes) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected bike, subway or ridehail)");
}

std::vector<Mode> canonical_modes(std::vector<Mode> modes) {
  std::sort(modes.begin(), modes.end());
  modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
  return modes;
}

std::string combination_label(const std::vector<Mode>& modes) {
  std::string label;
  for (Mode m : canonical_modes(modes)) {
    if (!label.empty()) label += '+';
    label += to_string(m);
  }
  return label;
}

}  // namespace mrgnn
