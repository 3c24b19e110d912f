#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mrgnn {

enum class Mode { bike = 0, subway = 1, ridehail = 2 };

inline constexpr std::array<Mode, 3> all_modes{Mode::bike, Mode::subway, Mode::ridehail};

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

/// Modes in canonical order (bike, subway, ridehail) with duplicates removed.
std::vector<Mode> canonical_modes(std::vector<Mode> modes);

/// "bike+subway+ridehail" style label for a mode combination.
std::string combination_label(const std::vector<Mode>& modes);

// Error categories map onto distinct CLI exit codes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or inconsistent archive file.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace mrgnn
