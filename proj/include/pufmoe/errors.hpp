#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pufmoe {

/// Malformed persisted data (CRPB, CSV, checkpoints). `position` is a byte
/// offset for binary formats and a 1-based line number for CSV.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& message, std::uint64_t position)
      : std::runtime_error(message + " (at " + std::to_string(position) + ")"),
        position_(position) {}

  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t position_;
};

/// Optimization produced a non-finite loss or gradient.
class TrainingDiverged : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// crp_search hit its budget cap without bracketing the boundary.
class SearchExhausted : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pufmoe
