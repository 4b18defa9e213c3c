#pragma once

namespace pufmoe {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace pufmoe
