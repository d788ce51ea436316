#pragma once

namespace groupdro {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kVersionString = "groupdro 0.1.0";

}  // namespace groupdro
