#pragma once

namespace qtc {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace qtc
