#pragma once

namespace aftkm {
inline constexpr const char* kVersion = "0.1.0";
}
