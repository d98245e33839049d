#pragma once

namespace egc {
inline constexpr const char* kVersion = "0.1.0";
}
