#pragma once

namespace cephalo {
inline constexpr const char* kVersion = "0.1.0";
}
