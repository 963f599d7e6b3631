#pragma once

namespace twoview {
inline constexpr const char* kToolkitVersion = "0.1.0";
}
