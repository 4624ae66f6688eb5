#pragma once

namespace epiinit {

inline constexpr const char* kVersion = "0.1.0";

}
