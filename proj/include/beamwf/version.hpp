#pragma once

namespace beamwf {

inline constexpr const char* version = "0.1.0";

}  // namespace beamwf
