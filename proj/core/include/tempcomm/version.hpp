#pragma once

namespace tempcomm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tempcomm
