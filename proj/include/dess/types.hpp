#pragma once

#include <cstdint>
#include <string_view>

namespace dess {

using Id = std::int64_t;

enum class Side { user = 0, item = 1 };

constexpr std::string_view to_string(Side s) { return s == Side::user ? "user" : "item"; }
constexpr int index_of(Side s) { return static_cast<int>(s); }

}  // namespace dess
