#pragma once

#include <string_view>

// Text files from data/ and schemas/ compiled into the library.
namespace kbvqa::resources {

// Throws std::out_of_range for unknown names.
std::string_view get(std::string_view name);

}  // namespace kbvqa::resources
