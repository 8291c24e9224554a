#pragma once

#include "stbem/core.hpp"

#include <optional>

namespace stbem::testing {

// Kind of the stbem::Error thrown by f, or nothing.
template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace stbem::testing
