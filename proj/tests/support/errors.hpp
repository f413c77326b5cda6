#pragma once

#include <optional>

#include "neurovit/error.hpp"

namespace oracle {

/// Code of the neurovit::Error thrown by `fn`, or nullopt if it returned.
template <class F>
std::optional<neurovit::Errc> error_of(F&& fn) {
  try {
    fn();
  } catch (const neurovit::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace oracle
