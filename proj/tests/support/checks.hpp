#pragma once

#include <string>

#include "doctest.h"

#include "cracsim/errors.hpp"

// Asserts that `fn` raises a cracsim::Error with exactly this code.
template <typename Fn>
void expect_errc(cracsim::Errc code, Fn&& fn) {
  try {
    fn();
    FAIL_CHECK("expected error " << cracsim::errc_name(code) << ", got none");
  } catch (const cracsim::Error& e) {
    CHECK(e.code() == code);
  }
}
