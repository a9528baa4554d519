#include <doctest.h>

#include "gradient_cases.hpp"

using namespace gradcheck;

TEST_CASE("finite-difference gradients of every op and head") {
  for (const auto& c : gradient_cases()) {
    const double err = worst_over_seeds(c.one);
    MESSAGE(c.name << ": max rel err " << err);
    CHECK_MESSAGE(err < kTolerance, c.name);
  }
}
