#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace evf {

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;  // tolerances, worst case, or the first failing trial
  double seconds = 0;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  double max_integer_deviation = 0;
  double max_real_deviation = 0;
  bool all_pass() const;
};

struct VerifyOptions {
  int trials = 100;            // randomized equivalence + conservation trials
  uint64_t seed = 7;
  bool check_gradients = true;  // finite-difference suite, the slow part
  int threads = 0;
};

// Checks, in order: factorization equivalence (integer-exact and real within
// 1e-3), count conservation, Gabor bank post-conditions, LIF unit dynamics
// and surrogate shape, then finite-difference gradients for the tensor
// primitives, random graphs and the relaxed end-to-end model.
VerifyReport run_verification(const VerifyOptions& opts = {});

// One line per check: "PASS name (detail)" / "FAIL name (detail)".
void print_report(const VerifyReport& report, std::ostream& out);

}  // namespace evf
