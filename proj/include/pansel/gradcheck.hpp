#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pansel {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;  // coordinates compared
  bool passed = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;
  double floor = 1e-6;  // denominators below this are raised to it
  int max_coords = 48;  // per input array
  std::uint64_t seed = 0;
};

/// Compares `analytic` with central differences of `f` around `x` on up to
/// opt.max_coords coordinates (evenly strided). Returns the largest
/// |a - n| / max(|a|, |n|, floor).
double max_relative_error(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          const std::vector<double>& analytic, const GradcheckOptions& opt, int* checked = nullptr);

/// Every network primitive and every loss, at 64-bit.
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opt = {});

}  // namespace pansel
