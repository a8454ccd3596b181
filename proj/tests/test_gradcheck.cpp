#include <cmath>
#include <set>

#include "doctest.h"
#include "pansel/gradcheck.hpp"

using namespace pansel;

TEST_CASE("central differences of a known function") {
  // f(x) = sum x_i^3, f' = 3 x_i^2
  const auto f = [](const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v * v;
    return s;
  };
  const std::vector<double> x{0.5, -1.0, 2.0};
  std::vector<double> g;
  for (double v : x) g.push_back(3 * v * v);
  GradcheckOptions opt;
  int n = 0;
  CHECK(max_relative_error(f, x, g, opt, &n) < 1e-8);
  CHECK(n == 3);
  g[1] += 0.1;
  CHECK(max_relative_error(f, x, g, opt) > 1e-2);
}

TEST_CASE("every primitive and loss passes") {
  const auto entries = run_gradcheck();
  std::set<std::string> names;
  for (const auto& e : entries) {
    INFO(e.name << " max rel error " << e.max_rel_error);
    CHECK(e.passed);
    CHECK(e.max_rel_error < 1e-3);
    CHECK(e.checked > 0);
    names.insert(e.name);
  }
  for (const char* n : {"relu", "avgpool2", "upsample2", "concat", "softmax", "conv3x3.input", "conv3x3.weight",
                        "conv3x3.bias", "cross_entropy", "focal", "pull", "push", "unlabelled_push", "dice_object",
                        "consistency", "instance_total", "unet_semantic_ce", "unet_embedding_total"})
    CHECK(names.count(n) == 1);
}

TEST_CASE("relu away from the kink is exact") {
  for (const auto& e : run_gradcheck())
    if (e.name == "relu") CHECK(e.max_rel_error < 1e-6);
}
