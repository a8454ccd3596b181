#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pansel/common.hpp"
#include "pansel/config.hpp"
#include "pansel/instance.hpp"
#include "pansel/pipeline.hpp"

using namespace pansel;

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.integer("seed") == 0);
  CHECK(c.integer("n_source") == 200);
  CHECK(c.real("delta_v") == 0.5);
  CHECK(c.flag("fusion_flips"));
  CHECK(c.reals("fusion_scales") == std::vector<double>{0.7, 1.0});
  CHECK(c.integers("class_set").empty());
  CHECK(c.known("mix"));
  CHECK_FALSE(c.known("mixx"));
}

TEST_CASE("text merge with comments and blanks") {
  RunConfig c;
  c.merge_text("# header\n\nseed = 7   # trailing\n  delta_d=2.5\nclass_set = 3, 4\n", "mem");
  CHECK(c.integer("seed") == 7);
  CHECK(c.real("delta_d") == 2.5);
  CHECK(c.integers("class_set") == std::vector<int>{3, 4});
}

TEST_CASE("unknown keys and malformed lines") {
  RunConfig c;
  CHECK_THROWS_AS(c.merge_text("sede = 1\n", "mem"), ConfigError);
  CHECK_THROWS_AS(c.merge_text("seed 1\n", "mem"), ConfigError);
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set_assignment("seed"), ConfigError);
  CHECK_THROWS_AS(c.str("nope"), ConfigError);
}

TEST_CASE("bad values") {
  RunConfig c;
  c.set("seed", "12x");
  CHECK_THROWS_AS(c.integer("seed"), ConfigError);
  c.set("delta_v", "abc");
  CHECK_THROWS_AS(c.real("delta_v"), ConfigError);
  c.set("morphology", "maybe");
  CHECK_THROWS_AS(c.flag("morphology"), ConfigError);
  c.set("fusion_scales", "0.5,x");
  CHECK_THROWS_AS(c.reals("fusion_scales"), ConfigError);
  for (const char* v : {"true", "on", "yes", "1"}) {
    c.set("morphology", v);
    CHECK(c.flag("morphology"));
  }
  for (const char* v : {"false", "off", "no", "0"}) {
    c.set("morphology", v);
    CHECK_FALSE(c.flag("morphology"));
  }
}

TEST_CASE("write and reload reproduce the configuration") {
  RunConfig c;
  c.set_assignment("seed=42");
  c.set_assignment("workflow = ccm");
  const auto path = std::filesystem::temp_directory_path() / "pansel_test_config.lock";
  {
    std::ofstream os(path);
    c.write(os);
  }
  const RunConfig back = RunConfig::from_file(path);
  CHECK(back.text() == c.text());
  CHECK(back.keys() == c.keys());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(RunConfig::from_file(path), ConfigError);
}

TEST_CASE("module configurations validate their inputs") {
  RunConfig c;
  CHECK_NOTHROW(semantic_config(c, true));
  CHECK_NOTHROW(instance_config(c, true));
  c.set("semantic_guide", "sometimes");
  CHECK_THROWS_AS(semantic_config(c, true), ConfigError);
  c.set("semantic_guide", "none");
  c.set("workflow", "xyz");
  CHECK_THROWS_AS(config_workflow(c), ConfigError);
  c.set("workflow", "all");
  c.set("image_size", "8");
  CHECK_THROWS_AS(scene_spec(c, Domain::source, 0), ConfigError);
}

TEST_CASE("inference bandwidth default") {
  RunConfig c;
  const double bw = inference_bandwidth(c);
  CHECK(bw == c.real("delta_v") + epsilon_schedule(int(c.integer("inst_selftrain_iters")),
                                                   int(c.integer("inst_selftrain_iters"))));
  CHECK(bw > 0.0);
  CHECK(bw < c.real("delta_d"));
  c.set("epsilon_schedule", "0");
  CHECK(inference_bandwidth(c) == c.real("delta_v"));
  c.set("bandwidth", "0.7");
  CHECK(inference_bandwidth(c) == 0.7);
}
