#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pansel/netpbm.hpp"
#include "pansel/pipeline.hpp"

using namespace pansel;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const fs::path& out) {
  RunConfig c;
  c.merge_text(
      "n_source = 4\nn_target = 3\nn_val = 2\nimage_size = 32\n"
      "depth = 2\nbase_channels = 4\nembedding_dim = 4\n"
      "sem_baseline_iters = 2\nsem_selftrain_iters = 2\nsem_batch = 2\n"
      "source_batch = 1\ntarget_batch = 1\nfusion_samples = 1\nteacher_period = 1\n"
      "inst_baseline_iters = 2\ninst_selftrain_iters = 2\ninst_batch = 2\n",
      "tiny");
  c.set("out", out.string());
  return c;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pansel_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen-data alone produces only datasets") {
  const fs::path out = fresh("gen");
  RunConfig c = tiny(out);
  c.set("stages", "gen-data");
  run_pipeline(c);
  CHECK(fs::exists(out / "data/source/manifest.txt"));
  CHECK(fs::exists(out / "data/target_train/manifest.txt"));
  CHECK(fs::exists(out / "data/target_val/manifest.txt"));
  CHECK_FALSE(fs::exists(out / "models"));
  CHECK_FALSE(fs::exists(out / "pred"));
  CHECK_FALSE(fs::exists(out / "report.csv"));
  fs::remove_all(out);
}

TEST_CASE("configuration changes against an existing lock are rejected") {
  const fs::path out = fresh("lock");
  RunConfig c = tiny(out);
  c.set("stages", "gen-data");
  run_pipeline(c);
  RunConfig d = c;
  d.set("seed", "1");
  CHECK_THROWS_AS(run_pipeline(d), ConfigError);
  RunConfig e = c;
  e.set("threads", "2");
  CHECK_NOTHROW(run_pipeline(e));
  fs::remove_all(out);
}

TEST_CASE("bad stage names and settings are rejected before any output") {
  const fs::path out = fresh("bad");
  RunConfig c = tiny(out);
  c.set("stages", "gen-data,trian-sem");
  CHECK_THROWS_AS(run_pipeline(c), ConfigError);
  c.set("stages", "all");
  c.set("mix", "120");
  CHECK_THROWS_AS(run_pipeline(c), ConfigError);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("read observer sees library reads") {
  const fs::path p = fs::temp_directory_path() / "pansel_observer.pgm";
  netpbm::write_pgm8(p, SemanticMask(2, 2, 1));
  std::vector<fs::path> seen;
  set_read_observer([&](const fs::path& q) { seen.push_back(q); });
  netpbm::read_pgm8(p);
  set_read_observer([](const fs::path& q) { throw ContractViolation("undeclared " + q.string()); });
  CHECK_THROWS_AS(netpbm::read_pgm8(p), ContractViolation);
  set_read_observer(nullptr);
  REQUIRE(seen.size() == 1);
  CHECK(seen[0] == p);
  fs::remove(p);
}

TEST_CASE("declared inputs") {
  const auto& st = pipeline_stages();
  REQUIRE(st.size() == 8);
  CHECK(st.front().name == "gen-data");
  CHECK(st.front().inputs.empty());
  CHECK(st.back().name == "eval");
  for (const auto& s : st)
    for (const auto& in : s.inputs) {
      const bool reads_predictions = in.rfind("pred", 0) == 0;
      CHECK((!reads_predictions || s.name == "fuse" || s.name == "eval"));
    }
}

TEST_CASE("full tiny run: audited, resumable, deterministic across threads") {
  const fs::path a = fresh("a"), b = fresh("b");
  RunConfig ca = tiny(a), cb = tiny(b);
  ca.set("threads", "1");
  cb.set("threads", "2");
  std::ostringstream log;
  run_pipeline(ca, &log);
  run_pipeline(cb);
  for (const char* f : {"report.csv", "report_baseline.csv", "report_inst_baseline.csv", "models/sem_baseline.ckpt",
                        "models/sem_selftrain.ckpt", "models/inst_baseline/models.txt",
                        "models/inst_selftrain/models.txt"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const std::string report = slurp(a / "report.csv");
  for (const char* m : {"\nmiou,", "\nmap50,", "\npq,", "\npqplus,"}) CHECK(report.find(m) != std::string::npos);

  std::ostringstream again;
  run_pipeline(ca, &again);
  CHECK(again.str().find("running") == std::string::npos);
  CHECK(slurp(a / "report.csv") == report);

  // Re-running only eval after dropping its marker reproduces the report.
  fs::remove(a / ".done/eval");
  RunConfig ev = ca;
  ev.set("stages", "eval");
  run_pipeline(ev);
  CHECK(slurp(a / "report.csv") == report);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("schema and model list files") {
  const fs::path dir = fresh("files");
  fs::create_directories(dir);
  LabelSchema s;
  write_schema(dir / "schema.txt", s);
  const LabelSchema back = read_schema(dir / "schema.txt");
  CHECK(back.stuff_classes == s.stuff_classes);
  CHECK(back.thing_classes == s.thing_classes);
  std::ofstream(dir / "bad.txt") << "stuf = 0\n";
  CHECK_THROWS_AS(read_schema(dir / "bad.txt"), ConfigError);

  write_model_list(dir, {{"vehicle", {3, 5}, "vehicle.ckpt"}, {"human", {4}, "human.ckpt"}});
  const auto models = read_model_list(dir);
  REQUIRE(models.size() == 2);
  CHECK(models[0].name == "vehicle");
  CHECK(models[0].classes == std::vector<int>{3, 5});
  CHECK(models[1].checkpoint == fs::path("human.ckpt"));
  fs::remove_all(dir);
}
