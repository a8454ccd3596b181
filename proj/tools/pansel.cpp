#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pansel/cluster.hpp"
#include "pansel/gradcheck.hpp"
#include "pansel/pipeline.hpp"

using namespace pansel;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kConfig = 1;
constexpr int kRuntime = 2;
constexpr int kVerification = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override one configuration key (key=value), repeatable");
  sub->add_option("--threads", c.threads, "worker threads (default: PANSEL_THREADS, then 1)");
  sub->add_option("--seed", c.seed, "random seed");
}

RunConfig build_config(const Common& c) {
  RunConfig cfg = c.config_file.empty() ? RunConfig{} : RunConfig::from_file(c.config_file);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  if (c.threads > 0) cfg.set("threads", std::to_string(c.threads));
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  return cfg;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Planted Gaussian blobs on a ring for the clustering benchmark.
PointSet planted_blobs(int n, int dim, int k, double sigma, double radius, std::uint64_t seed) {
  Rng rng(seed);
  PointSet pts(dim);
  std::vector<double> p(dim);
  for (int i = 0; i < n; ++i) {
    const int c = i % k;
    const double a = 2.0 * 3.14159265358979323846 * c / k;
    for (int d = 0; d < dim; ++d) p[d] = rng.normal(0.0, sigma);
    p[0] += radius * std::cos(a);
    if (dim > 1) p[1] += radius * std::sin(a);
    pts.push(p.data());
  }
  return pts;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"pansel: self-training for panoptic segmentation on synthetic scenes"};
  app.require_subcommand(1);
  int exit_code = kOk;

  // gen-data
  Common gd_common;
  std::string gd_out, gd_domain = "source";
  int gd_n = 10;
  auto* gd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gd, gd_common);
  gd->add_option("--out", gd_out, "output directory")->required();
  gd->add_option("--n", gd_n, "number of scenes")->check(CLI::NonNegativeNumber);
  gd->add_option("--domain", gd_domain, "source or target");
  gd->callback([&] {
    const RunConfig cfg = build_config(gd_common);
    const Domain d = parse_domain(gd_domain);
    const auto m = write_dataset(gd_out, gd_n, scene_spec(cfg, d, std::uint64_t(cfg.integer("seed"))));
    std::cout << "wrote " << m.count << " " << to_string(d) << " scenes to " << gd_out << "\n";
  });

  // train-sem
  Common ts_common;
  std::string ts_mode = "baseline", ts_source, ts_target, ts_out, ts_init, ts_log, ts_teacher_out;
  std::optional<int> ts_iters;
  bool ts_guide_gt = false;
  auto* ts = app.add_subcommand("train-sem", "train the semantic branch");
  add_common(ts, ts_common);
  ts->add_option("--mode", ts_mode, "baseline or selftrain")->check(CLI::IsMember({"baseline", "selftrain"}));
  ts->add_option("--source", ts_source, "labelled source dataset")->required();
  ts->add_option("--target", ts_target, "unlabelled target dataset (selftrain)");
  ts->add_option("--iters", ts_iters, "iterations");
  ts->add_option("--init", ts_init, "initial checkpoint (required for selftrain)");
  ts->add_option("--out", ts_out, "output checkpoint")->required();
  ts->add_option("--teacher-out", ts_teacher_out, "write the momentum teacher here (selftrain)");
  ts->add_option("--log", ts_log, "per-iteration CSV log");
  ts->add_flag("--guide-gt", ts_guide_gt, "overlay target ground-truth instances on the pseudo-labels");
  ts->callback([&] {
    const RunConfig cfg = build_config(ts_common);
    const bool selftrain = ts_mode == "selftrain";
    SemanticTrainConfig sc = semantic_config(cfg, selftrain);
    if (ts_iters) sc.iters = *ts_iters;
    const std::uint64_t seed = std::uint64_t(cfg.integer("seed"));
    sc.seed = mix_seed(seed, selftrain ? 12 : 11);
    const nn::UNet<float> net(net_config(cfg));
    const auto source = read_dataset(ts_source);
    std::ofstream log;
    if (!ts_log.empty()) {
      log.open(ts_log);
      if (!log) throw std::runtime_error("cannot write " + ts_log);
      sc.log = &log;
    }
    if (!selftrain) {
      auto params = ts_init.empty() ? net.init_params(mix_seed(seed, 10)) : nn::load_checkpoint<float>(ts_init);
      train_semantic_baseline(net, params, source, sc);
      nn::save_checkpoint(ts_out, params);
      return;
    }
    if (ts_init.empty() || ts_target.empty()) throw ConfigError("selftrain needs --init and --target");
    std::vector<Image> target;
    std::vector<InstanceMask> guide;
    std::vector<std::map<int, int>> guide_classes;
    if (ts_guide_gt) {
      for (const auto& s : read_dataset(ts_target)) {
        target.push_back(s.image);
        guide.push_back(s.instance);
        std::map<int, int> m;
        for (std::size_t p = 0; p < s.instance.size(); ++p)
          if (s.instance.data[p] > 0) m.emplace(s.instance.data[p], s.semantic.data[p]);
        guide_classes.push_back(std::move(m));
      }
      sc.guide_instances = &guide;
      sc.guide_classes = &guide_classes;
    } else {
      target = read_images(ts_target);
    }
    auto student = nn::load_checkpoint<float>(ts_init);
    nn::TeacherStore<float> teacher{student, cfg.real("teacher_momentum"), int(cfg.integer("teacher_period"))};
    selftrain_semantic(net, student, teacher, source, target, sc);
    nn::save_checkpoint(ts_out, student);
    if (!ts_teacher_out.empty()) nn::save_checkpoint(ts_teacher_out, teacher.params);
  });

  // train-inst
  Common ti_common;
  std::string ti_mode = "baseline", ti_source, ti_target, ti_sem, ti_init, ti_out, ti_log_dir;
  std::optional<std::string> ti_workflow, ti_class_set;
  std::optional<int> ti_mix, ti_iters;
  std::optional<double> ti_delta_cons;
  auto* ti = app.add_subcommand("train-inst", "train instance embedding models");
  add_common(ti, ti_common);
  ti->add_option("--mode", ti_mode, "baseline or selftrain")->check(CLI::IsMember({"baseline", "selftrain"}));
  ti->add_option("--workflow", ti_workflow, "all, icm, base or ccm");
  ti->add_option("--class-set", ti_class_set, "comma-separated thing classes (icm)");
  ti->add_option("--mix", ti_mix, "percent of each self-train batch drawn from source")
      ->check(CLI::IsMember({0, 25, 50, 75}));
  ti->add_option("--delta-cons", ti_delta_cons, "consistency loss weight");
  ti->add_option("--iters", ti_iters, "iterations per run");
  ti->add_option("--source", ti_source, "labelled source dataset")->required();
  ti->add_option("--target", ti_target, "target dataset (selftrain; labels only feed the TP/FP log)");
  ti->add_option("--sem", ti_sem, "semantic checkpoint guiding target clustering (selftrain)");
  ti->add_option("--init", ti_init, "baseline model directory (selftrain)");
  ti->add_option("--out", ti_out, "output model directory")->required();
  ti->add_option("--log-dir", ti_log_dir, "directory for per-run CSV logs");
  ti->callback([&] {
    RunConfig cfg = build_config(ti_common);
    if (ti_workflow) cfg.set("workflow", *ti_workflow);
    if (ti_class_set) cfg.set("class_set", *ti_class_set);
    if (ti_mix) cfg.set("mix", std::to_string(*ti_mix));
    if (ti_delta_cons) cfg.set("delta_cons", std::to_string(*ti_delta_cons));
    const bool selftrain = ti_mode == "selftrain";
    if (ti_iters) cfg.set(selftrain ? "inst_selftrain_iters" : "inst_baseline_iters", std::to_string(*ti_iters));
    const nn::UNet<float> net(net_config(cfg));
    const std::uint64_t seed = std::uint64_t(cfg.integer("seed"));
    const auto source = read_dataset(ti_source);
    if (!selftrain) {
      train_instance_models(net, cfg, source, ti_out, seed, ti_log_dir);
      return;
    }
    if (ti_target.empty() || ti_sem.empty() || ti_init.empty())
      throw ConfigError("selftrain needs --target, --sem and --init");
    selftrain_instance_models(net, cfg, source, read_dataset(ti_target), nn::load_checkpoint<float>(ti_sem), ti_init,
                              ti_out, seed, ti_log_dir, &std::cout);
  });

  // infer
  Common in_common;
  std::string in_sem, in_inst, in_images, in_out;
  auto* in = app.add_subcommand("infer", "predict semantic and instance masks");
  add_common(in, in_common);
  in->add_option("--sem", in_sem, "semantic checkpoint")->required();
  in->add_option("--inst", in_inst, "instance model directory")->required();
  in->add_option("--images", in_images, "dataset directory")->required();
  in->add_option("--out", in_out, "prediction directory")->required();
  in->callback([&] {
    const RunConfig cfg = build_config(in_common);
    const nn::UNet<float> net(net_config(cfg));
    const auto sem = nn::load_checkpoint<float>(in_sem);
    const auto inst = load_instance_models(in_inst);
    infer_directory(net, sem, inst.models, in_images, in_out, inference_config(cfg).clustering, config_threads(cfg));
  });

  // fuse
  Common fu_common;
  std::string fu_sem, fu_inst, fu_out;
  bool fu_no_morph = false;
  auto* fu = app.add_subcommand("fuse", "relabel, clean up and fuse predictions into panoptic masks");
  add_common(fu, fu_common);
  fu->add_option("--sem", fu_sem, "directory with sem_*.pgm")->required();
  fu->add_option("--inst", fu_inst, "directory with inst_*.pgm")->required();
  fu->add_option("--out", fu_out, "output directory")->required();
  fu->add_flag("--no-morph", fu_no_morph, "skip morphological cleanup");
  fu->callback([&] {
    const RunConfig cfg = build_config(fu_common);
    InferenceConfig ic = inference_config(cfg);
    if (fu_no_morph) ic.morphology = false;
    fuse_directory(fu_sem, fu_inst, fu_out, ic, config_threads(cfg));
  });

  // eval
  std::string ev_pred, ev_gt, ev_schema, ev_metrics = "miou,map,pq,pqplus", ev_out = "report.csv";
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  ev->add_option("--pred", ev_pred, "prediction directory (sem_*.pgm, pan_*.pgm)")->required();
  ev->add_option("--gt", ev_gt, "ground-truth dataset directory")->required();
  ev->add_option("--schema", ev_schema, "label schema file");
  ev->add_option("--metrics", ev_metrics, "comma-separated: miou, map, pq, pqplus");
  ev->add_option("--out", ev_out, "report CSV");
  ev->callback([&] {
    const LabelSchema schema = ev_schema.empty() ? LabelSchema{} : read_schema(ev_schema);
    const auto report = evaluate_directory(ev_pred, ev_gt, schema, split_commas(ev_metrics));
    write_report(ev_out, report);
    report.write_csv(std::cout);
  });

  // bench-cluster
  int bc_points = 2000, bc_dim = 8, bc_k = 4, bc_agglo_points = 300, bc_max_threads = 4;
  double bc_bandwidth = 0.5;
  std::uint64_t bc_seed = 0;
  auto* bc = app.add_subcommand("bench-cluster", "time mean-shift, mean-shift+ and agglomerative clustering");
  bc->add_option("--points", bc_points, "points for mean-shift")->check(CLI::PositiveNumber);
  bc->add_option("--dim", bc_dim, "embedding dimension")->check(CLI::PositiveNumber);
  bc->add_option("--clusters", bc_k, "planted clusters")->check(CLI::PositiveNumber);
  bc->add_option("--agglo-points", bc_agglo_points, "points for agglomerative clustering")->check(CLI::PositiveNumber);
  bc->add_option("--bandwidth", bc_bandwidth, "mean-shift bandwidth")->check(CLI::PositiveNumber);
  bc->add_option("--max-threads", bc_max_threads, "largest thread count to time")->check(CLI::PositiveNumber);
  bc->add_option("--seed", bc_seed, "random seed");
  bc->callback([&] {
    const PointSet pts = planted_blobs(bc_points, bc_dim, bc_k, 0.1, 3.0, bc_seed);
    MeanShiftOptions opt;
    opt.bandwidth = bc_bandwidth;
    std::cout << "method,points,threads,seconds,clusters,iterations\n" << std::fixed << std::setprecision(4);
    auto t0 = std::chrono::steady_clock::now();
    const ClusterResult serial = mean_shift(pts, opt);
    std::cout << "mean_shift," << bc_points << ",1," << seconds_since(t0) << ',' << serial.num_clusters() << ','
              << serial.iterations << '\n';
    const ClusterResult reference = merge_and_filter(serial, pts, bc_bandwidth, 1);
    for (int t = 1; t <= bc_max_threads; t *= 2) {
      opt.threads = t;
      t0 = std::chrono::steady_clock::now();
      const ClusterResult plus = mean_shift_plus(pts, opt, bc_bandwidth, 1);
      std::cout << "mean_shift_plus," << bc_points << ',' << t << ',' << seconds_since(t0) << ','
                << plus.num_clusters() << ',' << plus.iterations << '\n';
      if (plus.labels != reference.labels) {
        std::cerr << "mean_shift_plus with " << t << " threads differs from serial mean-shift + merge/filter\n";
        exit_code = kVerification;
      }
    }
    const PointSet small = planted_blobs(bc_agglo_points, bc_dim, bc_k, 0.1, 3.0, bc_seed);
    t0 = std::chrono::steady_clock::now();
    const ClusterResult agg = agglomerative(small, AgglomerativeStop{std::nullopt, bc_k});
    std::cout << "agglomerative," << bc_agglo_points << ",1," << seconds_since(t0) << ',' << agg.num_clusters() << ','
              << agg.iterations << '\n';
  });

  // gradcheck
  GradcheckOptions gc_opt;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  gc->add_option("--tol", gc_opt.tolerance, "maximum relative error");
  gc->add_option("--step", gc_opt.step, "finite-difference step");
  gc->add_option("--coords", gc_opt.max_coords, "coordinates checked per array");
  gc->add_option("--seed", gc_opt.seed, "random seed");
  gc->callback([&] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto entries = run_gradcheck(gc_opt);
    bool ok = true;
    std::cout << std::left << std::setw(28) << "entry" << std::setw(14) << "max_rel_err" << std::setw(8) << "coords"
              << "result\n";
    for (const auto& e : entries) {
      std::cout << std::left << std::setw(28) << e.name << std::setw(14) << std::scientific << std::setprecision(3)
                << e.max_rel_error << std::setw(8) << e.checked << (e.passed ? "pass" : "FAIL") << '\n';
      ok = ok && e.passed;
    }
    std::cout << std::defaultfloat << entries.size() << " entries, " << (ok ? "all passed" : "FAILURES") << " in "
              << seconds_since(t0) << " s\n";
    if (!ok) exit_code = kVerification;
  });

  // run
  Common rn_common;
  std::string rn_out, rn_stages;
  auto* rn = app.add_subcommand("run", "run the full pipeline");
  add_common(rn, rn_common);
  rn->add_option("--out", rn_out, "run directory");
  rn->add_option("--stages", rn_stages, "comma-separated stages or 'all'");
  rn->callback([&] {
    RunConfig cfg = build_config(rn_common);
    if (!rn_out.empty()) cfg.set("out", rn_out);
    if (!rn_stages.empty()) cfg.set("stages", rn_stages);
    run_pipeline(cfg, &std::cerr);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ContractViolation& e) {
    std::cerr << "verification failure: " << e.what() << '\n';
    return kVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return exit_code;
}
