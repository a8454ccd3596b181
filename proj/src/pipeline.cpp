#include "pansel/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "pansel/netpbm.hpp"
#include "pansel/parallel.hpp"

namespace pansel {

namespace {

std::string indexed(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", prefix, i, ext);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& s, const std::string& what) {
  RunConfig tmp;
  tmp.set("class_set", s);
  try {
    return tmp.integers("class_set");
  } catch (const ConfigError&) {
    throw std::runtime_error("bad integer list in " + what + ": '" + s + "'");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<int> all_things() { return LabelSchema{}.thing_classes; }

std::vector<int> config_class_set(const RunConfig& cfg) {
  auto v = cfg.integers("class_set");
  for (int c : v)
    if (!schema::is_thing(c)) throw ConfigError("class_set entry " + std::to_string(c) + " is not a thing class");
  return v;
}

std::map<int, int> gt_instance_classes(const Scene& s) {
  std::map<int, int> m;
  for (std::size_t p = 0; p < s.instance.size(); ++p)
    if (s.instance.data[p] > 0) m.emplace(s.instance.data[p], s.semantic.data[p]);
  return m;
}

PanopticMask gt_panoptic(const Scene& s) {
  PanopticMask gt(s.semantic.width, s.semantic.height);
  gt.classes = s.semantic;
  gt.instances = s.instance;
  return gt;
}

}  // namespace

int config_threads(const RunConfig& cfg) { return resolve_threads(int(cfg.integer("threads"))); }

DomainShift domain_shift(const RunConfig& cfg) {
  DomainShift s;
  s.hue_rotation = cfg.real("hue_rotation");
  s.noise_sigma = cfg.real("noise_sigma");
  s.scale_factor = cfg.real("scale_factor");
  s.texture_toggle = cfg.flag("texture_toggle");
  return s;
}

SceneSpec scene_spec(const RunConfig& cfg, Domain domain, std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.width = spec.height = int(cfg.integer("image_size"));
  if (spec.width < 32) throw ConfigError("image_size must be at least 32");
  spec.domain = domain;
  spec.shift = domain_shift(cfg);
  return spec;
}

nn::NetConfig net_config(const RunConfig& cfg) {
  nn::NetConfig n;
  n.depth = int(cfg.integer("depth"));
  n.base_channels = int(cfg.integer("base_channels"));
  n.embedding_dim = int(cfg.integer("embedding_dim"));
  n.dilated_bottleneck = cfg.flag("dilated_bottleneck");
  if (n.depth < 1 || n.base_channels < 1 || n.embedding_dim < 1)
    throw ConfigError("depth, base_channels and embedding_dim must be positive");
  return n;
}

static nn::SgdConfig sgd_config(const RunConfig& cfg, const char* lr_key) {
  nn::SgdConfig s;
  s.lr = cfg.real(lr_key);
  s.momentum = cfg.real("momentum");
  s.weight_decay = cfg.real("weight_decay");
  s.poly_power = cfg.real("poly_power");
  if (s.lr <= 0) throw ConfigError(std::string(lr_key) + " must be positive");
  return s;
}

SemanticTrainConfig semantic_config(const RunConfig& cfg, bool selftrain) {
  SemanticTrainConfig c;
  c.iters = int(cfg.integer(selftrain ? "sem_selftrain_iters" : "sem_baseline_iters"));
  c.batch = int(cfg.integer("sem_batch"));
  c.source_batch = int(cfg.integer("source_batch"));
  c.target_batch = int(cfg.integer("target_batch"));
  c.sgd = sgd_config(cfg, selftrain ? "sem_selftrain_lr" : "sem_baseline_lr");
  c.fusion.crop_scales = cfg.reals("fusion_scales");
  c.fusion.flips = cfg.flag("fusion_flips");
  c.fusion.samples = int(cfg.integer("fusion_samples"));
  c.threshold.quantile = cfg.real("thresh_quantile");
  c.threshold.floor = cfg.real("thresh_floor");
  c.threshold.cap = cfg.real("thresh_cap");
  c.threshold.rare_exponent = cfg.real("rare_exponent");
  c.prior_momentum = cfg.real("prior_momentum");
  c.focal_lambda = cfg.real("focal_lambda");
  c.threads = config_threads(cfg);
  if (c.iters < 0 || c.batch < 1 || c.source_batch < 0 || c.target_batch < 1)
    throw ConfigError("semantic iteration and batch settings out of range");
  if (c.fusion.crop_scales.empty()) throw ConfigError("fusion_scales must not be empty");
  const std::string guide = cfg.str("semantic_guide");
  if (guide != "none" && guide != "gt") throw ConfigError("semantic_guide must be none or gt");
  return c;
}

InstanceTrainConfig instance_config(const RunConfig& cfg, bool selftrain) {
  InstanceTrainConfig c;
  c.iters = int(cfg.integer(selftrain ? "inst_selftrain_iters" : "inst_baseline_iters"));
  c.batch = int(cfg.integer("inst_batch"));
  c.mix_percent = selftrain ? int(cfg.integer("mix")) : 100;
  c.classes = all_things();
  c.margins.delta_v = cfg.real("delta_v");
  c.margins.delta_d = cfg.real("delta_d");
  c.weights.alpha = cfg.real("alpha");
  c.weights.beta = cfg.real("beta");
  c.weights.gamma = cfg.real("gamma");
  c.weights.lambda_obj = cfg.real("lambda_obj");
  c.weights.delta_cons = cfg.real("delta_cons");
  c.epsilon_schedule = cfg.flag("epsilon_schedule");
  c.sgd = sgd_config(cfg, selftrain ? "inst_selftrain_lr" : "inst_baseline_lr");
  c.pseudo.min_size = int(cfg.integer("min_size"));
  c.pseudo.delta_d = c.margins.delta_d;
  c.pseudo.max_seeds = int(cfg.integer("max_seeds"));
  c.pseudo.stability_iou = cfg.real("stability_iou");
  c.threads = c.pseudo.threads = config_threads(cfg);
  if (c.iters < 0 || c.batch < 1) throw ConfigError("instance iteration and batch settings out of range");
  if (c.mix_percent < 0 || c.mix_percent > 100) throw ConfigError("mix must lie in [0, 100]");
  try {
    c.margins.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

double inference_bandwidth(const RunConfig& cfg) {
  const double bw = cfg.real("bandwidth");
  if (bw < 0) throw ConfigError("bandwidth must be non-negative");
  if (bw > 0) return bw;
  double v = cfg.real("delta_v");
  if (cfg.flag("epsilon_schedule")) {
    const int iters = int(cfg.integer("inst_selftrain_iters"));
    v += epsilon_schedule(iters, iters);
  }
  return v;
}

InferenceConfig inference_config(const RunConfig& cfg) {
  InferenceConfig ic;
  ic.clustering = instance_config(cfg, false).pseudo;
  ic.clustering.bandwidth = inference_bandwidth(cfg);
  ic.clustering.seed = mix_seed(std::uint64_t(cfg.integer("seed")), 30);
  ic.morphology = cfg.flag("morphology");
  ic.open_radius = int(cfg.integer("open_radius"));
  ic.close_radius = int(cfg.integer("close_radius"));
  if (ic.open_radius < 0 || ic.close_radius < 0) throw ConfigError("morphology radii must be non-negative");
  return ic;
}

Workflow config_workflow(const RunConfig& cfg) { return parse_workflow(cfg.str("workflow")); }

std::vector<Image> read_images(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<Image> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(netpbm::read_ppm(dir / e.image));
  return out;
}

void write_model_list(const fs::path& dir, const std::vector<InstanceModelEntry>& entries) {
  ensure_dir(dir);
  std::ofstream os(dir / "models.txt");
  if (!os) throw std::runtime_error("cannot write " + (dir / "models.txt").string());
  for (const auto& e : entries) os << e.name << ' ' << join_ints(e.classes) << ' ' << e.checkpoint.string() << '\n';
}

std::vector<InstanceModelEntry> read_model_list(const fs::path& dir) {
  const fs::path p = dir / "models.txt";
  note_read(p);
  std::ifstream is(p);
  if (!is) throw std::runtime_error("missing model list: " + p.string());
  std::vector<InstanceModelEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, classes, ckpt;
    if (!(ls >> name >> classes >> ckpt)) throw std::runtime_error("malformed line in " + p.string() + ": " + line);
    out.push_back({name, parse_ints(classes, p.string()), ckpt});
  }
  if (out.empty()) throw std::runtime_error("empty model list: " + p.string());
  return out;
}

LoadedInstanceModels load_instance_models(const fs::path& dir) {
  LoadedInstanceModels out;
  const auto entries = read_model_list(dir);
  out.params.reserve(entries.size());
  for (const auto& e : entries) out.params.push_back(nn::load_checkpoint<float>(dir / e.checkpoint));
  for (std::size_t i = 0; i < entries.size(); ++i) out.models.push_back({entries[i].classes, &out.params[i]});
  return out;
}

void write_schema(const fs::path& path, const LabelSchema& schema) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "stuff = " << join_ints(schema.stuff_classes) << "\nthings = " << join_ints(schema.thing_classes) << '\n';
}

LabelSchema read_schema(const fs::path& path) {
  note_read(path);
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read schema " + path.string());
  LabelSchema s;
  s.stuff_classes.clear();
  s.thing_classes.clear();
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::vector<int> v;
    try {
      v = parse_ints(line.substr(eq + 1), path.string());
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (key == "stuff") s.stuff_classes = v;
    else if (key == "things") s.thing_classes = v;
    else throw ConfigError("unknown schema key '" + key + "' in " + path.string());
  }
  if (s.num_classes() == 0) throw ConfigError("schema " + path.string() + " lists no classes");
  return s;
}

void infer_directory(const nn::UNet<float>& net, const nn::ParamStore<float>& sem_params,
                     const std::vector<InstanceModel>& models, const fs::path& images_dir, const fs::path& out,
                     const PseudoLabelConfig& clustering, int threads) {
  const auto images = read_images(images_dir);
  ensure_dir(out);
  PseudoLabelConfig pc = clustering;
  pc.threads = 1;
  std::vector<std::string> lines(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const SemanticMask sem = predict_semantic(net, sem_params, images[i]);
    const InstancePseudoLabels inst = predict_instances(net, models, images[i], sem, pc);
    netpbm::write_pgm8(out / indexed("sem", i, "pgm"), sem);
    netpbm::write_pgm16(out / indexed("inst", i, "pgm"), inst.mask);
    std::string line = std::to_string(i);
    for (int k = 0; k < inst.count(); ++k) line += ' ' + std::to_string(k + 1) + ':' + std::to_string(inst.classes[k]);
    lines[i] = line;
  });
  std::ofstream os(out / "instances.txt");
  for (const auto& l : lines) os << l << '\n';
  if (!os) throw std::runtime_error("cannot write " + (out / "instances.txt").string());
}

void fuse_directory(const fs::path& sem_dir, const fs::path& inst_dir, const fs::path& out,
                    const InferenceConfig& cfg, int threads) {
  std::size_t n = 0;
  while (fs::exists(sem_dir / indexed("sem", n, "pgm"))) ++n;
  if (n == 0) throw std::runtime_error("no sem_*.pgm files in " + sem_dir.string());
  ensure_dir(out);
  const bool same = fs::equivalent(sem_dir, out);
  parallel_for(n, threads, [&](std::size_t i) {
    const SemanticMask sem = netpbm::read_pgm8(sem_dir / indexed("sem", i, "pgm"));
    const InstanceMask inst = netpbm::read_pgm16(inst_dir / indexed("inst", i, "pgm"));
    if (!sem.same_shape(inst)) throw std::runtime_error("size mismatch at image " + std::to_string(i));
    const InferenceResult r = assemble_panoptic(sem, inst, cfg);
    netpbm::write_pgm16(out / indexed("pan", i, "pgm"), encode_panoptic(r.panoptic));
    if (!same) netpbm::write_pgm8(out / indexed("sem", i, "pgm"), sem);
  });
}

MetricReport evaluate_directory(const fs::path& pred_dir, const fs::path& gt_dir, const LabelSchema& schema,
                                const std::vector<std::string>& metrics) {
  std::set<std::string> want(metrics.begin(), metrics.end());
  for (const auto& m : want)
    if (m != "miou" && m != "map" && m != "pq" && m != "pqplus")
      throw ConfigError("unknown metric family '" + m + "' (expected miou, map, pq, pqplus)");
  const auto gt = read_dataset(gt_dir);
  IouAccumulator iou(schema.num_classes());
  ApAccumulator ap(schema.thing_classes);
  PanopticAccumulator pan(schema);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (want.count("miou")) iou.add(netpbm::read_pgm8(pred_dir / indexed("sem", i, "pgm")), gt[i].semantic);
    if (want.count("map") || want.count("pq") || want.count("pqplus")) {
      const PanopticMask pred = decode_panoptic(netpbm::read_pgm16(pred_dir / indexed("pan", i, "pgm")));
      if (!pred.classes.same_shape(gt[i].semantic))
        throw std::runtime_error("prediction size mismatch at image " + std::to_string(i));
      if (want.count("map")) {
        std::map<int, int> cls;
        for (std::size_t p = 0; p < pred.instances.size(); ++p)
          if (pred.instances.data[p] > 0) cls.emplace(pred.instances.data[p], pred.classes.data[p]);
        ap.add(pred.instances, cls, gt[i].instance, gt[i].semantic);
      }
      pan.add(pred, gt_panoptic(gt[i]));
    }
  }
  MetricReport r;
  if (want.count("miou")) r.append(iou.report());
  if (want.count("map")) r.append(ap.report());
  if (want.count("pq") || want.count("pqplus")) {
    for (const auto& row : pan.report().rows) {
      const bool plus = row.metric == "pq_dagger" || row.metric == "pqplus";
      if (plus ? want.count("pqplus") : want.count("pq")) r.add(row);
    }
  }
  return r;
}

void write_report(const fs::path& path, const MetricReport& report) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  report.write_csv(os);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<WorkflowSplit> config_splits(const RunConfig& cfg) {
  return workflow_splits(config_workflow(cfg), config_class_set(cfg));
}

namespace {
std::vector<int> union_classes(const std::vector<WorkflowSplit>& splits) {
  std::set<int> s;
  for (const auto& sp : splits) s.insert(sp.classes.begin(), sp.classes.end());
  return {s.begin(), s.end()};
}

std::ofstream open_log(const fs::path& p) {
  ensure_dir(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}
}  // namespace

void train_instance_models(const nn::UNet<float>& net, const RunConfig& cfg, const std::vector<Scene>& source,
                           const fs::path& dir, std::uint64_t seed, const fs::path& log_dir) {
  const auto splits = config_splits(cfg);
  ensure_dir(dir);
  std::vector<InstanceModelEntry> entries;
  auto train_one = [&](const std::string& name, const std::vector<int>& classes, std::uint64_t stream) {
    InstanceTrainConfig ic = instance_config(cfg, false);
    ic.classes = classes;
    ic.seed = mix_seed(mix_seed(seed, 21), stream);
    auto params = net.init_params(mix_seed(mix_seed(seed, 20), stream));
    std::ofstream log;
    if (!log_dir.empty()) {
      log = open_log(log_dir / ("inst_baseline_" + name + ".csv"));
      ic.log = &log;
    }
    train_instance_baseline(net, params, source, ic);
    nn::save_checkpoint(dir / (name + ".ckpt"), params);
    entries.push_back({name, classes, name + ".ckpt"});
  };
  if (!splits.empty() && splits.front().own_baseline) {
    for (std::size_t i = 0; i < splits.size(); ++i) train_one(splits[i].name, splits[i].classes, i);
  } else {
    train_one("shared", union_classes(splits), 0);
  }
  write_model_list(dir, entries);
}

void selftrain_instance_models(const nn::UNet<float>& net, const RunConfig& cfg, const std::vector<Scene>& source,
                               const std::vector<Scene>& target, const nn::ParamStore<float>& sem_params,
                               const fs::path& base_dir, const fs::path& dir, std::uint64_t seed,
                               const fs::path& log_dir, std::ostream* progress) {
  const int threads = config_threads(cfg);
  std::vector<Image> images;
  for (const auto& s : target) images.push_back(s.image);
  std::vector<SemanticMask> target_sem(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { target_sem[i] = predict_semantic(net, sem_params, images[i]); });

  const auto base_entries = read_model_list(base_dir);
  const auto splits = config_splits(cfg);
  ensure_dir(dir);
  std::vector<InstanceModelEntry> entries;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& split = splits[i];
    const InstanceModelEntry* init = nullptr;
    for (const auto& e : base_entries) {
      std::set<int> owned(e.classes.begin(), e.classes.end());
      bool covers = true;
      for (int c : split.classes) covers = covers && owned.count(c);
      if (covers) {
        init = &e;
        break;
      }
    }
    if (!init) throw std::runtime_error("no baseline instance model covers split " + split.name);
    auto student = nn::load_checkpoint<float>(base_dir / init->checkpoint);
    nn::TeacherStore<float> teacher{student, cfg.real("teacher_momentum"), int(cfg.integer("teacher_period"))};
    if (teacher.period < 1) throw ConfigError("teacher_period must be positive");
    InstanceTrainConfig ic = instance_config(cfg, true);
    ic.classes = split.classes;
    ic.seed = mix_seed(mix_seed(seed, 22), i);
    ic.pseudo.seed = mix_seed(mix_seed(seed, 23), i);
    std::ofstream log;
    if (!log_dir.empty()) {
      log = open_log(log_dir / ("inst_selftrain_" + split.name + ".csv"));
      ic.log = &log;
    }
    const auto stats = selftrain_instance(net, student, teacher, source, images, target_sem, &target, ic);
    if (progress)
      *progress << "  split " << split.name << ": pseudo-label TP " << stats.true_positives << " FP "
                << stats.false_positives << " empty " << stats.empty_pseudo << std::endl;
    nn::save_checkpoint(dir / (split.name + ".ckpt"), student);
    entries.push_back({split.name, split.classes, split.name + ".ckpt"});
  }
  write_model_list(dir, entries);
}

const std::vector<StageSpec>& pipeline_stages() {
  static const std::vector<StageSpec> stages{
      {"gen-data", {}},
      {"train-sem", {"data/source"}},
      {"selftrain-sem", {"data/source", "data/target_train", "models/sem_baseline.ckpt"}},
      {"train-inst", {"data/source"}},
      {"selftrain-inst", {"data/source", "data/target_train", "models/sem_selftrain.ckpt", "models/inst_baseline"}},
      {"infer",
       {"data/target_val/manifest.txt", "data/target_val/img_", "models/sem_baseline.ckpt",
        "models/sem_selftrain.ckpt", "models/inst_baseline", "models/inst_selftrain"}},
      {"fuse", {"pred"}},
      {"eval", {"pred", "data/target_val", "schema.txt"}},
  };
  return stages;
}

namespace {

struct RunContext {
  const RunConfig& cfg;
  fs::path out;
  std::uint64_t seed;
  int threads;
  nn::UNet<float> net;
  std::ostream* progress;

  fs::path path(const std::string& rel) const { return out / rel; }
};

void stage_gen_data(RunContext& rc) {
  const auto& c = rc.cfg;
  write_dataset(rc.path("data/source"), int(c.integer("n_source")), scene_spec(c, Domain::source, mix_seed(rc.seed, 1)));
  write_dataset(rc.path("data/target_train"), int(c.integer("n_target")),
                scene_spec(c, Domain::target, mix_seed(rc.seed, 2)));
  write_dataset(rc.path("data/target_val"), int(c.integer("n_val")), scene_spec(c, Domain::target, mix_seed(rc.seed, 3)));
  write_schema(rc.path("schema.txt"), LabelSchema{});
}

void stage_train_sem(RunContext& rc) {
  const auto source = read_dataset(rc.path("data/source"));
  auto params = rc.net.init_params(mix_seed(rc.seed, 10));
  SemanticTrainConfig sc = semantic_config(rc.cfg, false);
  sc.seed = mix_seed(rc.seed, 11);
  auto log = open_log(rc.path("logs/sem_baseline.csv"));
  sc.log = &log;
  train_semantic_baseline(rc.net, params, source, sc);
  ensure_dir(rc.path("models"));
  nn::save_checkpoint(rc.path("models/sem_baseline.ckpt"), params);
}

void stage_selftrain_sem(RunContext& rc) {
  const auto source = read_dataset(rc.path("data/source"));
  SemanticTrainConfig sc = semantic_config(rc.cfg, true);
  sc.seed = mix_seed(rc.seed, 12);
  std::vector<Image> target;
  std::vector<InstanceMask> guide;
  std::vector<std::map<int, int>> guide_classes;
  if (rc.cfg.str("semantic_guide") == "gt") {
    for (const auto& s : read_dataset(rc.path("data/target_train"))) {
      target.push_back(s.image);
      guide.push_back(s.instance);
      guide_classes.push_back(gt_instance_classes(s));
    }
    sc.guide_instances = &guide;
    sc.guide_classes = &guide_classes;
  } else {
    target = read_images(rc.path("data/target_train"));
  }
  auto student = nn::load_checkpoint<float>(rc.path("models/sem_baseline.ckpt"));
  nn::TeacherStore<float> teacher{student, rc.cfg.real("teacher_momentum"), int(rc.cfg.integer("teacher_period"))};
  if (teacher.period < 1) throw ConfigError("teacher_period must be positive");
  auto log = open_log(rc.path("logs/sem_selftrain.csv"));
  sc.log = &log;
  selftrain_semantic(rc.net, student, teacher, source, target, sc);
  nn::save_checkpoint(rc.path("models/sem_selftrain.ckpt"), student);
  nn::save_checkpoint(rc.path("models/sem_teacher.ckpt"), teacher.params);
}

void stage_train_inst(RunContext& rc) {
  train_instance_models(rc.net, rc.cfg, read_dataset(rc.path("data/source")), rc.path("models/inst_baseline"),
                        rc.seed, rc.path("logs"));
}

void stage_selftrain_inst(RunContext& rc) {
  const auto source = read_dataset(rc.path("data/source"));
  const auto target_gt = read_dataset(rc.path("data/target_train"));
  const auto sem_params = nn::load_checkpoint<float>(rc.path("models/sem_selftrain.ckpt"));
  selftrain_instance_models(rc.net, rc.cfg, source, target_gt, sem_params, rc.path("models/inst_baseline"),
                            rc.path("models/inst_selftrain"), rc.seed, rc.path("logs"), rc.progress);
}

// Prediction systems: semantic checkpoint, instance model directory, output.
struct System {
  const char* sem;
  const char* inst;
  const char* pred;
  const char* report;
};
const System kSystems[] = {
    {"models/sem_selftrain.ckpt", "models/inst_selftrain", "pred/selftrain", "report.csv"},
    {"models/sem_baseline.ckpt", "models/inst_baseline", "pred/baseline", "report_baseline.csv"},
    {"models/sem_selftrain.ckpt", "models/inst_baseline", "pred/inst_baseline", "report_inst_baseline.csv"},
};

void stage_infer(RunContext& rc) {
  const InferenceConfig ic = inference_config(rc.cfg);
  for (const auto& sys : kSystems) {
    const auto sem = nn::load_checkpoint<float>(rc.path(sys.sem));
    const auto inst = load_instance_models(rc.path(sys.inst));
    infer_directory(rc.net, sem, inst.models, rc.path("data/target_val"), rc.path(sys.pred), ic.clustering,
                    rc.threads);
  }
}

void stage_fuse(RunContext& rc) {
  const InferenceConfig ic = inference_config(rc.cfg);
  for (const auto& sys : kSystems) fuse_directory(rc.path(sys.pred), rc.path(sys.pred), rc.path(sys.pred), ic, rc.threads);
}

void stage_eval(RunContext& rc) {
  const LabelSchema schema = read_schema(rc.path("schema.txt"));
  for (const auto& sys : kSystems) {
    const auto report =
        evaluate_directory(rc.path(sys.pred), rc.path("data/target_val"), schema, {"miou", "map", "pq", "pqplus"});
    write_report(rc.path(sys.report), report);
  }
}

bool within(const fs::path& p, const fs::path& root, const std::string& prefix) {
  // Component-wise prefix test; a trailing partial component ("img_") matches file-name prefixes.
  const fs::path rel = p.lexically_normal().lexically_relative(root.lexically_normal());
  const fs::path pre(prefix);
  auto a = rel.begin();
  for (auto b = pre.begin(); b != pre.end(); ++b, ++a) {
    if (a == rel.end()) return false;
    const std::string as = a->string(), bs = b->string();
    if (std::next(b) == pre.end()) return as == bs || (bs.back() == '_' && as.rfind(bs, 0) == 0);
    if (as != bs) return false;
  }
  return true;
}

std::string lock_key_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.set("stages", "all");
  c.set("threads", "0");
  c.set("out", "run");
  return c.text();
}

}  // namespace

void run_pipeline(const RunConfig& cfg, std::ostream* progress) {
  const fs::path out = cfg.str("out");
  if (out.empty()) throw ConfigError("out must name a directory");
  std::vector<std::string> requested;
  {
    std::stringstream ss(cfg.str("stages"));
    std::string s;
    while (std::getline(ss, s, ',')) {
      if (s.empty()) continue;
      if (s == "all") {
        for (const auto& st : pipeline_stages()) requested.push_back(st.name);
        continue;
      }
      bool ok = false;
      for (const auto& st : pipeline_stages()) ok = ok || st.name == s;
      if (!ok) throw ConfigError("unknown stage '" + s + "'");
      requested.push_back(s);
    }
    if (requested.empty()) throw ConfigError("no stages selected");
  }

  // Validate every derived configuration before touching the disk.
  semantic_config(cfg, false);
  semantic_config(cfg, true);
  instance_config(cfg, true);
  inference_config(cfg);
  config_splits(cfg);
  scene_spec(cfg, Domain::source, 0);
  for (const char* k : {"n_source", "n_target", "n_val"})
    if (cfg.integer(k) < 1) throw ConfigError(std::string(k) + " must be positive");

  ensure_dir(out);
  const fs::path lock = out / "config.lock";
  if (fs::exists(lock)) {
    RunConfig previous;
    try {
      previous = RunConfig::from_file(lock);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("unreadable config.lock: ") + e.what());
    }
    if (lock_key_text(previous) != lock_key_text(cfg))
      throw ConfigError("configuration differs from " + lock.string() + "; use a fresh output directory");
  }
  {
    std::ofstream os(lock);
    cfg.write(os);
    if (!os) throw std::runtime_error("cannot write " + lock.string());
  }

  RunContext rc{cfg, out, std::uint64_t(cfg.integer("seed")), config_threads(cfg), nn::UNet<float>(net_config(cfg)),
                progress};
  const fs::path markers = out / ".done";
  ensure_dir(markers);

  using StageFn = void (*)(RunContext&);
  const std::map<std::string, StageFn> fns{
      {"gen-data", stage_gen_data}, {"train-sem", stage_train_sem},   {"selftrain-sem", stage_selftrain_sem},
      {"train-inst", stage_train_inst}, {"selftrain-inst", stage_selftrain_inst}, {"infer", stage_infer},
      {"fuse", stage_fuse},         {"eval", stage_eval}};

  for (const auto& st : pipeline_stages()) {
    if (std::find(requested.begin(), requested.end(), st.name) == requested.end()) continue;
    if (fs::exists(markers / st.name)) {
      if (progress) *progress << "[" << st.name << "] already complete, skipping" << std::endl;
      continue;
    }
    if (progress) *progress << "[" << st.name << "] running" << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    set_read_observer([&](const fs::path& p) {
      for (const auto& in : st.inputs)
        if (within(p, out, in)) return;
      throw ContractViolation("stage " + st.name + " read undeclared input " + p.string());
    });
    try {
      fns.at(st.name)(rc);
    } catch (const ConfigError& e) {
      set_read_observer(nullptr);
      throw ConfigError("stage " + st.name + ": " + e.what());
    } catch (const ContractViolation& e) {
      set_read_observer(nullptr);
      throw ContractViolation("stage " + st.name + ": " + e.what());
    } catch (const NumericalError& e) {
      set_read_observer(nullptr);
      throw NumericalError("stage " + st.name + ": " + e.what());
    } catch (const std::exception& e) {
      set_read_observer(nullptr);
      throw std::runtime_error("stage " + st.name + ": " + e.what());
    }
    set_read_observer(nullptr);
    std::ofstream(markers / st.name) << "done\n";
    if (progress)
      *progress << "[" << st.name << "] done in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s" << std::endl;
  }
}

}  // namespace pansel
