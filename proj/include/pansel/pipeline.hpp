#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pansel/config.hpp"
#include "pansel/infer.hpp"
#include "pansel/metrics.hpp"
#include "pansel/train.hpp"

namespace pansel {

namespace fs = std::filesystem;

// Translation of a RunConfig into module configurations.
int config_threads(const RunConfig& cfg);
DomainShift domain_shift(const RunConfig& cfg);
SceneSpec scene_spec(const RunConfig& cfg, Domain domain, std::uint64_t seed);
nn::NetConfig net_config(const RunConfig& cfg);
SemanticTrainConfig semantic_config(const RunConfig& cfg, bool selftrain);
InstanceTrainConfig instance_config(const RunConfig& cfg, bool selftrain);
/// Clustering bandwidth: the configured value, or delta_v + epsilon at the
/// end of the schedule when bandwidth = 0.
double inference_bandwidth(const RunConfig& cfg);
InferenceConfig inference_config(const RunConfig& cfg);
Workflow config_workflow(const RunConfig& cfg);

/// Images of a dataset directory, without reading any label files.
std::vector<Image> read_images(const fs::path& dir);

// Instance model directory: models.txt lists "name classes checkpoint" per line.
struct InstanceModelEntry {
  std::string name;
  std::vector<int> classes;
  fs::path checkpoint;  // relative to the directory
};
void write_model_list(const fs::path& dir, const std::vector<InstanceModelEntry>& entries);
std::vector<InstanceModelEntry> read_model_list(const fs::path& dir);

struct LoadedInstanceModels {
  std::vector<nn::ParamStore<float>> params;
  std::vector<InstanceModel> models;  // points into params
};
LoadedInstanceModels load_instance_models(const fs::path& dir);

// Schema file: "stuff = 0,1,2" and "things = 3,4,5".
void write_schema(const fs::path& path, const LabelSchema& schema);
LabelSchema read_schema(const fs::path& path);

/// Semantic and instance predictions for every image of `images_dir`:
/// sem_NNNNN.pgm, inst_NNNNN.pgm and instances.txt ("index id:class ...").
void infer_directory(const nn::UNet<float>& net, const nn::ParamStore<float>& sem_params,
                     const std::vector<InstanceModel>& models, const fs::path& images_dir, const fs::path& out,
                     const PseudoLabelConfig& clustering, int threads);

/// Relabel, cleanup and fusion of a prediction directory into pan_NNNNN.pgm.
/// The semantic maps are copied so `out` is self-contained for eval.
void fuse_directory(const fs::path& sem_dir, const fs::path& inst_dir, const fs::path& out,
                    const InferenceConfig& cfg, int threads);

/// Metric families: miou, map, pq, pqplus.
MetricReport evaluate_directory(const fs::path& pred_dir, const fs::path& gt_dir, const LabelSchema& schema,
                                const std::vector<std::string>& metrics);
void write_report(const fs::path& path, const MetricReport& report);

std::vector<WorkflowSplit> config_splits(const RunConfig& cfg);

/// Baseline instance models for the configured workflow: one shared model, or
/// one per split when the workflow trains category-specific baselines.
/// Writes checkpoints and models.txt into `dir`.
void train_instance_models(const nn::UNet<float>& net, const RunConfig& cfg, const std::vector<Scene>& source,
                           const fs::path& dir, std::uint64_t seed, const fs::path& log_dir = {});

/// Self-trains one model per workflow split, each initialised from the
/// baseline model in `base_dir` that owns its classes. Target labels feed
/// only the pseudo-label TP/FP log columns.
void selftrain_instance_models(const nn::UNet<float>& net, const RunConfig& cfg, const std::vector<Scene>& source,
                               const std::vector<Scene>& target, const nn::ParamStore<float>& sem_params,
                               const fs::path& base_dir, const fs::path& dir, std::uint64_t seed,
                               const fs::path& log_dir = {}, std::ostream* progress = nullptr);

struct StageSpec {
  std::string name;
  std::vector<std::string> inputs;  // paths relative to the run directory
};
/// Stages in execution order with the files and directories each may read.
const std::vector<StageSpec>& pipeline_stages();

/// Runs the configured stages into cfg.str("out"). Completed stages leave a
/// marker and are skipped on re-runs. A config.lock from an earlier run must
/// match the effective configuration except for `stages` and `threads`.
/// Reads outside a stage's declared inputs raise ContractViolation.
void run_pipeline(const RunConfig& cfg, std::ostream* progress = nullptr);

}  // namespace pansel
