#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pansel/common.hpp"

namespace pansel {

enum class Domain { source, target };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

/// Appearance-only perturbation separating the target domain from the source.
/// `scale_factor` multiplies pixel intensity. The identity shift is
/// {0, 0, 1, false}.
struct DomainShift {
  double hue_rotation = 35.0;  // degrees
  double noise_sigma = 0.05;
  double scale_factor = 0.8;
  bool texture_toggle = false;

  static DomainShift identity() { return {0.0, 0.0, 1.0, false}; }
  bool is_identity() const {
    return hue_rotation == 0.0 && noise_sigma == 0.0 && scale_factor == 1.0 && !texture_toggle;
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int min_things = 1;  // per thing class
  int max_things = 3;
  int min_thing_radius = 4;
  int max_thing_radius = 8;
  Domain domain = Domain::source;
  DomainShift shift;
};

struct Scene {
  Image image;
  SemanticMask semantic;
  InstanceMask instance;
};

inline constexpr int kMinInstancePixels = 9;

/// Renders one scene. Geometry and labels depend only on (seed, size, thing
/// parameters); the domain only changes the image.
Scene generate_scene(const SceneSpec& spec);

/// Applies a domain shift to a rendered image. `noise_seed` drives the noise.
Image apply_domain_shift(const Image& img, const DomainShift& shift, std::uint64_t noise_seed);

/// Encoded panoptic value reserved for void pixels.
inline constexpr std::uint16_t kVoidPanoptic = 65535;

/// class_id * 1000 + instance index; stuff pixels carry instance 0.
std::uint32_t panoptic_id(int class_id, int instance_id);
Raster<std::uint16_t> panoptic_raster(const SemanticMask& sem, const InstanceMask& inst);

struct DatasetEntry {
  std::string image, semantic, instance, panoptic;
};

struct Manifest {
  SceneSpec spec;
  int count = 0;
  std::vector<DatasetEntry> entries;
};

/// Per-image spec used for index i of a dataset.
SceneSpec dataset_item_spec(const SceneSpec& spec, int index);

Manifest write_dataset(const std::filesystem::path& dir, int n, const SceneSpec& spec);
Manifest read_manifest(const std::filesystem::path& dir);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

}  // namespace pansel
