#pragma once

#include <map>

#include "pansel/common.hpp"

namespace pansel {

/// Per-pixel (class, instance). Stuff and void pixels carry instance 0.
struct PanopticMask {
  SemanticMask classes;
  InstanceMask instances;

  PanopticMask() = default;
  PanopticMask(int w, int h) : classes(w, h), instances(w, h) {}
  int width() const { return classes.width; }
  int height() const { return classes.height; }
  bool operator==(const PanopticMask&) const = default;
};

/// class * 1000 + instance per pixel, void as kVoidPanoptic.
Raster<std::uint16_t> encode_panoptic(const PanopticMask& pan);
PanopticMask decode_panoptic(const Raster<std::uint16_t>& raster);

struct RelabeledInstances {
  InstanceMask mask;
  std::map<int, int> class_of;
};

/// Majority semantic class per instance (stuff majorities fall back to the
/// most frequent thing class inside, or drop the instance). Same-class
/// instances that touch under 8-connectivity are merged. Ids are compacted
/// to 1..K in order of their smallest original id.
RelabeledInstances bincount_relabel(const InstanceMask& inst, const SemanticMask& sem);

/// Per instance: opening then closing with a (2r+1)x(2r+1) square. Pixels
/// outside the raster are ignored by both erosion and dilation. Instances
/// emptied by the opening are dropped; where cleaned masks overlap, the
/// larger instance (ties: smaller id) keeps the pixel.
InstanceMask morphological_cleanup(const InstanceMask& inst, int open_radius = 1, int close_radius = 1);

/// Instance pixels take (class_of[id], id); the rest take (sem, 0).
PanopticMask fuse_panoptic(const SemanticMask& sem, const InstanceMask& inst, const std::map<int, int>& class_of);

}  // namespace pansel
