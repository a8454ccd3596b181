#pragma once

#include <cstdint>

#include "pansel/common.hpp"
#include "pansel/rng.hpp"

namespace pansel {

struct CropBox {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const CropBox&) const = default;
};

struct Photometric {
  double brightness = 0.0;  // additive
  double contrast = 1.0;    // multiplicative around mid-grey
  double hue = 0.0;         // degrees
  bool grayscale = false;
  double blur_sigma = 0.0;  // [0, 1.5]

  bool is_identity() const {
    return brightness == 0.0 && contrast == 1.0 && hue == 0.0 && !grayscale && blur_sigma == 0.0;
  }
};

/// Everything needed to replay a transform. Spatial order: crop, nearest
/// resize by `scale`, horizontal flip, then counter-clockwise quarter turns.
struct AugmentationRecord {
  bool flip = false;
  CropBox crop;
  double scale = 1.0;
  int rotation_quarter_turns = 0;
  Photometric photometric;

  static AugmentationRecord identity(int width, int height);

  int resized_width() const;
  int resized_height() const;
  int out_width() const;
  int out_height() const;
};

struct JitterConfig {
  double min_crop = 0.7;
  double max_crop = 1.0;
  double flip_prob = 0.5;
  double brightness = 0.10;
  double contrast = 0.15;
  double hue = 10.0;
  double grayscale_prob = 0.05;
  double blur_prob = 0.2;
  double max_blur = 1.0;
  bool photometric = true;
};

/// Random crop (rescaled back to the full canvas size), flip and photometric
/// jitter. Output size always equals (width, height); crops keep the canvas
/// aspect ratio, so coprime sizes only ever get the full canvas.
AugmentationRecord random_record(Rng& rng, int width, int height, const JitterConfig& cfg);

Image apply(const Image& img, const AugmentationRecord& rec);
Image apply_photometric(const Image& img, const Photometric& ph);
SemanticMask apply_labels(const SemanticMask& mask, const AugmentationRecord& rec);
InstanceMask apply_labels(const InstanceMask& mask, const AugmentationRecord& rec);
Field apply_field(const Field& field, const AugmentationRecord& rec);

struct Reprojection {
  Field field;                 // on the original canvas, zero where absent
  Raster<std::uint8_t> covered;  // 1 where the crop footprint covers the canvas
};

/// Maps an augmented-space field back onto the canvas the record was drawn from.
Reprojection invert_spatial(const Field& augmented, const AugmentationRecord& rec, int canvas_width,
                            int canvas_height);

/// Per-pixel running mean of reprojected fields.
class CanvasAverager {
 public:
  CanvasAverager(int channels, int width, int height);
  void add(const Reprojection& r);
  /// Mean over covering contributions; pixels never covered stay zero.
  Field mean() const;
  const Raster<int>& counts() const { return counts_; }

 private:
  Field sum_;
  Raster<int> counts_;
};

}  // namespace pansel
