#include "pansel/augment.hpp"

#include <algorithm>
#include <numeric>
#include <cmath>
#include <numbers>
#include <utility>

namespace pansel {

AugmentationRecord AugmentationRecord::identity(int width, int height) {
  AugmentationRecord r;
  r.crop = {0, 0, width, height};
  return r;
}

int AugmentationRecord::resized_width() const { return int(std::lround(crop.w * scale)); }
int AugmentationRecord::resized_height() const { return int(std::lround(crop.h * scale)); }
int AugmentationRecord::out_width() const {
  return rotation_quarter_turns % 2 == 0 ? resized_width() : resized_height();
}
int AugmentationRecord::out_height() const {
  return rotation_quarter_turns % 2 == 0 ? resized_height() : resized_width();
}

namespace {

void check_record(const AugmentationRecord& rec, int width, int height) {
  const CropBox& c = rec.crop;
  if (c.w <= 0 || c.h <= 0 || c.x < 0 || c.y < 0 || c.x + c.w > width || c.y + c.h > height)
    throw ContractViolation("crop box (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                            std::to_string(c.w) + "," + std::to_string(c.h) + ") outside " +
                            std::to_string(width) + "x" + std::to_string(height) + " canvas");
  if (rec.scale <= 0.0 || rec.resized_width() <= 0 || rec.resized_height() <= 0)
    throw ContractViolation("augmentation scale must be positive");
  if (rec.rotation_quarter_turns < 0 || rec.rotation_quarter_turns > 3)
    throw ContractViolation("rotation_quarter_turns must be in 0..3");
  if (rec.photometric.blur_sigma < 0.0 || rec.photometric.blur_sigma > 1.5)
    throw ContractViolation("blur sigma must be in [0, 1.5]");
}

// Output pixel -> source pixel on the original canvas.
std::pair<int, int> source_of(const AugmentationRecord& rec, int u, int v) {
  int w = rec.out_width(), h = rec.out_height();
  for (int k = 0; k < rec.rotation_quarter_turns; ++k) {
    // Undo one CCW turn: rotated(x', y') = pre(W_pre - 1 - y', x'), W_pre = h.
    const int pu = h - 1 - v, pv = u;
    u = pu;
    v = pv;
    std::swap(w, h);
  }
  if (rec.flip) u = w - 1 - u;
  const int rw = rec.resized_width(), rh = rec.resized_height();
  const int cx = std::min(rec.crop.w - 1, int(std::floor((u + 0.5) * rec.crop.w / rw)));
  const int cy = std::min(rec.crop.h - 1, int(std::floor((v + 0.5) * rec.crop.h / rh)));
  return {rec.crop.x + cx, rec.crop.y + cy};
}

// Canvas pixel inside the crop -> output pixel.
std::pair<int, int> output_of(const AugmentationRecord& rec, int x, int y) {
  const int rw = rec.resized_width(), rh = rec.resized_height();
  int u = std::min(rw - 1, int(std::floor((x - rec.crop.x + 0.5) * rw / rec.crop.w)));
  int v = std::min(rh - 1, int(std::floor((y - rec.crop.y + 0.5) * rh / rec.crop.h)));
  if (rec.flip) u = rw - 1 - u;
  int w = rw;
  for (int k = 0; k < rec.rotation_quarter_turns; ++k) {
    // CCW turn: pre(x, y) -> rotated(y, W_pre - 1 - x).
    const int nu = v, nv = w - 1 - u;
    w = (k % 2 == 0) ? rh : rw;
    u = nu;
    v = nv;
  }
  return {u, v};
}

template <typename T>
Raster<T> remap(const Raster<T>& in, const AugmentationRecord& rec) {
  check_record(rec, in.width, in.height);
  Raster<T> out(rec.out_width(), rec.out_height());
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      const auto [x, y] = source_of(rec, u, v);
      out.at(u, v) = in.at(x, y);
    }
  return out;
}

void blur(Image& img, double sigma) {
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= norm;

  Image tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp.at(x, y, c) = float(acc);
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(x, std::clamp(y + i, 0, img.height - 1), c);
        img.at(x, y, c) = float(acc);
      }
}

}  // namespace

AugmentationRecord random_record(Rng& rng, int width, int height, const JitterConfig& cfg) {
  AugmentationRecord r;
  // Crops keep the canvas aspect ratio in steps of (width, height) / gcd.
  const double s = rng.uniform(cfg.min_crop, cfg.max_crop);
  const int g = std::gcd(width, height);
  const int k = std::clamp(int(std::lround(s * g)), 1, g);
  const int cw = k * (width / g), ch = k * (height / g);
  r.crop = {rng.uniform_int(0, width - cw), rng.uniform_int(0, height - ch), cw, ch};
  r.scale = double(g) / k;
  r.flip = rng.bernoulli(cfg.flip_prob);
  if (cfg.photometric) {
    r.photometric.brightness = rng.uniform(-cfg.brightness, cfg.brightness);
    r.photometric.contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    r.photometric.hue = rng.uniform(-cfg.hue, cfg.hue);
    r.photometric.grayscale = rng.bernoulli(cfg.grayscale_prob);
    if (rng.bernoulli(cfg.blur_prob)) r.photometric.blur_sigma = rng.uniform(0.0, cfg.max_blur);
  }
  return r;
}

Image apply_photometric(const Image& img, const Photometric& ph) {
  if (ph.is_identity()) return img;
  require(ph.blur_sigma >= 0.0 && ph.blur_sigma <= 1.5, "blur sigma must be in [0, 1.5]");
  Image out = img;
  const double a = ph.hue * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a), k = (1.0 - c) / 3.0, q = std::sqrt(1.0 / 3.0) * s;
  const double m[3][3] = {{c + k, k - q, k + q}, {k + q, c + k, k - q}, {k - q, k + q, c + k}};
  for (std::size_t p = 0; p < out.data.size(); p += 3) {
    double rgb[3] = {out.data[p], out.data[p + 1], out.data[p + 2]};
    if (ph.hue != 0.0) {
      const double r = m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2];
      const double g = m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2];
      const double b = m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2];
      rgb[0] = r, rgb[1] = g, rgb[2] = b;
    }
    if (ph.grayscale) {
      const double l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      rgb[0] = rgb[1] = rgb[2] = l;
    }
    for (int ch = 0; ch < 3; ++ch) {
      const double v = (rgb[ch] - 0.5) * ph.contrast + 0.5 + ph.brightness;
      out.data[p + ch] = float(std::clamp(v, 0.0, 1.0));
    }
  }
  if (ph.blur_sigma > 0.0) blur(out, ph.blur_sigma);
  return out;
}

Image apply(const Image& img, const AugmentationRecord& rec) {
  check_record(rec, img.width, img.height);
  Image out(rec.out_width(), rec.out_height());
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      const auto [x, y] = source_of(rec, u, v);
      for (int c = 0; c < 3; ++c) out.at(u, v, c) = img.at(x, y, c);
    }
  return apply_photometric(out, rec.photometric);
}

SemanticMask apply_labels(const SemanticMask& mask, const AugmentationRecord& rec) { return remap(mask, rec); }
InstanceMask apply_labels(const InstanceMask& mask, const AugmentationRecord& rec) { return remap(mask, rec); }

Field apply_field(const Field& field, const AugmentationRecord& rec) {
  check_record(rec, field.width, field.height);
  Field out(field.channels, rec.out_height(), rec.out_width());
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      const auto [x, y] = source_of(rec, u, v);
      for (int c = 0; c < field.channels; ++c) out.at(c, v, u) = field.at(c, y, x);
    }
  return out;
}

Reprojection invert_spatial(const Field& augmented, const AugmentationRecord& rec, int canvas_width,
                            int canvas_height) {
  check_record(rec, canvas_width, canvas_height);
  if (augmented.width != rec.out_width() || augmented.height != rec.out_height())
    throw ContractViolation("invert_spatial: field is " + std::to_string(augmented.width) + "x" +
                            std::to_string(augmented.height) + " but record produces " +
                            std::to_string(rec.out_width()) + "x" + std::to_string(rec.out_height()));
  Reprojection r{Field(augmented.channels, canvas_height, canvas_width),
                 Raster<std::uint8_t>(canvas_width, canvas_height, 0)};
  for (int y = rec.crop.y; y < rec.crop.y + rec.crop.h; ++y)
    for (int x = rec.crop.x; x < rec.crop.x + rec.crop.w; ++x) {
      const auto [u, v] = output_of(rec, x, y);
      for (int c = 0; c < augmented.channels; ++c) r.field.at(c, y, x) = augmented.at(c, v, u);
      r.covered.at(x, y) = 1;
    }
  return r;
}

CanvasAverager::CanvasAverager(int channels, int width, int height)
    : sum_(channels, height, width), counts_(width, height, 0) {}

void CanvasAverager::add(const Reprojection& r) {
  require(r.field.same_shape(sum_), "CanvasAverager: shape mismatch");
  const std::size_t plane = sum_.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    if (!r.covered.data[p]) continue;
    ++counts_.data[p];
    for (int c = 0; c < sum_.channels; ++c) sum_.at(c, p) += r.field.at(c, p);
  }
}

Field CanvasAverager::mean() const {
  Field out = sum_;
  const std::size_t plane = sum_.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    if (counts_.data[p] == 0) continue;
    for (int c = 0; c < out.channels; ++c) out.at(c, p) /= counts_.data[p];
  }
  return out;
}

}  // namespace pansel
