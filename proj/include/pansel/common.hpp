#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pansel {

// Error categories map onto CLI exit codes (1 config, 2 runtime, 3 verification).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

/// Single-channel raster, row-major.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  T& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  const T& at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  template <typename U>
  bool same_shape(const Raster<U>& o) const { return width == o.width && height == o.height; }
  bool operator==(const Raster&) const = default;
};

using SemanticMask = Raster<std::uint8_t>;
using InstanceMask = Raster<std::uint16_t>;

/// Interleaved RGB raster with values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

/// Dense per-pixel vector field, channel-major (C x H x W). Used for
/// probabilities, logits and embeddings.
struct Field {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Field() = default;
  Field(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  std::size_t plane() const { return std::size_t(height) * width; }
  double& at(int c, int y, int x) { return data[c * plane() + std::size_t(y) * width + x]; }
  double at(int c, int y, int x) const { return data[c * plane() + std::size_t(y) * width + x]; }
  double& at(int c, std::size_t pixel) { return data[c * plane() + pixel]; }
  double at(int c, std::size_t pixel) const { return data[c * plane() + pixel]; }
  bool same_shape(const Field& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

using ProbField = Field;
using EmbeddingField = Field;

/// Scalar loss value together with its gradient w.r.t. the field it was computed from.
struct LossResult {
  double value = 0.0;
  Field grad;
};

namespace schema {
inline constexpr std::uint8_t kSky = 0;
inline constexpr std::uint8_t kRoad = 1;
inline constexpr std::uint8_t kBuilding = 2;
inline constexpr std::uint8_t kCar = 3;
inline constexpr std::uint8_t kPerson = 4;
inline constexpr std::uint8_t kBike = 5;
inline constexpr std::uint8_t kVoid = 255;
inline constexpr int kNumClasses = 6;

inline bool is_thing(int c) { return c >= kCar && c <= kBike; }
inline bool is_stuff(int c) { return c >= kSky && c <= kBuilding; }
const char* class_name(int c);
}  // namespace schema

/// Class split used by the panoptic metrics.
struct LabelSchema {
  std::vector<int> stuff_classes{schema::kSky, schema::kRoad, schema::kBuilding};
  std::vector<int> thing_classes{schema::kCar, schema::kPerson, schema::kBike};
  int num_classes() const { return int(stuff_classes.size() + thing_classes.size()); }
  bool is_thing(int c) const;
  bool is_stuff(int c) const;
};

}  // namespace pansel

namespace pansel {
/// Keeps large activation buffers on the heap between calls instead of
/// mapping and unmapping them per allocation. Call once from main().
void tune_allocator();

/// Called with every input file the library opens. Used for path audits.
using ReadObserver = std::function<void(const std::filesystem::path&)>;
void set_read_observer(ReadObserver observer);
void note_read(const std::filesystem::path& path);
}  // namespace pansel
