#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pansel/common.hpp"

namespace pansel::nn {

template <typename T>
struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
};

/// Named trainable arrays. Insertion order is the canonical order used by
/// gradients, optimizer state and checkpoints.
template <typename T>
class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape);
  int index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return arrays_.size(); }
  std::size_t total_elements() const;
  ParamArray<T>& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
  std::span<T> data(std::size_t i) { return arrays_[i].data; }
  std::span<const T> data(std::size_t i) const { return arrays_[i].data; }
  const std::vector<ParamArray<T>>& arrays() const { return arrays_; }

  bool same_layout(const ParamStore& other) const;
  /// Order-sensitive FNV-1a hash over the raw bytes of every array.
  std::uint64_t checksum() const;

  template <typename U>
  ParamStore<U> cast() const;

 private:
  std::vector<ParamArray<T>> arrays_;
  std::unordered_map<std::string, int> index_;
};

/// Gradient buffers aligned with a ParamStore.
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> arrays;

  static Gradients zeros_like(const ParamStore<T>& params);
  void zero();
  void add(const Gradients& other, T scale = T(1));
  void scale(T s);
};

struct SgdConfig {
  double lr = 2.5e-4;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.0;  // lr * (1 - t / T)^power over a run; 0 keeps lr constant
};

/// Learning rate at iteration t (1-based) of a T-iteration run.
double scheduled_lr(const SgdConfig& cfg, int t, int total);

/// Classical momentum with decoupled L2 decay:
///   v <- momentum * v + g;  w <- w - lr * (v + weight_decay * w).
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}
  /// Throws NumericalError naming the parameter if a gradient is not finite.
  void step(ParamStore<T>& params, const Gradients<T>& grads);
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }
  SgdConfig& config() { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<T>> velocity_;
};

/// Momentum (EMA) copy of a student network. Never receives gradients.
template <typename T>
struct TeacherStore {
  ParamStore<T> params;
  double momentum = 0.99;
  int period = 100;
};

/// psi <- momentum * psi + (1 - momentum) * phi when iteration % period == 0.
/// Returns whether the teacher was updated.
template <typename T>
bool ema_update(TeacherStore<T>& teacher, const ParamStore<T>& student, long iteration);

/// Checkpoint layout (little-endian): magic "PNSL", u32 version, u32 count,
/// then per array: u32 name length, name bytes, u32 ndim, u32 dims, float32 data.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params);
template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace pansel::nn
