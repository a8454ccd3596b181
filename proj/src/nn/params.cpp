#include "pansel/nn/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pansel::nn {

double scheduled_lr(const SgdConfig& cfg, int t, int total) {
  if (cfg.poly_power <= 0.0 || total <= 0) return cfg.lr;
  return cfg.lr * std::pow(1.0 - double(t - 1) / double(total), cfg.poly_power);
}

template <typename T>
int ParamStore<T>::add(const std::string& name, std::vector<int> shape) {
  if (contains(name)) throw ContractViolation("duplicate parameter name: " + name);
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  arrays_.push_back({name, std::move(shape), std::vector<T>(n, T(0))});
  const int idx = int(arrays_.size()) - 1;
  index_.emplace(name, idx);
  return idx;
}

template <typename T>
int ParamStore<T>::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.data.size();
  return n;
}

template <typename T>
bool ParamStore<T>::same_layout(const ParamStore& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i)
    if (arrays_[i].name != other.arrays_[i].name || arrays_[i].shape != other.arrays_[i].shape) return false;
  return true;
}

template <typename T>
std::uint64_t ParamStore<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& a : arrays_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.data.data());
    for (std::size_t i = 0; i < a.data.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <typename T>
template <typename U>
ParamStore<U> ParamStore<T>::cast() const {
  ParamStore<U> out;
  for (const auto& a : arrays_) {
    const int i = out.add(a.name, a.shape);
    for (std::size_t k = 0; k < a.data.size(); ++k) out[i].data[k] = U(a.data[k]);
  }
  return out;
}

template <typename T>
Gradients<T> Gradients<T>::zeros_like(const ParamStore<T>& params) {
  Gradients g;
  for (const auto& a : params.arrays()) g.arrays.emplace_back(a.data.size(), T(0));
  return g;
}

template <typename T>
void Gradients<T>::zero() {
  for (auto& a : arrays) std::fill(a.begin(), a.end(), T(0));
}

template <typename T>
void Gradients<T>::add(const Gradients& other, T s) {
  require(other.arrays.size() == arrays.size(), "Gradients::add: layout mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i)
    for (std::size_t k = 0; k < arrays[i].size(); ++k) arrays[i][k] += s * other.arrays[i][k];
}

template <typename T>
void Gradients<T>::scale(T s) {
  for (auto& a : arrays)
    for (auto& v : a) v *= s;
}

template <typename T>
void Sgd<T>::step(ParamStore<T>& params, const Gradients<T>& grads) {
  require(grads.arrays.size() == params.size(), "sgd_step: gradient count does not match parameters");
  if (velocity_.empty())
    for (const auto& a : params.arrays()) velocity_.emplace_back(a.data.size(), T(0));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads.arrays[i].size() == params[i].data.size(), "sgd_step: shape mismatch for " + params[i].name);
    for (T g : grads.arrays[i])
      if (!std::isfinite(double(g))) throw NumericalError("non-finite gradient in parameter " + params[i].name);
  }
  const T lr = T(cfg_.lr), mu = T(cfg_.momentum), wd = T(cfg_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].data;
    auto& v = velocity_[i];
    const auto& g = grads.arrays[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] + g[k];
      w[k] -= lr * (v[k] + wd * w[k]);
    }
  }
}

template <typename T>
bool ema_update(TeacherStore<T>& teacher, const ParamStore<T>& student, long iteration) {
  if (!teacher.params.same_layout(student)) throw ContractViolation("ema_update: teacher/student layout mismatch");
  if (teacher.period <= 0 || iteration % teacher.period != 0) return false;
  const T g = T(teacher.momentum);
  for (std::size_t i = 0; i < student.size(); ++i) {
    auto& psi = teacher.params[i].data;
    const auto& phi = student[i].data;
    for (std::size_t k = 0; k < psi.size(); ++k) psi[k] = g * psi[k] + (T(1) - g) * phi[k];
  }
  return true;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16), std::uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated checkpoint: " + path.string());
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

constexpr char kMagic[4] = {'P', 'N', 'S', 'L'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, std::uint32_t(params.size()));
  for (const auto& a : params.arrays()) {
    put_u32(os, std::uint32_t(a.name.size()));
    os.write(a.name.data(), std::streamsize(a.name.size()));
    put_u32(os, std::uint32_t(a.shape.size()));
    for (int d : a.shape) put_u32(os, std::uint32_t(d));
    for (T v : a.data) put_u32(os, std::bit_cast<std::uint32_t>(float(v)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path) {
  note_read(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a pansel checkpoint: " + path.string());
  if (const auto v = get_u32(is, path); v != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v) + ": " + path.string());
  const std::uint32_t count = get_u32(is, path);
  ParamStore<T> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(is, path);
    if (len > 4096) throw std::runtime_error("corrupt checkpoint (name length): " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("truncated checkpoint: " + path.string());
    const std::uint32_t ndim = get_u32(is, path);
    if (ndim > 8) throw std::runtime_error("corrupt checkpoint (ndim): " + path.string());
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = int(get_u32(is, path));
    const int idx = out.add(name, shape);
    for (auto& v : out[idx].data) v = T(std::bit_cast<float>(get_u32(is, path)));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<double> ParamStore<float>::cast<double>() const;
template ParamStore<float> ParamStore<double>::cast<float>() const;
template ParamStore<float> ParamStore<float>::cast<float>() const;
template ParamStore<double> ParamStore<double>::cast<double>() const;
template struct Gradients<float>;
template struct Gradients<double>;
template class Sgd<float>;
template class Sgd<double>;
template bool ema_update<float>(TeacherStore<float>&, const ParamStore<float>&, long);
template bool ema_update<double>(TeacherStore<double>&, const ParamStore<double>&, long);
template void save_checkpoint<float>(const std::filesystem::path&, const ParamStore<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamStore<double>&);
template ParamStore<float> load_checkpoint<float>(const std::filesystem::path&);
template ParamStore<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace pansel::nn
