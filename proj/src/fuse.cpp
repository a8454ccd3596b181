#include "pansel/fuse.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "pansel/scenegen.hpp"

namespace pansel {

Raster<std::uint16_t> encode_panoptic(const PanopticMask& pan) {
  return panoptic_raster(pan.classes, pan.instances);
}

PanopticMask decode_panoptic(const Raster<std::uint16_t>& raster) {
  PanopticMask pan(raster.width, raster.height);
  for (std::size_t p = 0; p < raster.size(); ++p) {
    const int v = raster.data[p];
    if (v == kVoidPanoptic) {
      pan.classes.data[p] = schema::kVoid;
      continue;
    }
    pan.classes.data[p] = std::uint8_t(v / 1000);
    pan.instances.data[p] = std::uint16_t(v % 1000);
  }
  return pan;
}

RelabeledInstances bincount_relabel(const InstanceMask& inst, const SemanticMask& sem) {
  require(inst.same_shape(sem), "bincount_relabel: shape mismatch");
  int max_id = 0;
  for (auto v : inst.data) max_id = std::max<int>(max_id, v);
  std::vector<std::array<int, 256>> hist(max_id + 1);
  for (auto& h : hist) h.fill(0);
  for (std::size_t p = 0; p < inst.size(); ++p)
    if (inst.data[p] > 0) ++hist[inst.data[p]][sem.data[p]];

  std::vector<int> cls(max_id + 1, -1);
  for (int id = 1; id <= max_id; ++id) {
    int best = -1, best_count = 0, best_thing = -1, thing_count = 0;
    for (int c = 0; c < 255; ++c) {
      const int n = hist[id][c];
      if (n > best_count) {
        best = c;
        best_count = n;
      }
      if (schema::is_thing(c) && n > thing_count) {
        best_thing = c;
        thing_count = n;
      }
    }
    if (best < 0) continue;
    cls[id] = schema::is_thing(best) ? best : best_thing;
  }

  const int w = inst.width, h = inst.height;
  std::vector<int> parent(max_id + 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int a = inst.at(x, y);
      if (a == 0 || cls[a] < 0) continue;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx <= 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || nx >= w || ny >= h) continue;
          const int b = inst.at(nx, ny);
          if (b == 0 || b == a || cls[b] != cls[a]) continue;
          const int ra = find(a), rb = find(b);
          if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
        }
    }

  RelabeledInstances out;
  out.mask = InstanceMask(w, h);
  std::vector<int> new_id(max_id + 1, 0);
  int next = 0;
  for (int id = 1; id <= max_id; ++id) {
    if (cls[id] < 0 || find(id) != id) continue;
    bool present = false;
    for (int c = 0; c < 256 && !present; ++c) present = hist[id][c] > 0;
    if (!present) continue;
    new_id[id] = ++next;
    out.class_of[next] = cls[id];
  }
  for (std::size_t p = 0; p < inst.size(); ++p) {
    const int id = inst.data[p];
    if (id == 0 || cls[id] < 0) continue;
    out.mask.data[p] = std::uint16_t(new_id[find(id)]);
  }
  return out;
}

namespace {

using Binary = std::vector<std::uint8_t>;

// One 3x3 pass; neighbours outside the raster are skipped.
Binary morph_step(const Binary& in, int w, int h, bool erode) {
  Binary out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool v = erode;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const bool b = in[std::size_t(ny) * w + nx] != 0;
          if (erode)
            v = v && b;
          else
            v = v || b;
        }
      out[std::size_t(y) * w + x] = v;
    }
  return out;
}

Binary morph(Binary b, int w, int h, int radius, bool erode) {
  for (int r = 0; r < radius; ++r) b = morph_step(b, w, h, erode);
  return b;
}

}  // namespace

InstanceMask morphological_cleanup(const InstanceMask& inst, int open_radius, int close_radius) {
  if (open_radius < 0 || close_radius < 0) throw ConfigError("morphological_cleanup: radii must be >= 0");
  const int w = inst.width, h = inst.height;
  int max_id = 0;
  for (auto v : inst.data) max_id = std::max<int>(max_id, v);

  struct Cleaned {
    int id;
    std::size_t area;
    Binary mask;
  };
  std::vector<Cleaned> cleaned;
  for (int id = 1; id <= max_id; ++id) {
    Binary b(inst.size());
    std::size_t n = 0;
    for (std::size_t p = 0; p < inst.size(); ++p) n += (b[p] = inst.data[p] == id);
    if (n == 0) continue;
    b = morph(morph(b, w, h, open_radius, true), w, h, open_radius, false);
    b = morph(morph(b, w, h, close_radius, false), w, h, close_radius, true);
    const std::size_t area = std::size_t(std::count(b.begin(), b.end(), 1));
    if (area == 0) continue;
    cleaned.push_back({id, area, std::move(b)});
  }
  std::stable_sort(cleaned.begin(), cleaned.end(),
                   [](const Cleaned& a, const Cleaned& b) { return a.area > b.area; });
  InstanceMask out(w, h);
  for (const auto& c : cleaned)
    for (std::size_t p = 0; p < out.size(); ++p)
      if (c.mask[p] && out.data[p] == 0) out.data[p] = std::uint16_t(c.id);
  return out;
}

PanopticMask fuse_panoptic(const SemanticMask& sem, const InstanceMask& inst, const std::map<int, int>& class_of) {
  require(sem.same_shape(inst), "fuse_panoptic: shape mismatch");
  PanopticMask pan(sem.width, sem.height);
  for (std::size_t p = 0; p < sem.size(); ++p) {
    const int id = inst.data[p];
    if (id > 0) {
      auto it = class_of.find(id);
      if (it != class_of.end()) {
        pan.classes.data[p] = std::uint8_t(it->second);
        pan.instances.data[p] = std::uint16_t(id);
        continue;
      }
    }
    pan.classes.data[p] = sem.data[p];
  }
  return pan;
}

}  // namespace pansel
