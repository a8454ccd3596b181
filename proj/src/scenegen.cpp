#include "pansel/scenegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pansel/netpbm.hpp"
#include "pansel/rng.hpp"

namespace pansel {

namespace fs = std::filesystem;

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + s + "' (expected source|target)");
}

namespace {

using Rgb = std::array<float, 3>;

constexpr Rgb kSkyColor{0.55f, 0.72f, 0.92f};
constexpr Rgb kRoadColor{0.36f, 0.36f, 0.40f};
constexpr Rgb kBuildingColor{0.62f, 0.46f, 0.36f};
constexpr Rgb kCarColor{0.85f, 0.18f, 0.16f};
constexpr Rgb kPersonColor{0.90f, 0.88f, 0.62f};
constexpr Rgb kBikeColor{0.16f, 0.72f, 0.26f};

struct Thing {
  int cls = 0;
  int cx = 0, cy = 0, r = 0;
  Rgb color{};
};

bool covers(const Thing& t, int x, int y) {
  switch (t.cls) {
    case schema::kCar: {
      const int dx = x - t.cx, dy = y - t.cy;
      return dx * dx + dy * dy <= t.r * t.r;
    }
    case schema::kPerson: {
      const int half_w = std::max(1, t.r / 3);
      return std::abs(x - t.cx) <= half_w && y <= t.cy && y > t.cy - 2 * t.r;
    }
    default: {
      // Upright isosceles triangle with apex r+2 rows above the base row cy.
      const int h = t.r + 2;
      const int dy = t.cy - y;
      if (dy < 0 || dy > h) return false;
      const double half = double(t.r) * (1.0 - double(dy) / h);
      return std::abs(x - t.cx) <= half;
    }
  }
}

float quantize(float v) { return std::round(std::clamp(v, 0.f, 1.f) * 255.f) / 255.f; }

}  // namespace

Image apply_domain_shift(const Image& img, const DomainShift& shift, std::uint64_t noise_seed) {
  if (shift.is_identity()) return img;
  const double a = shift.hue_rotation * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a), k = (1.0 - c) / 3.0, q = std::sqrt(1.0 / 3.0) * s;
  const double m[3][3] = {{c + k, k - q, k + q}, {k + q, c + k, k - q}, {k - q, k + q, c + k}};
  Rng noise(noise_seed);
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double in[3] = {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
      const double tex = shift.texture_toggle ? (((x + y) / 2) % 2 == 0 ? 0.06 : -0.06) : 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        double v = m[ch][0] * in[0] + m[ch][1] * in[1] + m[ch][2] * in[2];
        v = v * shift.scale_factor + tex;
        if (shift.noise_sigma > 0.0) v += noise.normal(0.0, shift.noise_sigma);
        out.at(x, y, ch) = quantize(float(v));
      }
    }
  }
  return out;
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.width < 32 || spec.height < 32)
    throw ConfigError("scene dimensions must be at least 32x32, got " + std::to_string(spec.width) + "x" +
                      std::to_string(spec.height));
  if (spec.min_things < 0 || spec.max_things < spec.min_things)
    throw ConfigError("invalid thing count range");
  if (spec.min_thing_radius < 2 || spec.max_thing_radius < spec.min_thing_radius)
    throw ConfigError("invalid thing radius range");

  const int w = spec.width, h = spec.height;
  Rng geo(mix_seed(spec.seed, 1));
  Rng look(mix_seed(spec.seed, 2));

  // Stuff layout: sky above a skyline, buildings down to the road edge.
  std::vector<int> skyline(w), road_top(w);
  const int road_base = geo.uniform_int(int(0.52 * h), int(0.66 * h));
  const double road_slope = geo.uniform(-0.08, 0.08);
  for (int x = 0; x < w;) {
    const int bw = geo.uniform_int(6, 16);
    const int top = geo.uniform_int(int(0.12 * h), int(0.40 * h));
    for (int i = x; i < std::min(w, x + bw); ++i) skyline[i] = top;
    x += bw;
  }
  for (int x = 0; x < w; ++x)
    road_top[x] = std::clamp(int(std::lround(road_base + road_slope * (x - w / 2))), skyline[x] + 2, h - 4);

  SemanticMask sem(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sem.at(x, y) = y < skyline[x] ? schema::kSky : (y < road_top[x] ? schema::kBuilding : schema::kRoad);

  // Things: cars sit on the road, people and bikes stand near the road edge.
  std::vector<Thing> things;
  for (int cls : {schema::kCar, schema::kPerson, schema::kBike}) {
    const int count = geo.uniform_int(spec.min_things, spec.max_things);
    for (int i = 0; i < count; ++i) {
      Thing t;
      t.cls = cls;
      t.r = geo.uniform_int(spec.min_thing_radius, spec.max_thing_radius);
      t.cx = geo.uniform_int(0, w - 1);
      const int ground = road_top[t.cx];
      if (cls == schema::kCar)
        t.cy = geo.uniform_int(std::min(h - 1, ground + t.r / 2), h - 1);
      else
        t.cy = geo.uniform_int(std::min(h - 1, ground + 1), std::min(h - 1, ground + h / 5));
      things.push_back(t);
    }
  }
  std::shuffle(things.begin(), things.end(), geo.engine());
  for (auto& t : things) {
    const Rgb base = t.cls == schema::kCar ? kCarColor : (t.cls == schema::kPerson ? kPersonColor : kBikeColor);
    for (int ch = 0; ch < 3; ++ch) t.color[ch] = base[ch] + float(look.uniform(-0.07, 0.07));
  }

  // Later things overwrite earlier ones.
  std::vector<int> owner(std::size_t(w) * h, -1);
  for (int k = 0; k < int(things.size()); ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (covers(things[k], x, y)) owner[std::size_t(y) * w + x] = k;

  std::vector<int> visible(things.size(), 0);
  for (int o : owner)
    if (o >= 0) ++visible[o];
  std::vector<int> new_id(things.size(), 0);
  int next = 0;
  for (std::size_t k = 0; k < things.size(); ++k)
    if (visible[k] >= kMinInstancePixels) new_id[k] = ++next;

  InstanceMask inst(w, h);
  for (std::size_t p = 0; p < owner.size(); ++p) {
    const int o = owner[p];
    if (o < 0 || new_id[o] == 0) {
      owner[p] = -1;
      continue;
    }
    inst.data[p] = std::uint16_t(new_id[o]);
    sem.data[p] = std::uint8_t(things[o].cls);
  }

  // Appearance.
  const float sky_tint = float(look.uniform(-0.05, 0.05));
  std::vector<float> building_tone(w);
  for (int x = 0; x < w;) {
    const float tone = float(look.uniform(-0.08, 0.08));
    int i = x;
    for (; i < w && skyline[i] == skyline[x]; ++i) building_tone[i] = tone;
    x = i;
  }
  std::vector<float> grain(std::size_t(w) * h);
  for (auto& g : grain) g = float(look.uniform(-0.03, 0.03));

  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = std::size_t(y) * w + x;
      Rgb c{};
      if (owner[p] >= 0) {
        c = things[owner[p]].color;
        const Thing& t = things[owner[p]];
        if (t.cls == schema::kCar && y < t.cy - t.r / 3)
          for (auto& v : c) v *= 0.75f;  // darker roof band
      } else {
        switch (sem.data[p]) {
          case schema::kSky: {
            const float g = 0.12f * float(y) / float(h);
            c = {kSkyColor[0] + g + sky_tint, kSkyColor[1] + g + sky_tint, kSkyColor[2]};
            break;
          }
          case schema::kBuilding: {
            c = kBuildingColor;
            for (auto& v : c) v += building_tone[x];
            if (x % 4 != 0 && y % 5 >= 2 && y % 5 <= 3)
              for (auto& v : c) v += 0.12f;  // window rows
            break;
          }
          default: {
            c = kRoadColor;
            if (x % 12 < 6 && std::abs(y - (road_top[x] + h) / 2) == 0)
              c = {0.85f, 0.85f, 0.8f};  // lane marking
            break;
          }
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = quantize(c[ch] + grain[p]);
    }
  }

  if (spec.domain == Domain::target) img = apply_domain_shift(img, spec.shift, mix_seed(spec.seed, 3));
  return {std::move(img), std::move(sem), std::move(inst)};
}

std::uint32_t panoptic_id(int class_id, int instance_id) {
  return std::uint32_t(class_id) * 1000u + std::uint32_t(instance_id);
}

Raster<std::uint16_t> panoptic_raster(const SemanticMask& sem, const InstanceMask& inst) {
  require(sem.same_shape(inst), "panoptic_raster: shape mismatch");
  Raster<std::uint16_t> out(sem.width, sem.height);
  for (std::size_t p = 0; p < sem.size(); ++p) {
    if (sem.data[p] == schema::kVoid) {
      out.data[p] = kVoidPanoptic;
      continue;
    }
    const std::uint32_t id = panoptic_id(sem.data[p], inst.data[p]);
    if (id >= kVoidPanoptic) throw ContractViolation("panoptic id " + std::to_string(id) + " does not fit 16 bits");
    out.data[p] = std::uint16_t(id);
  }
  return out;
}

SceneSpec dataset_item_spec(const SceneSpec& spec, int index) {
  SceneSpec s = spec;
  s.seed = mix_seed(spec.seed, 1000 + std::uint64_t(index));
  return s;
}

namespace {

std::string file_name(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d.%s", prefix, i, ext);
  return buf;
}

void write_spec(std::ostream& os, const SceneSpec& s, int n) {
  os << "# pansel dataset manifest v1\n";
  os << "# count=" << n << "\n";
  os << "# seed=" << s.seed << "\n";
  os << "# height=" << s.height << "\n";
  os << "# width=" << s.width << "\n";
  os << "# min_things=" << s.min_things << "\n";
  os << "# max_things=" << s.max_things << "\n";
  os << "# min_thing_radius=" << s.min_thing_radius << "\n";
  os << "# max_thing_radius=" << s.max_thing_radius << "\n";
  os << "# domain=" << to_string(s.domain) << "\n";
  os.precision(17);
  os << "# hue_rotation=" << s.shift.hue_rotation << "\n";
  os << "# noise_sigma=" << s.shift.noise_sigma << "\n";
  os << "# scale_factor=" << s.shift.scale_factor << "\n";
  os << "# texture_toggle=" << (s.shift.texture_toggle ? 1 : 0) << "\n";
}

}  // namespace

Manifest write_dataset(const fs::path& dir, int n, const SceneSpec& spec) {
  if (n < 0) throw ConfigError("dataset size must be non-negative");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());

  Manifest m;
  m.spec = spec;
  m.count = n;
  for (int i = 0; i < n; ++i) {
    const Scene s = generate_scene(dataset_item_spec(spec, i));
    DatasetEntry e{file_name("img", i, "ppm"), file_name("sem", i, "pgm"), file_name("inst", i, "pgm"),
                   file_name("pan", i, "pgm")};
    netpbm::write_ppm(dir / e.image, s.image);
    netpbm::write_pgm8(dir / e.semantic, s.semantic);
    netpbm::write_pgm16(dir / e.instance, s.instance);
    netpbm::write_pgm16(dir / e.panoptic, panoptic_raster(s.semantic, s.instance));
    m.entries.push_back(std::move(e));
  }

  const fs::path mpath = dir / "manifest.txt";
  std::ofstream os(mpath);
  if (!os) throw std::runtime_error("cannot write " + mpath.string());
  write_spec(os, spec, n);
  for (const auto& e : m.entries)
    os << e.image << ' ' << e.semantic << ' ' << e.instance << ' ' << e.panoptic << '\n';
  if (!os) throw std::runtime_error("write failed: " + mpath.string());
  return m;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  note_read(mpath);
  std::ifstream is(mpath);
  if (!is) throw std::runtime_error("missing manifest: " + mpath.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string val = line.substr(eq + 1);
      if (key == "count") m.count = std::stoi(val);
      else if (key == "seed") m.spec.seed = std::stoull(val);
      else if (key == "height") m.spec.height = std::stoi(val);
      else if (key == "width") m.spec.width = std::stoi(val);
      else if (key == "min_things") m.spec.min_things = std::stoi(val);
      else if (key == "max_things") m.spec.max_things = std::stoi(val);
      else if (key == "min_thing_radius") m.spec.min_thing_radius = std::stoi(val);
      else if (key == "max_thing_radius") m.spec.max_thing_radius = std::stoi(val);
      else if (key == "domain") m.spec.domain = parse_domain(val);
      else if (key == "hue_rotation") m.spec.shift.hue_rotation = std::stod(val);
      else if (key == "noise_sigma") m.spec.shift.noise_sigma = std::stod(val);
      else if (key == "scale_factor") m.spec.shift.scale_factor = std::stod(val);
      else if (key == "texture_toggle") m.spec.shift.texture_toggle = val == "1";
      continue;
    }
    std::istringstream ls(line);
    DatasetEntry e;
    if (!(ls >> e.image >> e.semantic >> e.instance >> e.panoptic))
      throw std::runtime_error("malformed manifest line in " + mpath.string() + ": " + line);
    m.entries.push_back(std::move(e));
  }
  if (int(m.entries.size()) != m.count)
    throw std::runtime_error("manifest " + mpath.string() + " lists " + std::to_string(m.entries.size()) +
                             " entries but declares count=" + std::to_string(m.count));
  return m;
}

std::vector<Scene> read_dataset(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<Scene> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Scene s{netpbm::read_ppm(dir / e.image), netpbm::read_pgm8(dir / e.semantic),
            netpbm::read_pgm16(dir / e.instance)};
    if (!s.semantic.same_shape(s.instance) || s.semantic.width != s.image.width ||
        s.semantic.height != s.image.height)
      throw std::runtime_error("raster size mismatch for " + e.image + " in " + dir.string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pansel
