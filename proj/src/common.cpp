#include "pansel/common.hpp"

#include <algorithm>
#include <mutex>

namespace pansel {

const char* schema::class_name(int c) {
  switch (c) {
    case kSky: return "sky";
    case kRoad: return "road";
    case kBuilding: return "building";
    case kCar: return "car";
    case kPerson: return "person";
    case kBike: return "bike";
    case kVoid: return "void";
    default: return "unknown";
  }
}

bool LabelSchema::is_thing(int c) const {
  return std::find(thing_classes.begin(), thing_classes.end(), c) != thing_classes.end();
}

bool LabelSchema::is_stuff(int c) const {
  return std::find(stuff_classes.begin(), stuff_classes.end(), c) != stuff_classes.end();
}

}  // namespace pansel

#include <malloc.h>

namespace pansel {

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
}

namespace {
std::mutex g_observer_mutex;
ReadObserver g_observer;
}  // namespace

void set_read_observer(ReadObserver observer) {
  std::lock_guard<std::mutex> lock(g_observer_mutex);
  g_observer = std::move(observer);
}

void note_read(const std::filesystem::path& path) {
  std::lock_guard<std::mutex> lock(g_observer_mutex);
  if (g_observer) g_observer(path);
}

}  // namespace pansel
