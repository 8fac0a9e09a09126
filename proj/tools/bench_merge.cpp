// Times merge against merge_fast and records peak heap growth for each.
//
// Output is CSV on stdout, one row per path:
//   path,grid,dim,masks,image,repeat,median_seconds,peak_alloc_bytes,field_bytes

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <new>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "adatok/object_merge.hpp"

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

constexpr std::size_t kHeader = alignof(std::max_align_t);

void* counted_alloc(std::size_t n) {
  auto* base = static_cast<unsigned char*>(std::malloc(n + kHeader));
  if (base == nullptr) throw std::bad_alloc();
  *reinterpret_cast<std::size_t*>(base) = n;
  const std::size_t live = g_live.fetch_add(n) + n;
  std::size_t peak = g_peak.load();
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
  return base + kHeader;
}

void counted_free(void* p) noexcept {
  if (p == nullptr) return;
  auto* base = static_cast<unsigned char*>(p) - kHeader;
  g_live.fetch_sub(*reinterpret_cast<std::size_t*>(base));
  std::free(base);
}

}  // namespace

void* operator new(std::size_t n) { return counted_alloc(n); }
void* operator new[](std::size_t n) { return counted_alloc(n); }
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }

namespace {

using adatok::CompressedTokenSet;
using adatok::FeatureGrid;
using adatok::MaskSet;

struct Setup {
  std::size_t grid = 24;
  std::size_t dim = 1024;
  std::size_t masks = 60;
  std::size_t image = 336;
  std::size_t repeat = 3;
  std::size_t threads = 1;
  std::uint32_t seed = 1;
};

void build(const Setup& s, FeatureGrid& fg, MaskSet& ms) {
  std::mt19937 rng(s.seed);
  std::uniform_real_distribution<float> val(-1.0f, 1.0f);
  fg.grid_height = fg.grid_width = s.grid;
  fg.dim = s.dim;
  fg.values.resize(s.grid * s.grid * s.dim);
  for (auto& v : fg.values) v = val(rng);

  ms.image_height = ms.image_width = s.image;
  std::uniform_int_distribution<std::size_t> coord(0, s.image - 1);
  for (std::size_t i = 0; i < s.masks; ++i) {
    adatok::ObjectMask m;
    m.bitmap.assign(s.image * s.image, 0);
    m.confidence = 1.0;
    m.source_index = static_cast<std::int64_t>(i);
    std::size_t y0 = coord(rng), y1 = coord(rng), x0 = coord(rng), x1 = coord(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) m.bitmap[y * s.image + x] = 1;
    ms.masks.push_back(std::move(m));
  }
}

template <typename Fn>
void measure(const char* name, const Setup& s, Fn&& fn) {
  std::vector<double> times;
  std::size_t peak = 0;
  for (std::size_t r = 0; r < s.repeat; ++r) {
    const std::size_t before = g_live.load();
    g_peak.store(before);
    const auto t0 = std::chrono::steady_clock::now();
    CompressedTokenSet out = fn();
    const auto t1 = std::chrono::steady_clock::now();
    peak = std::max(peak, g_peak.load() - before);
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
    if (out.count() != s.masks) std::cerr << "warning: unexpected token count\n";
  }
  std::sort(times.begin(), times.end());
  const std::size_t field = s.image * s.image * s.dim * sizeof(float);
  std::printf("%s,%zux%zu,%zu,%zu,%zux%zu,%zu,%.6f,%zu,%zu\n", name, s.grid, s.grid, s.dim, s.masks,
              s.image, s.image, s.repeat, times[times.size() / 2], peak, field);
}

}  // namespace

int main(int argc, char** argv) {
  Setup s;
  CLI::App app{"merge vs merge_fast: time and peak allocation"};
  app.add_option("--grid", s.grid, "patch grid side")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--dim", s.dim, "feature dim")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--masks", s.masks, "mask count")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--image", s.image, "image side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--repeat", s.repeat, "runs per path")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--threads", s.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--seed", s.seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (s.image < s.grid) {
    std::cerr << "error: image must not be smaller than the grid\n";
    return 2;
  }

  FeatureGrid fg;
  MaskSet ms;
  build(s, fg, ms);
  adatok::MergeOptions opts;
  opts.threads = s.threads;

  std::printf("path,grid,dim,masks,image,repeat,median_seconds,peak_alloc_bytes,field_bytes\n");
  measure("merge", s, [&] { return adatok::merge(fg, ms, opts); });
  measure("merge_fast", s, [&] { return adatok::merge_fast(fg, ms, opts); });
  return 0;
}
