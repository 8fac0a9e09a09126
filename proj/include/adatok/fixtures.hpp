#pragma once

// Synthetic piecewise-constant fixtures.
//
// A 24x24 patch grid (d = 8) over a 336x336 image, 14 pixels per patch.
// Objects are patch-aligned rectangles; each carries its own constant feature
// vector and the background is zero. Candidate pools may add exact duplicates
// and low-confidence masks so the mask pipeline has something to remove.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "adatok/mask_pipeline.hpp"
#include "adatok/object_merge.hpp"
#include "adatok/tensor_io.hpp"

namespace adatok::fixtures {

inline constexpr std::size_t kGrid = 24;
inline constexpr std::size_t kDim = 8;
inline constexpr std::size_t kPatchPixels = 14;
inline constexpr std::size_t kImage = kGrid * kPatchPixels;

struct PatchRect {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

struct Candidate {
  PatchRect rect;
  double confidence = 0.9;
};

struct Fixture {
  std::string name;
  FeatureGrid features;
  MaskSet candidates;
  std::size_t expected_objects = 0;  // masks surviving the default pipeline
  bool partitions_image = false;
};

// Multiples of 1/4, exactly representable in f16.
inline std::vector<float> object_vector(std::size_t object) {
  std::vector<float> v(kDim);
  for (std::size_t c = 0; c < kDim; ++c) {
    const int level = static_cast<int>((object * 5 + c * 3 + 1) % 13) - 6;
    v[c] = 0.25f * static_cast<float>(level == 0 ? 7 : level);
  }
  return v;
}

inline ObjectMask rect_mask(const PatchRect& r, double confidence, std::int64_t source) {
  ObjectMask m;
  m.bitmap.assign(kImage * kImage, 0);
  m.confidence = confidence;
  m.source_index = source;
  for (std::size_t y = r.y * kPatchPixels; y < (r.y + r.height) * kPatchPixels; ++y)
    for (std::size_t x = r.x * kPatchPixels; x < (r.x + r.width) * kPatchPixels; ++x)
      m.bitmap[y * kImage + x] = 1;
  return m;
}

// objects: rectangles that get a feature vector; extras: additional
// candidates that the pipeline is expected to discard.
inline Fixture build(std::string name, const std::vector<PatchRect>& objects,
                     const std::vector<Candidate>& extras, std::uint32_t seed,
                     bool partitions_image = false) {
  Fixture f;
  f.name = std::move(name);
  f.partitions_image = partitions_image;
  f.expected_objects = objects.size();

  FeatureGrid& fg = f.features;
  fg.grid_height = kGrid;
  fg.grid_width = kGrid;
  fg.dim = kDim;
  fg.values.assign(kGrid * kGrid * kDim, 0.0f);
  std::vector<float> cls(kDim, 0.0f);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto v = object_vector(i);
    const auto& r = objects[i];
    for (std::size_t y = r.y; y < r.y + r.height; ++y)
      for (std::size_t x = r.x; x < r.x + r.width; ++x)
        std::copy(v.begin(), v.end(), fg.values.begin() + static_cast<std::ptrdiff_t>((y * kGrid + x) * kDim));
    for (std::size_t c = 0; c < kDim; ++c) cls[c] += v[c];
  }
  fg.cls_vector = cls;

  std::mt19937 rng(seed);
  std::vector<float> scores(kGrid * kGrid);
  for (auto& s : scores) s = static_cast<float>(rng() >> 8) * 0x1p-24f;
  fg.attention_scores = scores;

  f.candidates.image_height = kImage;
  f.candidates.image_width = kImage;
  std::int64_t source = 0;
  for (const auto& r : objects) f.candidates.masks.push_back(rect_mask(r, 0.9, source++));
  for (const auto& e : extras) f.candidates.masks.push_back(rect_mask(e.rect, e.confidence, source++));
  return f;
}

// Five rectangles tiling the whole image, all at confidence 0.9.
inline Fixture synthetic() {
  return build("synthetic",
               {{0, 0, 12, 12}, {0, 12, 12, 12}, {12, 0, 12, 8}, {12, 8, 12, 8}, {12, 16, 12, 8}},
               {}, 5, true);
}

inline Fixture objects1() {
  return build("objects1", {{3, 5, 8, 10}}, {{{15, 2, 6, 6}, 0.5}}, 1);
}

inline Fixture objects3() {
  return build("objects3", {{2, 2, 6, 6}, {10, 12, 8, 9}, {16, 1, 5, 7}},
               {{{10, 12, 8, 9}, 0.85}, {{1, 15, 4, 6}, 0.6}}, 3);
}

inline Fixture objects12() {
  std::vector<PatchRect> rects;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) rects.push_back({1 + r * 8, 1 + c * 6, 5, 4});
  return build("objects12", rects,
               {{rects[4], 0.95}, {rects[7], 0.81}, {{0, 0, 2, 2}, 0.3}}, 12);
}

// Fixture set with object counts 1, 3, 5 and 12.
inline std::vector<Fixture> standard_set() { return {objects1(), objects3(), synthetic(), objects12()}; }

struct FixturePaths {
  std::filesystem::path features;
  std::filesystem::path masks;
  std::filesystem::path scores;
  std::filesystem::path cls;
  std::filesystem::path attention;
};

inline FixturePaths paths_for(const std::filesystem::path& dir, const std::string& name) {
  return {dir / (name + ".features.atsr"), dir / (name + ".masks.atsr"),
          dir / (name + ".scores.txt"), dir / (name + ".cls.atsr"),
          dir / (name + ".attention.atsr")};
}

inline void write_fixture(const Fixture& f, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto p = paths_for(dir, f.name);
  write_tensor(feature_grid_to_tensor(f.features, Dtype::f32), p.features);
  const auto [masks, scores] = mask_set_to_tensor(f.candidates);
  write_tensor(masks, p.masks);
  write_sidecar(scores, p.scores);
  write_tensor(TensorFile::from_floats({1, static_cast<std::uint32_t>(kDim)}, *f.features.cls_vector,
                                       Dtype::f32),
               p.cls);
  write_tensor(TensorFile::from_floats({static_cast<std::uint32_t>(kGrid), static_cast<std::uint32_t>(kGrid)},
                                       *f.features.attention_scores, Dtype::f32),
               p.attention);
}

// Loads features plus whichever priors exist next to them.
inline FeatureGrid load_features_with_priors(const std::filesystem::path& features,
                                             const std::filesystem::path& cls,
                                             const std::filesystem::path& attention) {
  FeatureGrid fg = feature_grid_from_tensor(read_tensor(features));
  if (std::filesystem::exists(cls)) {
    const auto t = read_tensor(cls);
    fg.cls_vector = t.to_floats();
  }
  if (std::filesystem::exists(attention)) {
    const auto t = read_tensor(attention);
    fg.attention_scores = t.to_floats();
  }
  fg.validate();
  return fg;
}

}  // namespace adatok::fixtures
