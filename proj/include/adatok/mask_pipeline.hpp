#pragma once

// Candidate mask pool -> filtered, deduplicated MaskSet.
//
// Selection keeps a candidate iff at least one grid prompt point lands inside
// it. Confidence filtering is inclusive (confidence >= sigma survives).
// Deduplication is a greedy IoU suppression pass in canonical order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adatok/errors.hpp"
#include "adatok/tensor_io.hpp"

namespace adatok {

struct ObjectMask {
  std::vector<std::uint8_t> bitmap;  // row-major H x W, 1 = object pixel
  double confidence = 0.0;
  std::int64_t source_index = 0;

  std::size_t area() const {
    return static_cast<std::size_t>(std::count_if(bitmap.begin(), bitmap.end(),
                                                  [](std::uint8_t b) { return b != 0; }));
  }

  friend bool operator==(const ObjectMask&, const ObjectMask&) = default;
};

struct MaskSet {
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::vector<ObjectMask> masks;

  std::size_t size() const { return masks.size(); }
  bool empty() const { return masks.empty(); }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

struct GridPromptConfig {
  std::size_t points_per_side = 32;
  double sigma = 0.8;
  double iou_dedup_threshold = 0.9;
};

struct GridPoint {
  std::size_t x = 0;
  std::size_t y = 0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

inline void check_mask_shapes(const MaskSet& ms) {
  const std::size_t pixels = ms.image_height * ms.image_width;
  for (const auto& m : ms.masks)
    if (m.bitmap.size() != pixels)
      throw ShapeError("mask " + std::to_string(m.source_index) + " has " +
                       std::to_string(m.bitmap.size()) + " pixels, image has " +
                       std::to_string(pixels));
}

// Descending area, ties by ascending source_index.
inline void canonicalize(MaskSet& ms) {
  std::vector<std::pair<std::size_t, std::size_t>> keyed;  // (area, position)
  keyed.reserve(ms.masks.size());
  for (std::size_t i = 0; i < ms.masks.size(); ++i) keyed.emplace_back(ms.masks[i].area(), i);
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ms.masks[a.second].source_index < ms.masks[b.second].source_index;
  });
  std::vector<ObjectMask> sorted;
  sorted.reserve(ms.masks.size());
  for (const auto& [area, pos] : keyed) sorted.push_back(std::move(ms.masks[pos]));
  ms.masks = std::move(sorted);
}

// p x p prompt points, x = floor((j + 0.5) * w / p), y = floor((i + 0.5) * h / p),
// ordered row by row.
inline std::vector<GridPoint> grid_points(std::size_t p, std::size_t h, std::size_t w) {
  if (p == 0 || h == 0 || w == 0)
    throw InvalidArgument("grid_points needs positive p and image dims");
  std::vector<GridPoint> pts;
  pts.reserve(p * p);
  // (2k + 1) * n / (2p) is the exact integer form of floor((k + 0.5) * n / p).
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      pts.push_back({(2 * j + 1) * w / (2 * p), (2 * i + 1) * h / (2 * p)});
  return pts;
}

inline MaskSet select_by_grid(const MaskSet& candidates, const GridPromptConfig& cfg) {
  check_mask_shapes(candidates);
  MaskSet out{candidates.image_height, candidates.image_width, {}};
  if (candidates.empty()) return out;
  const auto pts = grid_points(cfg.points_per_side, candidates.image_height, candidates.image_width);
  for (const auto& m : candidates.masks) {
    const bool hit = std::any_of(pts.begin(), pts.end(), [&](const GridPoint& pt) {
      return m.bitmap[pt.y * candidates.image_width + pt.x] != 0;
    });
    if (hit) out.masks.push_back(m);
  }
  canonicalize(out);
  return out;
}

inline MaskSet filter_confidence(const MaskSet& ms, double sigma) {
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw InvalidArgument("sigma must be in [0,1]");
  MaskSet out{ms.image_height, ms.image_width, {}};
  for (const auto& m : ms.masks)
    if (m.confidence >= sigma) out.masks.push_back(m);
  canonicalize(out);
  return out;
}

inline double mask_iou(const ObjectMask& a, const ObjectMask& b) {
  if (a.bitmap.size() != b.bitmap.size()) throw ShapeError("IoU of masks with different sizes");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bitmap.size(); ++i) {
    const bool x = a.bitmap[i] != 0;
    const bool y = b.bitmap[i] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline MaskSet dedup_by_iou(const MaskSet& ms, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InvalidArgument("IoU threshold must be in [0,1]");
  check_mask_shapes(ms);
  MaskSet ordered = ms;
  canonicalize(ordered);
  MaskSet out{ms.image_height, ms.image_width, {}};
  for (auto& m : ordered.masks) {
    const bool dup = std::any_of(out.masks.begin(), out.masks.end(), [&](const ObjectMask& kept) {
      return mask_iou(m, kept) > threshold;
    });
    if (!dup) out.masks.push_back(std::move(m));
  }
  return out;
}

// Grid selection, confidence filter, dedup; empty masks never survive.
inline MaskSet run_mask_pipeline(const MaskSet& candidates, const GridPromptConfig& cfg) {
  MaskSet selected = select_by_grid(candidates, cfg);
  std::erase_if(selected.masks, [](const ObjectMask& m) { return m.area() == 0; });
  return dedup_by_iou(filter_confidence(selected, cfg.sigma), cfg.iou_dedup_threshold);
}

// Builds a candidate pool from a (num_masks, H, W) u8 tensor and its sidecar.
// Slice i gets source_index i; order follows the file.
inline MaskSet mask_set_from_tensor(const TensorFile& masks, const ScoreSidecar& scores) {
  if (masks.dtype != Dtype::u8) throw UnsupportedDtype("mask tensor must be u8");
  if (masks.dims.size() != 3) throw ShapeError("mask tensor must be rank 3 (num_masks, H, W)");
  const std::size_t n = masks.dims[0];
  const std::size_t h = masks.dims[1];
  const std::size_t w = masks.dims[2];
  validate_sidecar(scores, n);
  MaskSet ms{h, w, {}};
  ms.masks.resize(n);
  for (const auto& r : scores.records) ms.masks[r.mask_index].confidence = r.confidence;
  for (std::size_t i = 0; i < n; ++i) {
    auto first = masks.payload.begin() + static_cast<std::ptrdiff_t>(i * h * w);
    ms.masks[i].bitmap.assign(first, first + static_cast<std::ptrdiff_t>(h * w));
    for (auto& b : ms.masks[i].bitmap) b = b ? 1 : 0;
    ms.masks[i].source_index = static_cast<std::int64_t>(i);
  }
  return ms;
}

inline std::pair<TensorFile, ScoreSidecar> mask_set_to_tensor(const MaskSet& ms) {
  check_mask_shapes(ms);
  std::vector<std::uint8_t> bits;
  bits.reserve(ms.size() * ms.image_height * ms.image_width);
  ScoreSidecar sc;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    for (auto b : ms.masks[i].bitmap) bits.push_back(b ? 1 : 0);
    sc.records.push_back({static_cast<std::uint32_t>(i), ms.masks[i].confidence});
  }
  return {TensorFile::from_u8({static_cast<std::uint32_t>(ms.size()),
                               static_cast<std::uint32_t>(ms.image_height),
                               static_cast<std::uint32_t>(ms.image_width)},
                              std::move(bits)),
          sc};
}

}  // namespace adatok
