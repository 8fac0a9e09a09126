#pragma once

// Patch-level comparison strategies and a reconstruction-error proxy.
//
// Every strategy maps a FeatureGrid to a CompressedTokenSet together with a
// patch -> token assignment, so all of them can be scored by the same
// retention_error. These are single-shot variants applied before the first
// decoder layer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "adatok/errors.hpp"
#include "adatok/mask_pipeline.hpp"
#include "adatok/object_merge.hpp"

namespace adatok {

inline constexpr std::int64_t kDroppedPatch = -1;

// assignment[patch] is a token index, or kDroppedPatch.
using PatchAssignment = std::vector<std::int64_t>;

struct StrategyResult {
  CompressedTokenSet tokens;
  PatchAssignment assignment;
};

enum class Strategy { object_merge, topk_drop, grid_pool, cls_merge };

constexpr std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::object_merge: return "object_merge";
    case Strategy::topk_drop: return "topk_drop";
    case Strategy::grid_pool: return "grid_pool";
    case Strategy::cls_merge: return "cls_merge";
  }
  return "?";
}

namespace detail {

inline CompressedTokenSet patch_token_set(const FeatureGrid& fg) {
  CompressedTokenSet cts;
  cts.dim = fg.dim;
  // No pixel information at patch level: the origin image is the grid itself
  // and token areas count patches.
  cts.origin = {static_cast<std::uint32_t>(fg.grid_height), static_cast<std::uint32_t>(fg.grid_width),
                static_cast<std::uint32_t>(fg.grid_height), static_cast<std::uint32_t>(fg.grid_width)};
  return cts;
}

inline void check_budget(const FeatureGrid& fg, std::size_t budget) {
  if (budget < 1 || budget > fg.patch_count())
    throw InvalidArgument("budget must be in [1, " + std::to_string(fg.patch_count()) + "]");
}

// Indices sorted by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

// Keeps the `budget` patches with the highest attention score, unchanged and
// in patch order.
inline StrategyResult topk_drop(const FeatureGrid& fg, std::size_t budget) {
  fg.validate();
  if (!fg.attention_scores) throw MissingPrior("topk_drop needs attention scores");
  detail::check_budget(fg, budget);
  const std::vector<double> scores(fg.attention_scores->begin(), fg.attention_scores->end());
  auto kept = detail::rank_descending(scores);
  kept.resize(budget);
  std::sort(kept.begin(), kept.end());

  StrategyResult res{detail::patch_token_set(fg), PatchAssignment(fg.patch_count(), kDroppedPatch)};
  for (std::size_t t = 0; t < kept.size(); ++t) {
    const auto v = fg.patch(kept[t]);
    res.tokens.tokens.insert(res.tokens.tokens.end(), v.begin(), v.end());
    res.tokens.meta.push_back({static_cast<std::int64_t>(kept[t]), 1});
    res.assignment[kept[t]] = static_cast<std::int64_t>(t);
  }
  return res;
}

// Non-overlapping block means over an out_h x out_w tiling.
inline StrategyResult grid_pool(const FeatureGrid& fg, std::size_t out_h, std::size_t out_w) {
  fg.validate();
  if (out_h == 0 || out_w == 0 || fg.grid_height % out_h != 0 || fg.grid_width % out_w != 0)
    throw InvalidArgument("grid_pool output dims must divide the grid dims");
  const std::size_t bh = fg.grid_height / out_h;
  const std::size_t bw = fg.grid_width / out_w;
  const std::size_t d = fg.dim;

  StrategyResult res{detail::patch_token_set(fg), PatchAssignment(fg.patch_count(), kDroppedPatch)};
  res.tokens.tokens.assign(out_h * out_w * d, 0.0f);
  for (std::size_t by = 0; by < out_h; ++by) {
    for (std::size_t bx = 0; bx < out_w; ++bx) {
      const std::size_t t = by * out_w + bx;
      std::vector<double> acc(d, 0.0);
      for (std::size_t y = by * bh; y < (by + 1) * bh; ++y) {
        for (std::size_t x = bx * bw; x < (bx + 1) * bw; ++x) {
          const std::size_t p = y * fg.grid_width + x;
          const auto v = fg.patch(p);
          for (std::size_t c = 0; c < d; ++c) acc[c] += v[c];
          res.assignment[p] = static_cast<std::int64_t>(t);
        }
      }
      for (std::size_t c = 0; c < d; ++c)
        res.tokens.tokens[t * d + c] = static_cast<float>(acc[c] / static_cast<double>(bh * bw));
      res.tokens.meta.push_back({static_cast<std::int64_t>(by * bh * fg.grid_width + bx * bw),
                                 static_cast<std::uint64_t>(bh * bw)});
    }
  }
  return res;
}

struct PoolShape {
  std::size_t height = 0;
  std::size_t width = 0;
};

// Largest divisor tiling with at most `budget` tokens; ties prefer the
// squarer shape, then the shorter one.
inline PoolShape grid_pool_shape_for_budget(const FeatureGrid& fg, std::size_t budget) {
  detail::check_budget(fg, budget);
  PoolShape best{1, 1};
  for (std::size_t h = 1; h <= fg.grid_height; ++h) {
    if (fg.grid_height % h != 0) continue;
    for (std::size_t w = 1; w <= fg.grid_width; ++w) {
      if (fg.grid_width % w != 0 || h * w > budget) continue;
      const auto skew = [](const PoolShape& s) {
        return s.height > s.width ? s.height - s.width : s.width - s.height;
      };
      const PoolShape cand{h, w};
      const std::size_t area = h * w;
      const std::size_t best_area = best.height * best.width;
      if (area > best_area || (area == best_area && skew(cand) < skew(best)))
        best = cand;
    }
  }
  return best;
}

// Seeds `budget` centres at the patches most cosine-similar to the CLS
// vector, assigns each patch to its nearest seed (squared L2, ties to the
// lower patch index) and averages every cluster.
inline StrategyResult cls_merge(const FeatureGrid& fg, std::size_t budget) {
  fg.validate();
  if (!fg.cls_vector) throw MissingPrior("cls_merge needs a CLS vector");
  detail::check_budget(fg, budget);
  const std::size_t n = fg.patch_count();
  const std::size_t d = fg.dim;
  const auto& cls = *fg.cls_vector;

  double cls_norm = 0.0;
  for (float c : cls) cls_norm += static_cast<double>(c) * c;
  cls_norm = std::sqrt(cls_norm);

  std::vector<double> sim(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const auto v = fg.patch(p);
    double dot = 0.0;
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += static_cast<double>(v[c]) * cls[c];
      norm += static_cast<double>(v[c]) * v[c];
    }
    norm = std::sqrt(norm);
    sim[p] = (norm > 0.0 && cls_norm > 0.0) ? dot / (norm * cls_norm) : 0.0;
  }
  auto seeds = detail::rank_descending(sim);
  seeds.resize(budget);
  std::sort(seeds.begin(), seeds.end());

  StrategyResult res{detail::patch_token_set(fg), PatchAssignment(n, kDroppedPatch)};
  std::vector<std::vector<double>> acc(budget, std::vector<double>(d, 0.0));
  std::vector<std::uint64_t> members(budget, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const auto v = fg.patch(p);
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t s = 0; s < budget; ++s) {
      const auto c = fg.patch(seeds[s]);
      double dist = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = static_cast<double>(v[i]) - c[i];
        dist += diff * diff;
      }
      if (s == 0 || dist < best_dist) {
        best = s;
        best_dist = dist;
      }
    }
    res.assignment[p] = static_cast<std::int64_t>(best);
    ++members[best];
    for (std::size_t c = 0; c < d; ++c) acc[best][c] += v[c];
  }

  res.tokens.tokens.resize(budget * d);
  for (std::size_t s = 0; s < budget; ++s) {
    const auto seed = fg.patch(seeds[s]);
    for (std::size_t c = 0; c < d; ++c) {
      res.tokens.tokens[s * d + c] =
          members[s] == 0 ? seed[c] : static_cast<float>(acc[s][c] / static_cast<double>(members[s]));
    }
    res.tokens.meta.push_back({static_cast<std::int64_t>(seeds[s]), members[s]});
  }
  return res;
}

// Maps each patch to the merged token whose region covers most of the patch's
// pixels. Uncovered pixels compete as their own region, which maps to the
// residual token when present and is dropped otherwise. Ties go to the
// earlier mask.
inline PatchAssignment object_merge_assignment(const FeatureGrid& fg, const MaskSet& ms,
                                               const CompressedTokenSet& cts) {
  const std::size_t h = ms.image_height;
  const std::size_t w = ms.image_width;
  const std::size_t n = fg.patch_count();
  const std::size_t regions = ms.size() + 1;  // masks, then "uncovered"
  std::vector<std::uint64_t> counts(n * regions, 0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t py = y * fg.grid_height / h;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = py * fg.grid_width + x * fg.grid_width / w;
      bool covered = false;
      for (std::size_t m = 0; m < ms.size(); ++m) {
        if (ms.masks[m].bitmap[y * w + x]) {
          ++counts[p * regions + m];
          covered = true;
        }
      }
      if (!covered) ++counts[p * regions + ms.size()];
    }
  }
  PatchAssignment out(n, kDroppedPatch);
  for (std::size_t p = 0; p < n; ++p) {
    const auto* row = counts.data() + p * regions;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + regions) - row);
    if (best < ms.size())
      out[p] = static_cast<std::int64_t>(best);
    else if (cts.residual_included)
      out[p] = static_cast<std::int64_t>(ms.size());
  }
  return out;
}

inline StrategyResult object_merge_strategy(const FeatureGrid& fg, const MaskSet& ms,
                                            const MergeOptions& opts = {}) {
  StrategyResult res;
  res.tokens = opts.mode == UpsampleMode::nearest ? merge_fast(fg, ms, opts) : merge(fg, ms, opts);
  res.assignment = object_merge_assignment(fg, ms, res.tokens);
  return res;
}

enum class DroppedTarget { zero, global_mean };

// Mean squared error over all patches and channels between each patch vector
// and the token it is assigned to. Dropped patches are compared with the zero
// vector, or with the global patch mean.
inline double retention_error(const FeatureGrid& fg, const CompressedTokenSet& cts,
                              const PatchAssignment& assignment,
                              DroppedTarget dropped = DroppedTarget::zero) {
  fg.validate();
  if (assignment.size() != fg.patch_count())
    throw ShapeError("assignment must cover every patch");
  if (cts.dim != fg.dim) throw ShapeError("token dim differs from feature dim");
  const std::size_t d = fg.dim;

  std::vector<double> fallback(d, 0.0);
  if (dropped == DroppedTarget::global_mean) {
    for (std::size_t p = 0; p < fg.patch_count(); ++p) {
      const auto v = fg.patch(p);
      for (std::size_t c = 0; c < d; ++c) fallback[c] += v[c];
    }
    for (auto& f : fallback) f /= static_cast<double>(fg.patch_count());
  }

  double sum = 0.0;
  for (std::size_t p = 0; p < fg.patch_count(); ++p) {
    const auto v = fg.patch(p);
    const std::int64_t t = assignment[p];
    if (t != kDroppedPatch && (t < 0 || static_cast<std::size_t>(t) >= cts.count()))
      throw ShapeError("assignment refers to a missing token");
    for (std::size_t c = 0; c < d; ++c) {
      const double target = t == kDroppedPatch ? fallback[c] : cts.token(static_cast<std::size_t>(t))[c];
      const double diff = static_cast<double>(v[c]) - target;
      sum += diff * diff;
    }
  }
  return sum / static_cast<double>(fg.patch_count() * d);
}

}  // namespace adatok
