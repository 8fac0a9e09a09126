#pragma once

// Object-level token merging.
//
// Patch features are upsampled to image resolution and every object mask is
// reduced to the mean feature over its pixels:
//
//   token_i = (1 / |m_i|) * sum_{p : m_i(p) = 1} F_up(p)
//
// One token per mask, so the compression ratio follows the object count of
// the image rather than a configured budget.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adatok/detail/parallel.hpp"
#include "adatok/errors.hpp"
#include "adatok/mask_pipeline.hpp"
#include "adatok/tensor_io.hpp"

namespace adatok {

struct FeatureGrid {
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // grid_height x grid_width x dim
  std::optional<std::vector<float>> cls_vector;        // dim
  std::optional<std::vector<float>> attention_scores;  // grid_height * grid_width

  std::size_t patch_count() const { return grid_height * grid_width; }

  std::span<const float> patch(std::size_t index) const {
    return {values.data() + index * dim, dim};
  }

  void validate() const {
    if (grid_height == 0 || grid_width == 0 || dim == 0)
      throw ShapeError("feature grid has a zero dimension");
    if (values.size() != patch_count() * dim) throw ShapeError("feature grid value count mismatch");
    if (cls_vector && cls_vector->size() != dim) throw ShapeError("cls vector length != dim");
    if (attention_scores && attention_scores->size() != patch_count())
      throw ShapeError("attention score count != patch count");
  }
};

inline FeatureGrid feature_grid_from_tensor(const TensorFile& t) {
  if (t.dims.size() != 3) throw ShapeError("feature tensor must be rank 3 (H, W, C)");
  if (t.dtype == Dtype::u8) throw UnsupportedDtype("feature tensor must be f16 or f32");
  FeatureGrid fg;
  fg.grid_height = t.dims[0];
  fg.grid_width = t.dims[1];
  fg.dim = t.dims[2];
  fg.values = t.to_floats();
  fg.validate();
  return fg;
}

inline TensorFile feature_grid_to_tensor(const FeatureGrid& fg, Dtype dtype) {
  return TensorFile::from_floats({static_cast<std::uint32_t>(fg.grid_height),
                                  static_cast<std::uint32_t>(fg.grid_width),
                                  static_cast<std::uint32_t>(fg.dim)},
                                 fg.values, dtype);
}

enum class UpsampleMode { nearest, bilinear };

inline UpsampleMode parse_upsample_mode(std::string_view name) {
  if (name == "nearest") return UpsampleMode::nearest;
  if (name == "bilinear") return UpsampleMode::bilinear;
  throw InvalidArgument("unknown upsample mode '" + std::string(name) + "'");
}

// Pixel-resolution feature field (h x w x d).
struct PixelField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> at(std::size_t y, std::size_t x) const {
    return {values.data() + (y * width + x) * dim, dim};
  }
};

inline PixelField upsample_features(const FeatureGrid& fg, std::size_t h, std::size_t w,
                                    UpsampleMode mode) {
  fg.validate();
  if (h < fg.grid_height || w < fg.grid_width)
    throw InvalidArgument("cannot upsample below grid resolution");
  const std::size_t d = fg.dim;
  PixelField out{h, w, d, std::vector<float>(h * w * d)};

  if (mode == UpsampleMode::nearest) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t py = y * fg.grid_height / h;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t px = x * fg.grid_width / w;
        const auto src = fg.patch(py * fg.grid_width + px);
        std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>((y * w + x) * d));
      }
    }
    return out;
  }

  // Bilinear, half-pixel centres (align_corners = false), edge-clamped.
  const auto source_coord = [](std::size_t dst, std::size_t dst_len, std::size_t src_len) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_len) /
                   static_cast<double>(dst_len) - 0.5;
    s = std::max(s, 0.0);
    auto i0 = static_cast<std::size_t>(s);
    i0 = std::min(i0, src_len - 1);
    const std::size_t i1 = std::min(i0 + 1, src_len - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < h; ++y) {
    const auto [y0, y1, ly] = source_coord(y, h, fg.grid_height);
    for (std::size_t x = 0; x < w; ++x) {
      const auto [x0, x1, lx] = source_coord(x, w, fg.grid_width);
      const auto v00 = fg.patch(y0 * fg.grid_width + x0);
      const auto v01 = fg.patch(y0 * fg.grid_width + x1);
      const auto v10 = fg.patch(y1 * fg.grid_width + x0);
      const auto v11 = fg.patch(y1 * fg.grid_width + x1);
      float* dst = out.values.data() + (y * w + x) * d;
      for (std::size_t c = 0; c < d; ++c) {
        const double top = (1.0 - lx) * v00[c] + lx * v01[c];
        const double bottom = (1.0 - lx) * v10[c] + lx * v11[c];
        dst[c] = static_cast<float>((1.0 - ly) * top + ly * bottom);
      }
    }
  }
  return out;
}

struct TokenMeta {
  std::int64_t mask_source_index = 0;  // -1 marks the residual token
  std::uint64_t mask_area_pixels = 0;

  friend bool operator==(const TokenMeta&, const TokenMeta&) = default;
};

struct TokenOrigin {
  std::uint32_t image_height = 0;
  std::uint32_t image_width = 0;
  std::uint32_t grid_height = 0;
  std::uint32_t grid_width = 0;

  friend bool operator==(const TokenOrigin&, const TokenOrigin&) = default;
};

inline constexpr std::int64_t kResidualSource = -1;

struct CompressedTokenSet {
  std::size_t dim = 0;
  std::vector<float> tokens;  // count x dim
  std::vector<TokenMeta> meta;
  TokenOrigin origin;
  bool residual_included = false;

  std::size_t count() const { return meta.size(); }

  std::span<const float> token(std::size_t i) const { return {tokens.data() + i * dim, dim}; }

  friend bool operator==(const CompressedTokenSet&, const CompressedTokenSet&) = default;
};

struct MergeOptions {
  UpsampleMode mode = UpsampleMode::nearest;
  bool residual_token = false;
  std::size_t threads = 1;
};

namespace detail {

inline void check_merge_inputs(const FeatureGrid& fg, const MaskSet& ms) {
  fg.validate();
  check_mask_shapes(ms);
  if (ms.image_height < fg.grid_height || ms.image_width < fg.grid_width)
    throw InvalidArgument("image resolution is below the feature grid resolution");
  for (const auto& m : ms.masks)
    if (m.area() == 0)
      throw EmptyMaskError("mask " + std::to_string(m.source_index) + " has no pixels");
}

inline CompressedTokenSet empty_token_set(const FeatureGrid& fg, const MaskSet& ms) {
  CompressedTokenSet cts;
  cts.dim = fg.dim;
  cts.origin = {static_cast<std::uint32_t>(ms.image_height),
                static_cast<std::uint32_t>(ms.image_width),
                static_cast<std::uint32_t>(fg.grid_height),
                static_cast<std::uint32_t>(fg.grid_width)};
  return cts;
}

inline std::vector<std::uint8_t> uncovered_pixels(const MaskSet& ms) {
  std::vector<std::uint8_t> uncovered(ms.image_height * ms.image_width, 1);
  for (const auto& m : ms.masks)
    for (std::size_t i = 0; i < uncovered.size(); ++i)
      if (m.bitmap[i]) uncovered[i] = 0;
  return uncovered;
}

}  // namespace detail

// Reference path: materializes the full h x w x d field.
inline CompressedTokenSet merge(const FeatureGrid& fg, const MaskSet& ms,
                                const MergeOptions& opts = {}) {
  detail::check_merge_inputs(fg, ms);
  const std::size_t d = fg.dim;
  const PixelField field = upsample_features(fg, ms.image_height, ms.image_width, opts.mode);

  std::vector<std::uint8_t> residual;
  if (opts.residual_token) residual = detail::uncovered_pixels(ms);
  const bool has_residual =
      opts.residual_token && std::any_of(residual.begin(), residual.end(), [](auto b) { return b; });

  std::vector<const std::vector<std::uint8_t>*> bitmaps;
  for (const auto& m : ms.masks) bitmaps.push_back(&m.bitmap);
  if (has_residual) bitmaps.push_back(&residual);

  CompressedTokenSet cts = detail::empty_token_set(fg, ms);
  cts.residual_included = has_residual;
  cts.tokens.assign(bitmaps.size() * d, 0.0f);
  cts.meta.resize(bitmaps.size());

  detail::parallel_for(bitmaps.size(), opts.threads, [&](std::size_t t) {
    const auto& bits = *bitmaps[t];
    std::vector<double> acc(d, 0.0);
    std::uint64_t area = 0;
    for (std::size_t p = 0; p < bits.size(); ++p) {
      if (!bits[p]) continue;
      ++area;
      const float* f = field.values.data() + p * d;
      for (std::size_t c = 0; c < d; ++c) acc[c] += f[c];
    }
    for (std::size_t c = 0; c < d; ++c)
      cts.tokens[t * d + c] = static_cast<float>(acc[c] / static_cast<double>(area));
    const bool is_residual = t == ms.size();
    cts.meta[t] = {is_residual ? kResidualSource : ms.masks[t].source_index, area};
  });
  return cts;
}

// Nearest-mode rewrite: each token is a weighted mean over patches, the weight
// being the number of mask pixels that map to the patch. Memory stays
// O(patches * d) regardless of image resolution.
inline CompressedTokenSet merge_fast(const FeatureGrid& fg, const MaskSet& ms,
                                     const MergeOptions& opts = {}) {
  if (opts.mode != UpsampleMode::nearest)
    throw UnsupportedMode("merge_fast supports nearest upsampling only");
  detail::check_merge_inputs(fg, ms);
  const std::size_t d = fg.dim;
  const std::size_t h = ms.image_height;
  const std::size_t w = ms.image_width;

  std::vector<std::size_t> row_patch(h);
  std::vector<std::size_t> col_patch(w);
  for (std::size_t y = 0; y < h; ++y) row_patch[y] = y * fg.grid_height / h;
  for (std::size_t x = 0; x < w; ++x) col_patch[x] = x * fg.grid_width / w;

  std::vector<std::uint8_t> residual;
  if (opts.residual_token) residual = detail::uncovered_pixels(ms);
  const bool has_residual =
      opts.residual_token && std::any_of(residual.begin(), residual.end(), [](auto b) { return b; });

  std::vector<const std::vector<std::uint8_t>*> bitmaps;
  for (const auto& m : ms.masks) bitmaps.push_back(&m.bitmap);
  if (has_residual) bitmaps.push_back(&residual);

  CompressedTokenSet cts = detail::empty_token_set(fg, ms);
  cts.residual_included = has_residual;
  cts.tokens.assign(bitmaps.size() * d, 0.0f);
  cts.meta.resize(bitmaps.size());

  detail::parallel_for(bitmaps.size(), opts.threads, [&](std::size_t t) {
    const auto& bits = *bitmaps[t];
    std::vector<std::uint64_t> weight(fg.patch_count(), 0);
    std::uint64_t area = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (bits[y * w + x]) {
          ++weight[row_patch[y] * fg.grid_width + col_patch[x]];
          ++area;
        }
    std::vector<double> acc(d, 0.0);
    for (std::size_t p = 0; p < weight.size(); ++p) {
      if (weight[p] == 0) continue;
      const double wgt = static_cast<double>(weight[p]);
      const float* f = fg.values.data() + p * d;
      for (std::size_t c = 0; c < d; ++c) acc[c] += wgt * f[c];
    }
    for (std::size_t c = 0; c < d; ++c)
      cts.tokens[t * d + c] = static_cast<float>(acc[c] / static_cast<double>(area));
    const bool is_residual = t == ms.size();
    cts.meta[t] = {is_residual ? kResidualSource : ms.masks[t].source_index, area};
  });
  return cts;
}

// r = k / (grid_height * grid_width).
inline double compression_ratio(const CompressedTokenSet& cts) {
  const double patches = static_cast<double>(cts.origin.grid_height) * cts.origin.grid_width;
  if (patches <= 0.0) throw InvalidArgument("token set has no grid origin");
  return static_cast<double>(cts.count()) / patches;
}

}  // namespace adatok
