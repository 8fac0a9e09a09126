#pragma once

// Test-only reference implementations. Nothing here calls into the code paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "adatok/mask_pipeline.hpp"
#include "adatok/object_merge.hpp"

namespace oracle {

// Value of a binary16 bit pattern, computed from the format definition.
inline double half_value(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  const double mag = exp == 0 ? std::ldexp(static_cast<double>(mant), -24)
                              : std::ldexp(static_cast<double>(1024 + mant), exp - 25);
  return sign ? -mag : mag;
}

// Round-to-nearest-even by exhaustive search over all non-negative halves.
// Pattern 0x7c00 stands in for the first value past the largest finite half,
// 2^16, so overflow ties resolve to infinity like the IEEE rule.
class HalfRounder {
 public:
  HalfRounder() {
    for (std::uint32_t h = 0; h < 0x7c00; ++h) values_.push_back(half_value(static_cast<std::uint16_t>(h)));
    values_.push_back(65536.0);
  }

  std::uint16_t round(float f) const {
    const double x = std::fabs(static_cast<double>(f));
    const std::uint16_t sign = std::signbit(f) ? 0x8000 : 0;
    auto it = std::lower_bound(values_.begin(), values_.end(), x);
    std::uint16_t code;
    if (it == values_.end()) {
      code = 0x7c00;
    } else if (*it == x || it == values_.begin()) {
      code = static_cast<std::uint16_t>(it - values_.begin());
    } else {
      const auto hi = static_cast<std::uint16_t>(it - values_.begin());
      const auto lo = static_cast<std::uint16_t>(hi - 1);
      const double dlo = x - values_[lo];
      const double dhi = values_[hi] - x;
      if (dlo < dhi) code = lo;
      else if (dhi < dlo) code = hi;
      else code = (lo % 2 == 0) ? lo : hi;
    }
    return static_cast<std::uint16_t>(sign | code);
  }

 private:
  std::vector<double> values_;
};

// Scalar bilinear sample (half-pixel centres, edge clamp) of one channel.
inline double bilinear_sample(const adatok::FeatureGrid& fg, std::size_t c, std::size_t y,
                              std::size_t x, std::size_t h, std::size_t w) {
  const auto coord = [](std::size_t i, std::size_t out, std::size_t in, long& i0, long& i1, double& t) {
    double s = (i + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    if (s < 0) s = 0;
    i0 = static_cast<long>(std::floor(s));
    if (i0 > static_cast<long>(in) - 1) i0 = static_cast<long>(in) - 1;
    i1 = std::min(i0 + 1, static_cast<long>(in) - 1);
    t = s - static_cast<double>(i0);
  };
  long y0, y1, x0, x1;
  double ty, tx;
  coord(y, h, fg.grid_height, y0, y1, ty);
  coord(x, w, fg.grid_width, x0, x1, tx);
  const auto v = [&](long py, long px) {
    return static_cast<double>(fg.values[(static_cast<std::size_t>(py) * fg.grid_width + static_cast<std::size_t>(px)) * fg.dim + c]);
  };
  return v(y0, x0) * (1 - ty) * (1 - tx) + v(y0, x1) * (1 - ty) * tx + v(y1, x0) * ty * (1 - tx) +
         v(y1, x1) * ty * tx;
}

inline double nearest_sample(const adatok::FeatureGrid& fg, std::size_t c, std::size_t y,
                             std::size_t x, std::size_t h, std::size_t w) {
  const auto py = static_cast<std::size_t>(std::floor(static_cast<double>(y) * fg.grid_height / h));
  const auto px = static_cast<std::size_t>(std::floor(static_cast<double>(x) * fg.grid_width / w));
  return fg.values[(py * fg.grid_width + px) * fg.dim + c];
}

// Masked average over the upsampled field with explicit pixel loops.
inline std::vector<std::vector<double>> brute_force_merge(const adatok::FeatureGrid& fg,
                                                          const adatok::MaskSet& ms,
                                                          adatok::UpsampleMode mode,
                                                          bool residual) {
  const std::size_t h = ms.image_height;
  const std::size_t w = ms.image_width;
  std::vector<std::vector<std::uint8_t>> regions;
  for (const auto& m : ms.masks) regions.push_back(m.bitmap);
  if (residual) {
    std::vector<std::uint8_t> rest(h * w, 1);
    for (const auto& m : ms.masks)
      for (std::size_t i = 0; i < rest.size(); ++i)
        if (m.bitmap[i]) rest[i] = 0;
    if (std::count(rest.begin(), rest.end(), 1) > 0) regions.push_back(rest);
  }
  std::vector<std::vector<double>> tokens;
  for (const auto& bits : regions) {
    std::vector<long double> sum(fg.dim, 0.0L);
    long double area = 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!bits[y * w + x]) continue;
        area += 1;
        for (std::size_t c = 0; c < fg.dim; ++c)
          sum[c] += mode == adatok::UpsampleMode::nearest ? nearest_sample(fg, c, y, x, h, w)
                                                          : bilinear_sample(fg, c, y, x, h, w);
      }
    }
    std::vector<double> t(fg.dim);
    for (std::size_t c = 0; c < fg.dim; ++c) t[c] = static_cast<double>(sum[c] / area);
    tokens.push_back(std::move(t));
  }
  return tokens;
}

// max |got - want| / max |want| over the whole token set.
inline double normwise_relative_error(const adatok::CompressedTokenSet& got,
                                      const std::vector<std::vector<double>>& want) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t t = 0; t < want.size(); ++t)
    for (std::size_t c = 0; c < want[t].size(); ++c) {
      diff = std::max(diff, std::fabs(static_cast<double>(got.token(t)[c]) - want[t][c]));
      scale = std::max(scale, std::fabs(want[t][c]));
    }
  return scale == 0.0 ? diff : diff / scale;
}

inline double normwise_relative_error(const adatok::CompressedTokenSet& got,
                                      const adatok::CompressedTokenSet& want) {
  std::vector<std::vector<double>> w(want.count(), std::vector<double>(want.dim));
  for (std::size_t t = 0; t < want.count(); ++t)
    for (std::size_t c = 0; c < want.dim; ++c) w[t][c] = want.token(t)[c];
  return normwise_relative_error(got, w);
}

struct Instance {
  adatok::FeatureGrid features;
  adatok::MaskSet masks;
};

// grid <= 8x8, image <= 64x64 (never below the grid), d <= 16, 1..10 masks.
// Masks are random rectangles or random scatters; all non-empty.
inline Instance random_instance(std::mt19937& rng) {
  auto uni = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  Instance in;
  auto& fg = in.features;
  fg.grid_height = uni(1, 8);
  fg.grid_width = uni(1, 8);
  fg.dim = uni(1, 16);
  std::uniform_real_distribution<float> val(-4.0f, 4.0f);
  fg.values.resize(fg.grid_height * fg.grid_width * fg.dim);
  for (auto& v : fg.values) v = val(rng);

  auto& ms = in.masks;
  ms.image_height = uni(fg.grid_height, 64);
  ms.image_width = uni(fg.grid_width, 64);
  const std::size_t n = uni(1, 10);
  for (std::size_t i = 0; i < n; ++i) {
    adatok::ObjectMask m;
    m.bitmap.assign(ms.image_height * ms.image_width, 0);
    m.confidence = 1.0;
    m.source_index = static_cast<std::int64_t>(i);
    if (uni(0, 1) == 0) {
      const std::size_t y0 = uni(0, ms.image_height - 1), y1 = uni(y0, ms.image_height - 1);
      const std::size_t x0 = uni(0, ms.image_width - 1), x1 = uni(x0, ms.image_width - 1);
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) m.bitmap[y * ms.image_width + x] = 1;
    } else {
      const double density = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
      std::bernoulli_distribution on(density);
      for (auto& b : m.bitmap) b = on(rng) ? 1 : 0;
      m.bitmap[uni(0, m.bitmap.size() - 1)] = 1;
    }
    ms.masks.push_back(std::move(m));
  }
  return in;
}

}  // namespace oracle
