#pragma once

// Prefill cost, compression benefit and transmission bandwidth.
//
// With L decoder layers, compression applied at layer k and |X_k| = r |X_1|,
// attention cost is proportional to
//
//   T(r) = (k - 1) |X_1|^2 + (L - k) (r |X_1|)^2
//
// and the saving over the uncompressed run is
//
//   T(1) - T(r) = (L - k) (1 - r^2) |X_1|^2.
//
// Costs are reported normalized by |X_1|^2. Sizes use KB = 1024 bytes and
// MB = 1024 KB.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adatok/errors.hpp"
#include "adatok/tensor_io.hpp"

namespace adatok {

struct DecoderConfig {
  std::uint64_t num_layers = 32;
  std::uint64_t compress_at_layer = 1;
  std::uint64_t pre_tokens = 576;

  void validate() const {
    if (num_layers == 0) throw InvalidArgument("num_layers must be positive");
    if (compress_at_layer < 1 || compress_at_layer > num_layers)
      throw InvalidArgument("compress_at_layer must be in [1, num_layers]");
    if (pre_tokens == 0) throw InvalidArgument("pre_tokens must be positive");
  }
};

struct CostReport {
  double cost_uncompressed = 0.0;  // units of |X_1|^2
  double cost_compressed = 0.0;
  double benefit = 0.0;
  double ratio = 1.0;
  // Present only when a per-token-pair constant was supplied. These are
  // estimates: the model is a proportionality, not a FLOP count.
  std::optional<double> flops_uncompressed_estimate;
  std::optional<double> flops_compressed_estimate;
};

inline void check_ratio(double r) {
  if (!(r > 0.0 && r <= 1.0)) throw InvalidArgument("compression ratio must be in (0, 1]");
}

inline CostReport compute_cost(const DecoderConfig& cfg, double r,
                               std::optional<double> flops_per_token_pair = std::nullopt) {
  cfg.validate();
  check_ratio(r);
  const double layers = static_cast<double>(cfg.num_layers);
  const double k = static_cast<double>(cfg.compress_at_layer);
  CostReport rep;
  rep.ratio = r;
  rep.cost_uncompressed = layers - 1.0;
  rep.cost_compressed = (k - 1.0) + (layers - k) * r * r;
  rep.benefit = (layers - k) * (1.0 - r * r);
  if (flops_per_token_pair) {
    const double x1 = static_cast<double>(cfg.pre_tokens);
    rep.flops_uncompressed_estimate = rep.cost_uncompressed * x1 * x1 * *flops_per_token_pair;
    rep.flops_compressed_estimate = rep.cost_compressed * x1 * x1 * *flops_per_token_pair;
  }
  return rep;
}

// Evaluates the saving two ways: by differencing the un-normalized cost at
// r = 1 and at r, and by the closed form (L - k)(1 - r^2). True iff they agree
// to 1e-9 relative.
inline bool verify_benefit_identity(const DecoderConfig& cfg, double r) {
  cfg.validate();
  check_ratio(r);
  using real = long double;
  const real layers = static_cast<real>(cfg.num_layers);
  const real k = static_cast<real>(cfg.compress_at_layer);
  const real x1 = static_cast<real>(cfg.pre_tokens);
  const real xk = static_cast<real>(r) * x1;
  const auto cost = [&](real tokens_after) {
    return (k - 1) * x1 * x1 + (layers - k) * tokens_after * tokens_after;
  };
  const real differenced = (cost(x1) - cost(xk)) / (x1 * x1);
  const real rr = static_cast<real>(r);
  const real closed = (layers - k) * (1 - rr * rr);
  const real diff = differenced > closed ? differenced - closed : closed - differenced;
  const real scale = std::max(differenced < 0 ? -differenced : differenced,
                              closed < 0 ? -closed : closed);
  if (scale == 0) return diff == 0;
  return diff <= 1e-9L * scale;
}

// Raw uint8 RGB frame.
inline std::uint64_t image_bytes(std::uint64_t height, std::uint64_t width) {
  if (height == 0 || width == 0) throw InvalidArgument("image dims must be positive");
  return height * width * 3;
}

inline std::uint64_t token_bytes(std::uint64_t count, std::uint64_t dim, Dtype dtype) {
  if (count == 0 || dim == 0) throw InvalidArgument("token count and dim must be positive");
  if (dtype == Dtype::u8) throw UnsupportedDtype("tokens are f16 or f32");
  return count * dim * dtype_size(dtype);
}

inline double reduction_factor(std::uint64_t image_h, std::uint64_t image_w, std::uint64_t count,
                               std::uint64_t dim, Dtype dtype) {
  return static_cast<double>(image_bytes(image_h, image_w)) /
         static_cast<double>(token_bytes(count, dim, dtype));
}

enum class BandwidthUnit { kb_per_s, mb_per_s };

constexpr std::string_view unit_name(BandwidthUnit u) {
  return u == BandwidthUnit::kb_per_s ? "KB/s" : "MB/s";
}

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * 1024;

// One second's worth of payload expressed as a bandwidth. Below 1 MiB the
// value is shown in KB (integer when whole, else two decimals); from 1 MiB up
// it is shown in MB with two decimals. Rounding is half-up on the exact
// integer ratio.
struct BandwidthEntry {
  std::uint64_t payload_bytes = 0;
  double display_value = 0.0;
  BandwidthUnit display_unit = BandwidthUnit::kb_per_s;
  std::string display_text;  // e.g. "330.75"

  std::string display() const { return display_text + " " + std::string(unit_name(display_unit)); }
};

inline BandwidthEntry bandwidth_entry(std::uint64_t payload_bytes) {
  BandwidthEntry e;
  e.payload_bytes = payload_bytes;
  const bool mb = payload_bytes >= kMiB;
  e.display_unit = mb ? BandwidthUnit::mb_per_s : BandwidthUnit::kb_per_s;
  const std::uint64_t unit = mb ? kMiB : kKiB;
  const std::uint64_t hundredths = (payload_bytes * 100 + unit / 2) / unit;
  const std::uint64_t whole = hundredths / 100;
  const std::uint64_t frac = hundredths % 100;
  e.display_value = static_cast<double>(hundredths) / 100.0;
  if (!mb && frac == 0) {
    e.display_text = std::to_string(whole);
  } else {
    e.display_text = std::to_string(whole) + "." + (frac < 10 ? "0" : "") + std::to_string(frac);
  }
  return e;
}

struct BandwidthRow {
  enum class Kind { image, tokens };
  Kind kind = Kind::image;
  std::string label;      // "224²" or "8"
  std::uint64_t size = 0;  // side length or token count
  BandwidthEntry entry;
};

inline constexpr std::uint64_t kTableResolutions[] = {224, 336, 480, 512, 640, 768, 1024};
inline constexpr std::uint64_t kTableTokenCounts[] = {8, 12, 16, 32, 64, 128, 192};
inline constexpr std::uint64_t kTableTokenDim = 1024;

// Square RGB frames at common resolutions, then f16 token sets of dim 1024.
inline std::vector<BandwidthRow> bandwidth_table() {
  std::vector<BandwidthRow> rows;
  for (auto side : kTableResolutions)
    rows.push_back({BandwidthRow::Kind::image, std::to_string(side) + "\xC2\xB2", side,
                    bandwidth_entry(image_bytes(side, side))});
  for (auto count : kTableTokenCounts)
    rows.push_back({BandwidthRow::Kind::tokens, std::to_string(count), count,
                    bandwidth_entry(token_bytes(count, kTableTokenDim, Dtype::f16))});
  return rows;
}

}  // namespace adatok
