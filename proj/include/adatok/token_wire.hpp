#pragma once

// TOK frames: bit-exact encoding of a CompressedTokenSet.
//
//   offset 0         magic     "ATOK"
//   offset 4         version   u8 (= 1)
//   offset 5         dtype     u8 (f16 = 0, f32 = 1)
//   offset 6         dim       u32 LE
//   offset 10        count     u32 LE
//   offset 14        payload   count x dim values, LE
//   14 + P           meta_len  u32 LE
//   18 + P           meta      UTF-8 text, meta_len bytes
//
// Total size is 18 + P + meta_len with P = count * dim * dtype size. The meta
// document is line oriented:
//
//   origin <image_h> <image_w> <grid_h> <grid_w>
//   residual <0|1>
//   token <source_index> <area>        (one line per token, in order)

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adatok/detail/bytes.hpp"
#include "adatok/errors.hpp"
#include "adatok/half.hpp"
#include "adatok/object_merge.hpp"
#include "adatok/tensor_io.hpp"

namespace adatok {

inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameFixedBytes = 18;
inline constexpr std::size_t kFrameHeaderBytes = 14;
inline constexpr std::size_t kMaxFrameBytes = std::size_t{64} << 20;

using FrameBytes = std::vector<std::uint8_t>;

inline std::string format_token_meta(const CompressedTokenSet& cts) {
  std::string meta;
  meta += "origin " + std::to_string(cts.origin.image_height) + ' ' +
          std::to_string(cts.origin.image_width) + ' ' + std::to_string(cts.origin.grid_height) +
          ' ' + std::to_string(cts.origin.grid_width) + '\n';
  meta += std::string("residual ") + (cts.residual_included ? "1" : "0") + '\n';
  for (const auto& m : cts.meta)
    meta += "token " + std::to_string(m.mask_source_index) + ' ' +
            std::to_string(m.mask_area_pixels) + '\n';
  return meta;
}

inline FrameBytes pack(const CompressedTokenSet& cts, Dtype dtype = Dtype::f16) {
  if (dtype == Dtype::u8) throw UnsupportedDtype("TOK frames carry f16 or f32 tokens");
  if (cts.tokens.size() != cts.count() * cts.dim)
    throw EncodingError("token buffer does not match count x dim");
  if (cts.dim > UINT32_MAX || cts.count() > UINT32_MAX) throw EncodingError("token set too large");

  const std::string meta = format_token_meta(cts);
  FrameBytes out = {'A', 'T', 'O', 'K', kFrameVersion};
  out.reserve(kFrameFixedBytes + cts.tokens.size() * dtype_size(dtype) + meta.size());
  out.push_back(static_cast<std::uint8_t>(dtype));
  detail::put_u32le(out, static_cast<std::uint32_t>(cts.dim));
  detail::put_u32le(out, static_cast<std::uint32_t>(cts.count()));
  for (std::size_t i = 0; i < cts.tokens.size(); ++i) {
    const float v = cts.tokens[i];
    if (!std::isfinite(v)) throw EncodingError("non-finite token value at element " + std::to_string(i));
    if (dtype == Dtype::f16) {
      const std::uint16_t h = float_to_half(v);
      if (!half_is_finite(h))
        throw EncodingError("token value overflows f16 at element " + std::to_string(i));
      detail::put_u16le(out, h);
    } else {
      detail::put_u32le(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  detail::put_u32le(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  if (out.size() > kMaxFrameBytes) throw EncodingError("frame exceeds 64 MiB");
  return out;
}

namespace detail {

class MetaParser {
 public:
  MetaParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  bool next_line() {
    if (pos_ >= text_.size()) return false;
    const auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos) throw error("meta line without newline");
    line_start_ = pos_;
    line_ = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return true;
  }

  std::string_view word() {
    const auto sp = line_.find(' ');
    const auto w = line_.substr(0, sp);
    line_ = sp == std::string_view::npos ? std::string_view{} : line_.substr(sp + 1);
    if (w.empty()) throw error("missing meta field");
    return w;
  }

  template <typename T>
  T number() {
    const auto w = word();
    T value{};
    const auto res = std::from_chars(w.data(), w.data() + w.size(), value);
    if (res.ec != std::errc{} || res.ptr != w.data() + w.size()) throw error("bad meta number");
    return value;
  }

  void end_of_line() {
    if (!line_.empty()) throw error("unexpected trailing meta field");
  }

  FrameError error(const std::string& what) const { return FrameError(base_ + line_start_, what); }

 private:
  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
  std::string_view line_;
};

}  // namespace detail

inline CompressedTokenSet unpack(std::span<const std::uint8_t> bytes) {
  if (bytes.size() > kMaxFrameBytes) throw FrameError(0, "frame exceeds 64 MiB");
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "ATOK"))
    throw FrameError(0, "bad magic, expected ATOK");
  if (bytes.size() < kFrameHeaderBytes) throw FrameError(bytes.size(), "truncated header");
  if (bytes[4] != kFrameVersion) throw FrameError(4, "unsupported frame version");
  if (bytes[5] > static_cast<std::uint8_t>(Dtype::f32)) throw FrameError(5, "unsupported dtype");
  const auto dtype = static_cast<Dtype>(bytes[5]);
  const std::uint64_t dim = detail::get_u32le(bytes.data() + 6);
  const std::uint64_t count = detail::get_u32le(bytes.data() + 10);
  const std::uint64_t payload = count * dim * dtype_size(dtype);
  if (payload > kMaxFrameBytes) throw FrameError(6, "declared payload exceeds 64 MiB");
  if (bytes.size() < kFrameHeaderBytes + payload)
    throw FrameError(bytes.size(), "truncated payload");
  const std::size_t meta_len_at = kFrameHeaderBytes + static_cast<std::size_t>(payload);
  if (bytes.size() < meta_len_at + 4) throw FrameError(bytes.size(), "truncated meta length");
  const std::uint64_t meta_len = detail::get_u32le(bytes.data() + meta_len_at);
  const std::size_t meta_at = meta_len_at + 4;
  if (bytes.size() - meta_at < meta_len) throw FrameError(bytes.size(), "truncated meta");
  if (bytes.size() - meta_at > meta_len) throw FrameError(meta_at + meta_len, "trailing bytes");

  CompressedTokenSet cts;
  cts.dim = static_cast<std::size_t>(dim);
  cts.tokens.resize(static_cast<std::size_t>(count * dim));
  const std::uint8_t* p = bytes.data() + kFrameHeaderBytes;
  for (std::size_t i = 0; i < cts.tokens.size(); ++i) {
    const float v = dtype == Dtype::f16 ? half_to_float(detail::get_u16le(p + 2 * i))
                                        : std::bit_cast<float>(detail::get_u32le(p + 4 * i));
    if (!std::isfinite(v))
      throw FrameError(kFrameHeaderBytes + i * dtype_size(dtype), "non-finite token value");
    cts.tokens[i] = v;
  }

  const std::string_view meta(reinterpret_cast<const char*>(bytes.data() + meta_at),
                              static_cast<std::size_t>(meta_len));
  detail::MetaParser parser(meta, meta_at);
  bool seen_origin = false;
  bool seen_residual = false;
  while (parser.next_line()) {
    const auto key = parser.word();
    if (key == "origin") {
      cts.origin.image_height = parser.number<std::uint32_t>();
      cts.origin.image_width = parser.number<std::uint32_t>();
      cts.origin.grid_height = parser.number<std::uint32_t>();
      cts.origin.grid_width = parser.number<std::uint32_t>();
      seen_origin = true;
    } else if (key == "residual") {
      const auto flag = parser.number<int>();
      if (flag != 0 && flag != 1) throw parser.error("residual flag must be 0 or 1");
      cts.residual_included = flag == 1;
      seen_residual = true;
    } else if (key == "token") {
      TokenMeta m;
      m.mask_source_index = parser.number<std::int64_t>();
      m.mask_area_pixels = parser.number<std::uint64_t>();
      cts.meta.push_back(m);
    } else {
      throw parser.error("unknown meta key");
    }
    parser.end_of_line();
  }
  if (!seen_origin || !seen_residual) throw FrameError(meta_at, "meta lacks origin or residual");
  if (cts.meta.size() != count) throw FrameError(meta_at, "token metadata count differs from count");
  if (cts.residual_included &&
      (cts.meta.empty() || cts.meta.back().mask_source_index != kResidualSource))
    throw FrameError(meta_at, "residual flag set but last token is not residual");
  return cts;
}

inline void write_tok(const FrameBytes& frame, const std::filesystem::path& path) {
  detail::write_file(path, frame);
}

inline CompressedTokenSet read_tok(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return unpack(bytes);
}

}  // namespace adatok
