#pragma once

// ATSR tensor files and score sidecars.
//
// ATSR layout (all integers little-endian):
//
//   offset 0   magic    "ATSR"
//   offset 4   version  u8 (= 1)
//   offset 5   dtype    u8 (f16 = 0, f32 = 1, u8 = 2)
//   offset 6   rank     u8 (2 or 3)
//   offset 7   padding  u8 (= 0)
//   offset 8   dims     rank x u32
//   then       payload  row-major, product(dims) x dtype size bytes
//
// Rank-3 tensors are (height, width, channels).

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adatok/detail/bytes.hpp"
#include "adatok/errors.hpp"
#include "adatok/half.hpp"

namespace adatok {

enum class Dtype : std::uint8_t { f16 = 0, f32 = 1, u8 = 2 };

constexpr std::size_t dtype_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::f16: return 2;
    case Dtype::f32: return 4;
    case Dtype::u8: return 1;
  }
  return 0;
}

constexpr std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::f16: return "f16";
    case Dtype::f32: return "f32";
    case Dtype::u8: return "u8";
  }
  return "?";
}

inline Dtype parse_dtype(std::string_view name) {
  if (name == "f16") return Dtype::f16;
  if (name == "f32") return Dtype::f32;
  if (name == "u8") return Dtype::u8;
  throw UnsupportedDtype("unknown dtype '" + std::string(name) + "'");
}

inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::size_t kTensorPrologue = 8;

struct TensorFile {
  Dtype dtype = Dtype::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t acc, std::uint32_t d) { return acc * d; });
  }

  // Decoded values at working precision. f16 widens exactly.
  std::vector<float> to_floats() const {
    const std::size_t n = element_count();
    std::vector<float> out(n);
    const std::uint8_t* p = payload.data();
    switch (dtype) {
      case Dtype::f16:
        for (std::size_t i = 0; i < n; ++i) out[i] = half_to_float(detail::get_u16le(p + 2 * i));
        break;
      case Dtype::f32:
        for (std::size_t i = 0; i < n; ++i)
          out[i] = std::bit_cast<float>(detail::get_u32le(p + 4 * i));
        break;
      case Dtype::u8:
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(p[i]);
        break;
    }
    return out;
  }

  static TensorFile from_floats(std::vector<std::uint32_t> dims, std::span<const float> values,
                                Dtype dtype) {
    TensorFile t;
    t.dtype = dtype;
    t.dims = std::move(dims);
    if (t.element_count() != values.size())
      throw ShapeError("value count does not match dims");
    t.payload.reserve(values.size() * dtype_size(dtype));
    for (float v : values) {
      switch (dtype) {
        case Dtype::f16: detail::put_u16le(t.payload, float_to_half(v)); break;
        case Dtype::f32: detail::put_u32le(t.payload, std::bit_cast<std::uint32_t>(v)); break;
        case Dtype::u8:
          if (!(v >= 0.0f && v <= 255.0f) || v != static_cast<float>(static_cast<int>(v)))
            throw InvalidArgument("value not representable as u8");
          t.payload.push_back(static_cast<std::uint8_t>(v));
          break;
      }
    }
    return t;
  }

  static TensorFile from_u8(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values) {
    TensorFile t;
    t.dtype = Dtype::u8;
    t.dims = std::move(dims);
    if (t.element_count() != values.size()) throw ShapeError("value count does not match dims");
    t.payload = std::move(values);
    return t;
  }

  friend bool operator==(const TensorFile&, const TensorFile&) = default;
};

inline void validate_tensor(const TensorFile& t) {
  if (t.dims.empty()) throw FormatError("tensor has no dims");
  if (t.dims.size() != 2 && t.dims.size() != 3)
    throw FormatError("tensor rank must be 2 or 3, got " + std::to_string(t.dims.size()));
  if (dtype_size(t.dtype) == 0) throw UnsupportedDtype("unknown dtype");
  if (t.payload.size() != t.element_count() * dtype_size(t.dtype))
    throw FormatError("payload length does not match dims x dtype size");
}

inline std::vector<std::uint8_t> encode_tensor(const TensorFile& t) {
  validate_tensor(t);
  std::vector<std::uint8_t> out = {'A', 'T', 'S', 'R', kTensorVersion};
  out.reserve(kTensorPrologue + 4 * t.dims.size() + t.payload.size());
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  out.push_back(0);
  for (std::uint32_t d : t.dims) detail::put_u32le(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

inline TensorFile decode_tensor(std::span<const std::uint8_t> data) {
  if (data.size() < 4 || !std::equal(data.begin(), data.begin() + 4, "ATSR"))
    throw FormatError("bad magic, expected ATSR");
  if (data.size() < kTensorPrologue) throw TruncationError("truncated header");
  if (data[4] != kTensorVersion)
    throw FormatError("unsupported ATSR version " + std::to_string(data[4]));
  if (data[5] > static_cast<std::uint8_t>(Dtype::u8))
    throw UnsupportedDtype("unknown dtype code " + std::to_string(data[5]));

  TensorFile t;
  t.dtype = static_cast<Dtype>(data[5]);
  const std::size_t rank = data[6];
  if (rank != 2 && rank != 3) throw FormatError("tensor rank must be 2 or 3");
  const std::size_t header = kTensorPrologue + 4 * rank;
  if (data.size() < header) throw TruncationError("truncated dims");
  for (std::size_t i = 0; i < rank; ++i)
    t.dims.push_back(detail::get_u32le(data.data() + kTensorPrologue + 4 * i));

  const std::size_t expected = t.element_count() * dtype_size(t.dtype);
  const std::size_t available = data.size() - header;
  if (available < expected)
    throw TruncationError("payload truncated: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(available));
  if (available > expected) throw FormatError("trailing bytes after payload");
  t.payload.assign(data.begin() + static_cast<std::ptrdiff_t>(header), data.end());
  return t;
}

inline TensorFile read_tensor(const std::filesystem::path& path) {
  const auto data = detail::read_file(path);
  return decode_tensor(data);
}

inline void write_tensor(const TensorFile& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  detail::write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Score sidecar: a text file with one "index confidence" pair per line.
// Blank lines and lines starting with '#' are ignored.
// ---------------------------------------------------------------------------

struct ScoreRecord {
  std::uint32_t mask_index = 0;
  double confidence = 0.0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

struct ScoreSidecar {
  std::vector<ScoreRecord> records;

  friend bool operator==(const ScoreSidecar&, const ScoreSidecar&) = default;
};

inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string format_sidecar(const ScoreSidecar& sc) {
  auto records = sc.records;
  std::sort(records.begin(), records.end(),
            [](const ScoreRecord& a, const ScoreRecord& b) { return a.mask_index < b.mask_index; });
  std::string out = "# adatok-scores v1\n";
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw FormatError("confidence out of [0,1] for mask " + std::to_string(r.mask_index));
    out += std::to_string(r.mask_index);
    out += ' ';
    out += format_real(r.confidence);
    out += '\n';
  }
  return out;
}

inline ScoreSidecar parse_sidecar(std::string_view text) {
  ScoreSidecar sc;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty() || line.front() == '#') continue;

    const auto fail = [&](const char* why) {
      return FormatError("score sidecar line " + std::to_string(line_no) + ": " + why);
    };
    ScoreRecord r;
    const char* first = line.data();
    const char* last = line.data() + line.size();
    auto res = std::from_chars(first, last, r.mask_index);
    if (res.ec != std::errc{} || res.ptr == last || (*res.ptr != ' ' && *res.ptr != '\t'))
      throw fail("expected '<index> <confidence>'");
    first = res.ptr;
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    res = std::from_chars(first, last, r.confidence);
    if (res.ec != std::errc{} || res.ptr != last) throw fail("bad confidence value");
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) throw fail("confidence outside [0,1]");
    sc.records.push_back(r);
  }
  return sc;
}

// Every index in [0, mask_count) must appear exactly once.
inline void validate_sidecar(const ScoreSidecar& sc, std::size_t mask_count) {
  std::vector<bool> seen(mask_count, false);
  for (const auto& r : sc.records) {
    if (r.mask_index >= mask_count)
      throw FormatError("score for mask " + std::to_string(r.mask_index) + " but only " +
                        std::to_string(mask_count) + " masks");
    if (seen[r.mask_index])
      throw FormatError("duplicate score for mask " + std::to_string(r.mask_index));
    seen[r.mask_index] = true;
  }
  if (sc.records.size() != mask_count)
    throw FormatError("score sidecar has " + std::to_string(sc.records.size()) + " records for " +
                      std::to_string(mask_count) + " masks");
}

inline ScoreSidecar read_sidecar(const std::filesystem::path& path) {
  return parse_sidecar(detail::read_text(path));
}

inline void write_sidecar(const ScoreSidecar& sc, const std::filesystem::path& path) {
  detail::write_text(path, format_sidecar(sc));
}

}  // namespace adatok
