#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>

#include "adatok/detail/bytes.hpp"
#include "adatok/half.hpp"
#include "adatok/tensor_io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace adatok;

namespace {

std::vector<std::uint8_t> raw(const std::filesystem::path& p) { return detail::read_file(p); }

}  // namespace

TEST(Half, WidenMatchesFormatDefinitionForAllPatterns) {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto code = static_cast<std::uint16_t>(h);
    const float f = half_to_float(code);
    if (!half_is_finite(code)) {
      if ((code & 0x3ff) == 0) EXPECT_TRUE(std::isinf(f));
      else EXPECT_TRUE(std::isnan(f));
      continue;
    }
    EXPECT_EQ(static_cast<double>(f), oracle::half_value(code)) << h;
    // Narrowing an exactly representable value is the identity.
    EXPECT_EQ(float_to_half(f), code) << h;
  }
}

TEST(Half, NarrowingMatchesExhaustiveNearestEven) {
  const oracle::HalfRounder rounder;
  std::mt19937 rng(7);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int i = 0; i < 200000; ++i) {
    // Random bit patterns restricted to magnitudes around the half range.
    std::uint32_t b = bits(rng);
    const std::uint32_t exp = 100 + (b >> 24) % 50;  // 2^-27 .. 2^22
    b = (b & 0x807fffffu) | (exp << 23);
    const float f = std::bit_cast<float>(b);
    ASSERT_EQ(float_to_half(f), rounder.round(f)) << f;
  }
  // Exact ties between neighbours, normal and subnormal.
  for (std::uint16_t h = 1; h < 0x7bff; h += 37) {
    const float mid = static_cast<float>((oracle::half_value(h) + oracle::half_value(h + 1)) / 2);
    EXPECT_EQ(float_to_half(mid), rounder.round(mid)) << h;
    EXPECT_EQ(float_to_half(mid) % 2, 0) << h;
  }
  EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
  EXPECT_EQ(float_to_half(65519.0f), 0x7bff);
  EXPECT_EQ(float_to_half(65520.0f), 0x7c00);
  EXPECT_EQ(float_to_half(0x1p-25f), 0x0000);       // tie to even zero
  EXPECT_EQ(float_to_half(0x1.8p-25f), 0x0001);
  EXPECT_EQ(float_to_half(-0.0f), 0x8000);
  EXPECT_TRUE(std::isnan(half_to_float(float_to_half(NAN))));
}

TEST(TensorIo, ReadsSmallF32Grid) {
  testutil::TempDir dir;
  const float vals[] = {1, 2, 3, 4};
  write_tensor(TensorFile::from_floats({2, 2, 1}, vals, Dtype::f32), dir / "t.atsr");
  const auto t = read_tensor(dir / "t.atsr");
  EXPECT_EQ(t.dtype, Dtype::f32);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{2, 2, 1}));
  EXPECT_EQ(t.to_floats(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(TensorIo, HeaderLayout) {
  const float vals[] = {1.5f, -2.0f};
  const auto bytes = encode_tensor(TensorFile::from_floats({1, 2}, vals, Dtype::f16));
  const std::vector<std::uint8_t> expected = {'A', 'T', 'S', 'R', 1, 0, 2, 0, 1, 0, 0, 0,
                                              2, 0, 0, 0, 0x00, 0x3e, 0x00, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(TensorIo, TruncatedPayloadIsTruncationError) {
  const float vals[] = {1, 2, 3, 4};
  auto bytes = encode_tensor(TensorFile::from_floats({2, 2, 1}, vals, Dtype::f32));
  bytes.pop_back();
  EXPECT_THROW(decode_tensor(bytes), TruncationError);
  bytes.resize(10);
  EXPECT_THROW(decode_tensor(bytes), TruncationError);
}

TEST(TensorIo, TrailingBytesAreFormatError) {
  const float vals[] = {1, 2};
  auto bytes = encode_tensor(TensorFile::from_floats({1, 2}, vals, Dtype::f32));
  bytes.push_back(0);
  EXPECT_THROW(decode_tensor(bytes), FormatError);
}

TEST(TensorIo, BadMagicAndDtype) {
  const float vals[] = {1, 2};
  auto bytes = encode_tensor(TensorFile::from_floats({1, 2}, vals, Dtype::f32));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_tensor(bad), FormatError);
  bad = bytes;
  bad[5] = 7;
  EXPECT_THROW(decode_tensor(bad), UnsupportedDtype);
  bad = bytes;
  bad[6] = 4;
  EXPECT_THROW(decode_tensor(bad), FormatError);
  EXPECT_THROW(decode_tensor(std::vector<std::uint8_t>{'A', 'T'}), FormatError);
}

TEST(TensorIo, WriteRejectsEmptyDimsAndUnwritablePath) {
  TensorFile t;
  t.dtype = Dtype::f32;
  EXPECT_THROW(encode_tensor(t), FormatError);
  const float vals[] = {1, 2};
  EXPECT_THROW(write_tensor(TensorFile::from_floats({1, 2}, vals, Dtype::f32),
                            "/nonexistent-dir/x/y.atsr"),
               IoError);
}

TEST(TensorIo, LargeF16FileSize) {
  testutil::TempDir dir;
  std::vector<float> vals(24 * 24 * 1024, 0.5f);
  write_tensor(TensorFile::from_floats({24, 24, 1024}, vals, Dtype::f16), dir / "big.atsr");
  EXPECT_EQ(std::filesystem::file_size(dir / "big.atsr"), 1'179'668u);
}

TEST(TensorIo, WritesAreDeterministic) {
  testutil::TempDir dir;
  std::vector<float> vals(3 * 5 * 7);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(i) * 0.37f;
  const auto t = TensorFile::from_floats({3, 5, 7}, vals, Dtype::f32);
  write_tensor(t, dir / "a.atsr");
  write_tensor(t, dir / "b.atsr");
  EXPECT_EQ(raw(dir / "a.atsr"), raw(dir / "b.atsr"));
}

TEST(TensorIo, RandomF16RoundTripIsBitwise) {
  testutil::TempDir dir;
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> dist(-100.0f, 100.0f);
  std::vector<float> vals(1000);
  for (auto& v : vals) v = dist(rng);
  const auto t = TensorFile::from_floats({10, 100}, vals, Dtype::f16);
  write_tensor(t, dir / "h.atsr");
  const auto back = read_tensor(dir / "h.atsr");
  EXPECT_EQ(back.payload, t.payload);
}

// read(write(t)) == t over random ranks, dims, dtypes and payload bytes.
TEST(TensorIo, RoundTripProperty) {
  testutil::TempDir dir;
  std::mt19937 rng(3);
  for (int iter = 0; iter < 300; ++iter) {
    TensorFile t;
    t.dtype = static_cast<Dtype>(rng() % 3);
    const std::size_t rank = 2 + rng() % 2;
    for (std::size_t i = 0; i < rank; ++i) t.dims.push_back(rng() % 6);
    t.payload.resize(t.element_count() * dtype_size(t.dtype));
    for (auto& b : t.payload) b = static_cast<std::uint8_t>(rng());
    write_tensor(t, dir / "p.atsr");
    ASSERT_EQ(read_tensor(dir / "p.atsr"), t) << iter;
  }
}

TEST(Sidecar, GoldenFormat) {
  ScoreSidecar sc{{{3, 1.0}, {0, 0.9}, {2, 0.8}, {1, 0.79}, {4, 0.0}}};
  const auto golden = detail::read_text(std::filesystem::path(ADATOK_TEST_GOLDEN) / "scores_v1.txt");
  EXPECT_EQ(format_sidecar(sc), golden);
  const auto parsed = parse_sidecar(golden);
  ASSERT_EQ(parsed.records.size(), 5u);
  EXPECT_EQ(parsed.records[1], (ScoreRecord{1, 0.79}));
  EXPECT_NO_THROW(validate_sidecar(parsed, 5));
}

TEST(Sidecar, ToleratesCommentsAndWhitespace) {
  const auto sc = parse_sidecar("# header\n\n  0   0.5\r\n1\t0.25  \n");
  ASSERT_EQ(sc.records.size(), 2u);
  EXPECT_EQ(sc.records[1], (ScoreRecord{1, 0.25}));
}

TEST(Sidecar, RejectsBadRecords) {
  EXPECT_THROW(parse_sidecar("0 1.5\n"), FormatError);
  EXPECT_THROW(parse_sidecar("0 -0.1\n"), FormatError);
  EXPECT_THROW(parse_sidecar("x 0.5\n"), FormatError);
  EXPECT_THROW(parse_sidecar("0 0.5 extra\n"), FormatError);
  EXPECT_THROW(validate_sidecar(parse_sidecar("0 0.5\n0 0.6\n"), 2), FormatError);
  EXPECT_THROW(validate_sidecar(parse_sidecar("0 0.5\n"), 2), FormatError);
  EXPECT_THROW(validate_sidecar(parse_sidecar("0 0.5\n5 0.6\n"), 2), FormatError);
}
