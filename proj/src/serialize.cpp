#include "milkt/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace milkt {
namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_milb(const Matrix& m) {
  std::vector<unsigned char> out;
  out.reserve(kMilbHeaderBytes + 4 * m.size());
  out.insert(out.end(), std::begin(kMilbMagic), std::end(kMilbMagic));
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Matrix decode_milb(const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < kMilbHeaderBytes) {
    throw FormatError(what + ": truncated MILB header (" + std::to_string(bytes.size()) +
                      " bytes)");
  }
  if (std::memcmp(bytes.data(), kMilbMagic, 4) != 0) {
    throw FormatError(what + ": bad magic bytes, not a MILB tensor");
  }
  const std::uint32_t rows = get_u32(bytes.data() + 4);
  const std::uint32_t cols = get_u32(bytes.data() + 8);
  if (rows == 0 || cols == 0) {
    throw FormatError(what + ": zero dimension in MILB header");
  }
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != kMilbHeaderBytes + 4 * n) {
    throw FormatError(what + ": MILB length mismatch, expected " +
                      std::to_string(kMilbHeaderBytes + 4 * n) + " bytes for " +
                      std::to_string(rows) + "x" + std::to_string(cols) + ", found " +
                      std::to_string(bytes.size()));
  }
  std::vector<double> data(n);
  const unsigned char* p = bytes.data() + kMilbHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 4 * i)));
  }
  return Matrix(rows, cols, std::move(data));
}

void write_milb(const std::filesystem::path& path, const Matrix& m) {
  const auto bytes = encode_milb(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Matrix read_milb(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(what + ": cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_milb(bytes, what);
}

Matrix round_to_f32(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i]);
  return out;
}

}  // namespace milkt
