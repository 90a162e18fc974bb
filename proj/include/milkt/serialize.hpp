#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "milkt/matrix.hpp"

// MILB tensor files: "MILB", u32 LE rows, u32 LE cols, rows*cols f32 LE values.
namespace milkt {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// I/O failures (missing file, unwritable directory).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kMilbMagic[4] = {'M', 'I', 'L', 'B'};
inline constexpr std::size_t kMilbHeaderBytes = 12;

std::vector<unsigned char> encode_milb(const Matrix& m);
/// `what` names the tensor in error messages.
Matrix decode_milb(const std::vector<unsigned char>& bytes, const std::string& what);

void write_milb(const std::filesystem::path& path, const Matrix& m);
Matrix read_milb(const std::filesystem::path& path, const std::string& what);

/// Rounds every element through f32, matching what a MILB round trip yields.
Matrix round_to_f32(const Matrix& m);

}  // namespace milkt
