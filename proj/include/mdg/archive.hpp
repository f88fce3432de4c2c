#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdg/tensor.hpp"

namespace mdg {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor archive layout, all little-endian:
//   "MDGT" | u16 version | u16 ndim | ndim × u64 dims | numel × f64
inline constexpr std::uint16_t kArchiveVersion = 1;

std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<unsigned char>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mdg
