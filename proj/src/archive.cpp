#include "mdg/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mdg {

namespace {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>>;
  if (pos + sizeof(T) > in.size()) throw IoError("tensor archive truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  std::vector<unsigned char> out{'M', 'D', 'G', 'T'};
  out.reserve(8 + 8 * t.ndim() + 8 * t.numel());
  put_le<std::uint16_t>(out, kArchiveVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.ndim()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<double>(out, v);
  return out;
}

Tensor decode_tensor(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MDGT", 4) != 0) throw IoError("not an MDGT tensor archive");
  std::size_t pos = 4;
  const auto version = get_le<std::uint16_t>(bytes, pos);
  if (version != kArchiveVersion) throw IoError("unsupported MDGT version " + std::to_string(version));
  const auto ndim = get_le<std::uint16_t>(bytes, pos);
  if (ndim == 0) throw IoError("MDGT archive with zero dimensions");
  Shape shape(ndim);
  for (auto& d : shape) d = get_le<std::uint64_t>(bytes, pos);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() - pos != 8 * n) throw IoError("MDGT payload size does not match its shape");
  std::vector<double> data(n);
  for (auto& v : data) v = get_le<double>(bytes, pos);
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_bytes(path)); }

}  // namespace mdg
