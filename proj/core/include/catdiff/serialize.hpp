#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "catdiff/tensor.hpp"

namespace catdiff {

/// Little-endian byte sink. Tensor layout on the wire:
/// [rank u32][dims u32 ...][f32 payload].
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(std::string_view raw);
  /// [len u32][UTF-8 bytes]
  void str(std::string_view s);
  void tensor(const Tensor& t);

  const std::vector<char>& buffer() const { return buf_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data, std::string origin = "<memory>");
  static ByteReader from_file(const std::filesystem::path& path);

  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string bytes(std::size_t n);
  std::string str();
  Tensor tensor();

  bool at_end() const { return pos_ == data_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) const;
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::vector<char> read_file_bytes(const std::filesystem::path& path);

}  // namespace catdiff
