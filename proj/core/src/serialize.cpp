#include "catdiff/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "catdiff/errors.hpp"

namespace catdiff {

namespace {
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void put_le(std::vector<char>& buf, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
}  // namespace

void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
  buf_.reserve(buf_.size() + t.numel() * 4);
  for (float v : t.data()) f32(v);
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ByteReader::ByteReader(std::vector<char> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  return ByteReader(read_file_bytes(path), path.string());
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw IoError("unexpected end of data in '" + origin_ + "'");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::str() { return bytes(u32()); }

Tensor ByteReader::tensor() {
  const std::uint32_t rank = u32();
  if (rank == 0 || rank > kMaxRank) throw IoError("invalid tensor rank " + std::to_string(rank) + " in '" + origin_ + "'");
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = u32();
    if (d == 0) throw IoError("zero tensor dimension in '" + origin_ + "'");
    count *= d;
  }
  need(count * 4);
  std::vector<float> values(count);
  for (auto& v : values) v = f32();
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace catdiff
