#pragma once

// Little-endian binary encoding shared by checkpoints and the code index.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "texhash/tensor.hpp"

namespace texhash {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(std::string_view s);
  void str(std::string_view s);  // u32 length + bytes

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked cursor; every failure throws IoError naming the byte offset.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes, std::string source = "buffer")
      : bytes_(bytes), source_(std::move(source)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string raw(std::size_t n);
  std::string str();
  void expect_magic(std::string_view magic);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// u32 count, then per tensor: name, u32 rank, u64 extents, f64 values.
void write_tensors(ByteWriter& w, const NamedTensors& tensors);
NamedTensors read_tensors(ByteReader& r);

// Copies values from `source` into `target` matching by name; every target
// must be present with an identical shape.
void assign_tensors(const NamedTensors& source, NamedTensors& target, const std::string& context);

}  // namespace texhash
