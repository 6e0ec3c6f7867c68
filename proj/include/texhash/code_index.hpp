#pragma once

// Bit-packed binary codes and an immutable exact-scan Hamming index.
//
// Bit i of a code lives at bit (i mod 64) of word (i div 64); +1 maps to 1,
// -1 to 0, and padding bits above k are always zero.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace texhash {

class BinaryCode {
 public:
  BinaryCode() = default;
  // Rejects word counts other than ceil(k/64) and any set padding bit.
  BinaryCode(int bits, std::vector<std::uint64_t> words);

  static BinaryCode pack(std::span<const std::int8_t> signs);  // entries must be exactly +-1
  std::vector<std::int8_t> unpack() const;

  int bits() const { return bits_; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  bool operator==(const BinaryCode&) const = default;

 private:
  int bits_ = 0;
  std::vector<std::uint64_t> words_;
};

std::size_t words_for_bits(int bits);

// XOR + popcount; throws std::invalid_argument when lengths differ.
int hamming(const BinaryCode& a, const BinaryCode& b);

struct IndexHit {
  std::uint64_t id = 0;
  int distance = 0;
  std::uint32_t label = 0;
  bool operator==(const IndexHit&) const = default;
};

class CodeIndex {
 public:
  CodeIndex() = default;
  explicit CodeIndex(int bits) : bits_(bits), words_(words_for_bits(bits)) {}
  // Codes, ids and labels are parallel; ids must be unique.
  static CodeIndex build(int bits, const std::vector<BinaryCode>& codes, const std::vector<std::uint64_t>& ids,
                         const std::vector<std::uint32_t>& labels);

  // min(T, N) hits by ascending distance, ties in insertion order.
  std::vector<IndexHit> query_topk(const BinaryCode& q, int T) const;
  // Every item with distance <= r, in insertion order.
  std::vector<IndexHit> query_radius(const BinaryCode& q, int r) const;
  // Distance from q to every item, in insertion order.
  std::vector<int> distances(const BinaryCode& q) const;

  int bits() const { return bits_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::uint64_t id(std::size_t i) const { return ids_[i]; }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }
  BinaryCode code(std::size_t i) const;
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }

 private:
  void check_query(const BinaryCode& q) const;

  int bits_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> packed_;  // N * words_
  std::vector<std::uint64_t> ids_;
  std::vector<std::uint32_t> labels_;
};

// TXIX format: magic, u32 version 1, u32 k, u64 N, N x {u64 id, u32 label,
// packed words}, u64 FNV-1a checksum of all preceding bytes.
std::vector<std::uint8_t> encode_index(const CodeIndex& index);
CodeIndex decode_index(const std::vector<std::uint8_t>& bytes, const std::string& source = "buffer");
void save_index(const CodeIndex& index, const std::filesystem::path& path);
CodeIndex load_index(const std::filesystem::path& path);

}  // namespace texhash
