#include "texhash/code_index.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "texhash/blob_io.hpp"
#include "texhash/errors.hpp"

namespace texhash {

namespace {

constexpr std::uint32_t kIndexVersion = 1;

std::uint64_t padding_mask(int bits) {
  const int used = bits % 64;
  return used == 0 ? 0 : ~((std::uint64_t{1} << used) - 1);
}

inline int distance_words(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) {
  int d = 0;
  for (std::size_t w = 0; w < n; ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

}  // namespace

std::size_t words_for_bits(int bits) { return bits <= 0 ? 0 : static_cast<std::size_t>((bits + 63) / 64); }

BinaryCode::BinaryCode(int bits, std::vector<std::uint64_t> words) : bits_(bits), words_(std::move(words)) {
  if (bits < 1) throw std::invalid_argument("BinaryCode: length must be positive");
  if (words_.size() != words_for_bits(bits)) {
    throw std::invalid_argument("BinaryCode: " + std::to_string(words_.size()) + " words for " +
                                std::to_string(bits) + " bits");
  }
  if (words_.back() & padding_mask(bits)) throw std::invalid_argument("BinaryCode: padding bits set");
}

BinaryCode BinaryCode::pack(std::span<const std::int8_t> signs) {
  const int bits = static_cast<int>(signs.size());
  std::vector<std::uint64_t> words(words_for_bits(bits), 0);
  for (std::size_t i = 0; i < signs.size(); ++i) {
    if (signs[i] == 1) {
      words[i / 64] |= std::uint64_t{1} << (i % 64);
    } else if (signs[i] != -1) {
      throw std::invalid_argument("BinaryCode::pack: entry " + std::to_string(i) + " is " +
                                  std::to_string(signs[i]) + ", expected +1 or -1");
    }
  }
  return BinaryCode(bits, std::move(words));
}

std::vector<std::int8_t> BinaryCode::unpack() const {
  std::vector<std::int8_t> out(static_cast<std::size_t>(bits_));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (words_[i / 64] >> (i % 64)) & 1 ? 1 : -1;
  return out;
}

int hamming(const BinaryCode& a, const BinaryCode& b) {
  if (a.bits() != b.bits()) {
    throw std::invalid_argument("hamming: code lengths " + std::to_string(a.bits()) + " and " +
                                std::to_string(b.bits()) + " differ");
  }
  return distance_words(a.words().data(), b.words().data(), a.words().size());
}

CodeIndex CodeIndex::build(int bits, const std::vector<BinaryCode>& codes, const std::vector<std::uint64_t>& ids,
                           const std::vector<std::uint32_t>& labels) {
  if (codes.size() != ids.size() || codes.size() != labels.size()) {
    throw std::invalid_argument("CodeIndex::build: codes, ids and labels differ in length");
  }
  CodeIndex index(bits);
  std::unordered_set<std::uint64_t> seen;
  index.packed_.reserve(codes.size() * index.words_);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].bits() != bits) {
      throw std::invalid_argument("CodeIndex::build: code " + std::to_string(i) + " has " +
                                  std::to_string(codes[i].bits()) + " bits, index has " + std::to_string(bits));
    }
    if (!seen.insert(ids[i]).second) throw std::invalid_argument("CodeIndex::build: duplicate id " + std::to_string(ids[i]));
    index.packed_.insert(index.packed_.end(), codes[i].words().begin(), codes[i].words().end());
  }
  index.ids_ = ids;
  index.labels_ = labels;
  return index;
}

void CodeIndex::check_query(const BinaryCode& q) const {
  if (q.bits() != bits_) {
    throw std::invalid_argument("query has " + std::to_string(q.bits()) + " bits, index has " + std::to_string(bits_));
  }
}

BinaryCode CodeIndex::code(std::size_t i) const {
  const auto* p = packed_.data() + i * words_;
  return BinaryCode(bits_, std::vector<std::uint64_t>(p, p + words_));
}

std::vector<int> CodeIndex::distances(const BinaryCode& q) const {
  check_query(q);
  std::vector<int> out(ids_.size());
  const std::uint64_t* qw = q.words().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = distance_words(qw, packed_.data() + i * words_, words_);
  return out;
}

std::vector<IndexHit> CodeIndex::query_topk(const BinaryCode& q, int T) const {
  if (T < 1) throw std::invalid_argument("query_topk: T must be >= 1");
  if (ids_.empty()) return {};
  const std::vector<int> dist = distances(q);
  const std::size_t take = std::min(static_cast<std::size_t>(T), dist.size());

  // Counting pass: smallest radius whose ball holds at least `take` items.
  std::vector<std::size_t> hist(static_cast<std::size_t>(bits_) + 1, 0);
  for (int d : dist) ++hist[static_cast<std::size_t>(d)];
  int cutoff = 0;
  for (std::size_t acc = 0; cutoff <= bits_; ++cutoff) {
    acc += hist[static_cast<std::size_t>(cutoff)];
    if (acc >= take) break;
  }
  // Stable bucket emission keeps insertion order within equal distances.
  std::vector<std::size_t> start(static_cast<std::size_t>(cutoff) + 2, 0);
  for (int d = 0; d <= cutoff; ++d) start[static_cast<std::size_t>(d) + 1] = start[d] + hist[static_cast<std::size_t>(d)];
  std::vector<IndexHit> bucketed(start[static_cast<std::size_t>(cutoff) + 1]);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= cutoff) bucketed[start[static_cast<std::size_t>(dist[i])]++] = IndexHit{ids_[i], dist[i], labels_[i]};
  }
  bucketed.resize(take);
  return bucketed;
}

std::vector<IndexHit> CodeIndex::query_radius(const BinaryCode& q, int r) const {
  if (r < 0 || r > bits_) {
    throw std::invalid_argument("query_radius: radius " + std::to_string(r) + " outside [0, " + std::to_string(bits_) + "]");
  }
  const std::vector<int> dist = distances(q);
  std::vector<IndexHit> out;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= r) out.push_back(IndexHit{ids_[i], dist[i], labels_[i]});
  }
  return out;
}

std::vector<std::uint8_t> encode_index(const CodeIndex& index) {
  ByteWriter w;
  w.raw("TXIX");
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.bits()));
  w.u64(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.u64(index.id(i));
    w.u32(index.label(i));
    const BinaryCode code = index.code(i);
    for (std::uint64_t word : code.words()) w.u64(word);
  }
  const auto& b = w.bytes();
  w.u64(fnv1a64(b.data(), b.size()));
  return w.bytes();
}

CodeIndex decode_index(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  r.expect_magic("TXIX");
  const auto version = r.u32();
  if (version != kIndexVersion) r.fail("unsupported index version " + std::to_string(version));
  const auto bits = static_cast<int>(r.u32());
  if (bits < 1) r.fail("code length must be positive");
  const auto n = r.u64();
  const std::size_t words = words_for_bits(bits);
  const std::size_t record = 8 + 4 + 8 * words;
  if (n > r.remaining() / record) {
    r.fail("truncated: header promises " + std::to_string(n) + " records, " + std::to_string(r.remaining()) +
           " bytes remain");
  }
  // Verify the checksum before trusting any record contents.
  const std::size_t payload_end = r.offset() + static_cast<std::size_t>(n) * record;
  if (bytes.size() < payload_end + 8) {
    r.fail("truncated: file ends before the checksum (" + std::to_string(bytes.size()) + " of " +
           std::to_string(payload_end + 8) + " bytes)");
  }
  if (bytes.size() > payload_end + 8) {
    r.fail(std::to_string(bytes.size() - payload_end - 8) + " trailing bytes after checksum");
  }
  std::uint64_t stored = 0;
  for (int i = 7; i >= 0; --i) stored = (stored << 8) | bytes[payload_end + static_cast<std::size_t>(i)];
  if (stored != fnv1a64(bytes.data(), payload_end)) {
    throw IoError(source + ": checksum mismatch for payload bytes 0.." + std::to_string(payload_end) +
                  " (checksum stored at offset " + std::to_string(payload_end) + ")");
  }
  std::vector<BinaryCode> codes;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;
  codes.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ids.push_back(r.u64());
    labels.push_back(r.u32());
    std::vector<std::uint64_t> wv(words);
    for (auto& x : wv) x = r.u64();
    if (wv.back() & padding_mask(bits)) r.fail("record " + std::to_string(i) + " has padding bits set");
    codes.emplace_back(bits, std::move(wv));
  }
  try {
    return CodeIndex::build(bits, codes, ids, labels);
  } catch (const std::invalid_argument& e) {
    throw IoError(source + ": " + e.what());
  }
}

void save_index(const CodeIndex& index, const std::filesystem::path& path) {
  write_file_bytes(path, encode_index(index));
}

CodeIndex load_index(const std::filesystem::path& path) { return decode_index(read_file_bytes(path), path.string()); }

}  // namespace texhash
