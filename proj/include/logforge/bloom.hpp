#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace logforge::index {

// Bit-array membership filter with k hash functions derived by double hashing.
// Never reports a false negative.
class BloomFilter {
 public:
  BloomFilter(std::uint64_t bits, std::uint32_t hashes);

  // m = ceil(-n ln p / (ln 2)^2), k = ceil((m / n) ln 2), with n clamped to >= 1.
  static BloomFilter for_capacity(std::size_t expected_items, double fp_rate = 0.01);

  void insert(std::string_view item);
  bool contains(std::string_view item) const;

  std::uint64_t bit_count() const { return m_; }
  std::uint32_t hash_count() const { return k_; }
  std::uint64_t inserted() const { return inserted_; }

  // (1 - e^(-k n / m))^k for the current insert count.
  double expected_fp_rate() const;

  std::string serialize() const;
  static BloomFilter deserialize(std::string_view bytes);

 private:
  std::uint64_t m_;
  std::uint32_t k_;
  std::uint64_t inserted_ = 0;
  std::vector<std::uint64_t> words_;
};

std::uint64_t hash64(std::string_view data, std::uint64_t seed = 0);

}  // namespace logforge::index
