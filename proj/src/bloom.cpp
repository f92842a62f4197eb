#include "logforge/bloom.hpp"

#include <cmath>
#include <cstring>

#include "logforge/error.hpp"

namespace logforge::index {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::uint64_t hash64(std::string_view data, std::uint64_t seed) {
  // FNV-1a followed by a splitmix finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

BloomFilter::BloomFilter(std::uint64_t bits, std::uint32_t hashes)
    : m_(bits), k_(hashes), words_((bits + 63) / 64, 0) {
  if (m_ == 0 || k_ == 0) throw IndexError("bloom filter needs m > 0 and k > 0");
}

BloomFilter BloomFilter::for_capacity(std::size_t expected_items, double fp_rate) {
  const double n = static_cast<double>(expected_items == 0 ? 1 : expected_items);
  const double ln2 = std::log(2.0);
  const auto m = static_cast<std::uint64_t>(std::ceil(-n * std::log(fp_rate) / (ln2 * ln2)));
  const auto k = static_cast<std::uint32_t>(std::ceil(static_cast<double>(m) / n * ln2));
  return BloomFilter(m, k);
}

void BloomFilter::insert(std::string_view item) {
  const std::uint64_t h1 = hash64(item);
  const std::uint64_t h2 = mix64(h1 ^ 0x9e3779b97f4a7c15ULL) | 1;
  for (std::uint32_t i = 0; i < k_; ++i) {
    const std::uint64_t bit = (h1 + i * h2) % m_;
    words_[bit / 64] |= 1ULL << (bit % 64);
  }
  ++inserted_;
}

bool BloomFilter::contains(std::string_view item) const {
  const std::uint64_t h1 = hash64(item);
  const std::uint64_t h2 = mix64(h1 ^ 0x9e3779b97f4a7c15ULL) | 1;
  for (std::uint32_t i = 0; i < k_; ++i) {
    const std::uint64_t bit = (h1 + i * h2) % m_;
    if (!(words_[bit / 64] & (1ULL << (bit % 64)))) return false;
  }
  return true;
}

double BloomFilter::expected_fp_rate() const {
  const double k = k_;
  return std::pow(1.0 - std::exp(-k * static_cast<double>(inserted_) / static_cast<double>(m_)), k);
}

std::string BloomFilter::serialize() const {
  std::string out;
  out.reserve(24 + words_.size() * 8);
  put_u64(out, m_);
  put_u64(out, k_);
  put_u64(out, inserted_);
  for (auto w : words_) put_u64(out, w);
  return out;
}

BloomFilter BloomFilter::deserialize(std::string_view bytes) {
  if (bytes.size() < 24) throw IndexError("bloom data truncated");
  BloomFilter b(get_u64(bytes, 0), static_cast<std::uint32_t>(get_u64(bytes, 8)));
  b.inserted_ = get_u64(bytes, 16);
  if (bytes.size() != 24 + b.words_.size() * 8) throw IndexError("bloom data size mismatch");
  for (std::size_t i = 0; i < b.words_.size(); ++i) b.words_[i] = get_u64(bytes, 24 + 8 * i);
  return b;
}

}  // namespace logforge::index
