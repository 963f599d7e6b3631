#include "twoview/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace twoview {

namespace {

std::array<unsigned char, 32> sha256_raw(const void* data, std::size_t size) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw std::runtime_error("sha256: digest computation failed");
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::span<const std::byte> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto raw = sha256_raw(bytes.data(), bytes.size());
  std::string hex;
  hex.reserve(64);
  for (unsigned char b : raw) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xF]);
  }
  return hex;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::as_bytes(std::span(text.data(), text.size())));
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view step_name) {
  std::string buf(8 + step_name.size(), '\0');
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((master >> (8 * i)) & 0xFF);
  std::copy(step_name.begin(), step_name.end(), buf.begin() + 8);
  const auto raw = sha256_raw(buf.data(), buf.size());
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed |= static_cast<std::uint64_t>(raw[i]) << (8 * i);
  return seed;
}

}  // namespace twoview
