#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace idistill {

/// FNV-1a, 64 bit. Used for parameter fingerprints and file/config hashes,
/// not for anything security related.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }
  template <typename T>
  void update_values(std::span<const T> values) {
    update(std::as_bytes(values));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_text(std::string_view text);
std::string hash_file(const std::filesystem::path& path);

}  // namespace idistill
