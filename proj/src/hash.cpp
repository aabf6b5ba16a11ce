#include "idistill/hash.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "idistill/core.hpp"

namespace idistill {

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string hash_text(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fnv1a h;
  h.update(std::string_view(bytes.data(), bytes.size()));
  return h.hex();
}

}  // namespace idistill
