#include "idistill/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "idistill/core.hpp"

namespace idistill {

namespace {

constexpr std::array<char, 8> kMagic = {'I', 'D', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated checkpoint '" + path.string() + "'");
  }
  return value;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<const nn::ParameterStore*>& stores,
                     const nlohmann::json& sidecar) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic.data(), kMagic.size());
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(stores.size()));
    for (const auto* store : stores) {
      write_pod(out, static_cast<std::uint32_t>(store->size()));
      for (std::size_t i = 0; i < store->size(); ++i) {
        const auto& name = store->name(static_cast<int>(i));
        const auto& t = store->value(static_cast<int>(i));
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        for (int d : {t.n(), t.c(), t.h(), t.w()}) write_pod(out, static_cast<std::int32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      }
    }
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw IoError("cannot write checkpoint sidecar for '" + path.string() + "'");
  side << sidecar.dump(2) << "\n";
}

nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw IoError("cannot open checkpoint sidecar '" + sidecar_path(path).string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint sidecar '" + sidecar_path(path).string() + "': " + e.what());
  }
}

void load_checkpoint_values(const std::filesystem::path& path, const std::vector<nn::ParameterStore*>& stores) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("'" + path.string() + "' is not an idistill checkpoint");
  }
  if (read_pod<std::uint32_t>(in, path) != kVersion) throw IoError("unsupported checkpoint version in '" + path.string() + "'");
  if (read_pod<std::uint32_t>(in, path) != stores.size()) throw ValidationError("checkpoint store count mismatch");
  for (auto* store : stores) {
    if (read_pod<std::uint32_t>(in, path) != store->size()) throw ValidationError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < store->size(); ++i) {
      auto& t = store->value(static_cast<int>(i));
      const auto len = read_pod<std::uint32_t>(in, path);
      std::string name(len, '\0');
      if (!in.read(name.data(), len)) throw IoError("truncated checkpoint '" + path.string() + "'");
      std::array<std::int32_t, 4> shape{};
      for (auto& d : shape) d = read_pod<std::int32_t>(in, path);
      if (name != store->name(static_cast<int>(i)) || shape[0] != t.n() || shape[1] != t.c() || shape[2] != t.h() ||
          shape[3] != t.w()) {
        throw ValidationError("checkpoint tensor '" + name + "' does not match the configured architecture");
      }
      if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
        throw IoError("truncated checkpoint '" + path.string() + "'");
      }
    }
  }
}

}  // namespace idistill
