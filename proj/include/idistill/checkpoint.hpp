#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "idistill/nn.hpp"

namespace idistill {

/// Binary parameter blob at `path` plus a JSON sidecar at `path + ".json"`.
/// The blob stores, per store, every tensor's name, shape and raw float values.
void save_checkpoint(const std::filesystem::path& path, const std::vector<const nn::ParameterStore*>& stores,
                     const nlohmann::json& sidecar);

/// Reads the sidecar only.
nlohmann::json read_sidecar(const std::filesystem::path& path);

/// Fills stores whose layout (names and shapes) must match the blob exactly.
void load_checkpoint_values(const std::filesystem::path& path, const std::vector<nn::ParameterStore*>& stores);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace idistill
