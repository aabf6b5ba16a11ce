#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "idistill/core.hpp"

namespace idistill {

using Rgb = std::array<float, 3>;

/// Procedural face proxy. Geometry is in units of the image side.
struct IdentityParams {
  Rgb background{};
  float background_gradient = 0.0f;
  float face_cx = 0.5f, face_cy = 0.5f, face_ax = 0.3f, face_ay = 0.38f;
  Rgb skin{};
  Rgb hair{};
  float hair_line = 0.4f;  // fraction of the face half-height covered by hair
  float eye_spacing = 0.5f;
  float eye_height = 0.0f;
  float eye_size = 0.05f;
  Rgb iris{};
  float nose_length = 0.1f;
  float mouth_y = 0.45f;
  float mouth_width = 0.35f;
  float mouth_curve = 0.03f;
  Rgb lips{};
  float jitter_scale = 1.0f;

  /// Deterministic draw from a seed.
  static IdentityParams sample(std::uint64_t seed);
  bool operator==(const IdentityParams&) const = default;
};

/// Renders one image of an identity. jitter_seed drives small pose,
/// illumination and sensor-noise perturbations; the same pair always yields
/// the same image.
ImageTensor render_identity(const IdentityParams& params, std::uint64_t jitter_seed, int side = kDefaultSide);

/// alpha * a + (1 - alpha) * b, clipped to [0,1].
ImageTensor morph(const ImageTensor& a, const ImageTensor& b, double alpha);

struct GenConfig {
  int n_identities = 30;
  int images_per_identity = 3;
  int n_morphs = 40;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  int side = kDefaultSide;
  /// Identity-level split fractions; the test split takes the remainder.
  double train_fraction = 0.6;
  double val_fraction = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Identity counts per split (train, val, test) for a config.
std::array<int, 3> split_identity_counts(const GenConfig& cfg);

/// Writes bonafide/<identity>_<k>.png, morph/<i>_<j>.png and manifest.jsonl
/// under out_dir and returns the manifest path. Splits are identity-disjoint
/// and each morph blends two distinct identities from the same split.
std::filesystem::path generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

/// Seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace idistill
