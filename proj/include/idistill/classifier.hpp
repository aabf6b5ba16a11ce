#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "idistill/core.hpp"
#include "idistill/losses.hpp"
#include "idistill/nn.hpp"

namespace idistill {

struct ClassifierConfig {
  int side = kDefaultSide;
  int channels = kDefaultChannels;
  int latent_dim = kLatentDim;
  int stem_width = 16;
  std::vector<int> widths = {16, 32, 64, 128};
  int blocks_per_stage = 1;

  /// ResNet-18 stage layout: widths 64..512, two basic blocks per stage.
  static ClassifierConfig resnet18();

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Per-vector identity probabilities and the fused bonafide score.
struct ScoreTriple {
  double id_1 = 0.0;
  double id_2 = 0.0;
  double bonafide_score = 1.0;
};

/// sigmoid(W . v); no bias.
double identity_score(const LatentVector& weights, const LatentVector& v);

/// 1 - id_1 * id_2. Both inputs must lie in [0,1].
double fuse(double id_1, double id_2);

struct VectorBatch {
  nn::Tensor v1;  // (N, latent, 1, 1)
  nn::Tensor v2;
};

/// Student network: residual backbone, global average pooling, two
/// independent linear heads producing v1 and v2, and one bias-free scorer W
/// applied to each vector separately.
class MorphClassifier {
 public:
  MorphClassifier(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }

  std::pair<LatentVector, LatentVector> extract_vectors(const ImageTensor& image) const;
  VectorBatch extract_batch(const nn::Tensor& images) const;
  ScoreTriple predict(const ImageTensor& image) const;
  std::vector<ScoreTriple> predict_batch(std::span<const ImageTensor> images) const;
  /// Scores from precomputed vectors.
  ScoreTriple score(const LatentVector& v1, const LatentVector& v2) const;

  LatentVector scorer_weights() const;
  int scorer_index() const { return scorer_; }
  std::size_t scorer_parameter_count() const { return params_.value(scorer_).size(); }
  /// Everything before the heads.
  std::size_t backbone_parameter_count() const;

  VectorBatch forward_train(const nn::Tensor& images, nn::Tape& tape) const;
  /// Accumulates parameter gradients from d loss / d v1 and d loss / d v2.
  /// Scorer gradients are added directly to parameters().grad(scorer_index()).
  void backward(const nn::Tensor& grad_v1, const nn::Tensor& grad_v2, nn::Tape& tape);

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  std::string parameter_hash() const { return params_.hash(); }

  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static MorphClassifier load(const std::filesystem::path& path);

 private:
  void check_batch(const nn::Tensor& images) const;

  ClassifierConfig config_;
  nn::ParameterStore params_;
  nn::Sequential backbone_;
  std::shared_ptr<const nn::Linear> head_1_;
  std::shared_ptr<const nn::Linear> head_2_;
  int scorer_ = -1;
  std::size_t backbone_params_ = 0;
};

}  // namespace idistill
