#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "idistill/core.hpp"
#include "idistill/losses.hpp"
#include "idistill/nn.hpp"

namespace idistill {

enum class Reduction { kMean, kSum };

struct AutoencoderConfig {
  int side = kDefaultSide;
  int channels = kDefaultChannels;
  int latent_dim = kLatentDim;
  /// Channel width of each stride-2 stage; the bottleneck grid is side / 2^stages.
  std::vector<int> widths = {16, 32, 64, 128};
  Reduction reduction = Reduction::kMean;

  void validate() const;
  nlohmann::json to_json() const;
  static AutoencoderConfig from_json(const nlohmann::json& j);
};

/// Encoder-decoder teacher. The encoder is a stack of U-Net style double-conv
/// stages (the first conv strides by 2) followed by a linear map to the code;
/// the decoder mirrors it with transposed convolutions and ends in a sigmoid.
/// There are no skip connections across the bottleneck, so every bit of the
/// reconstruction has to pass through the code.
class AutoencoderModel {
 public:
  AutoencoderModel(const AutoencoderConfig& config, std::uint64_t seed);

  const AutoencoderConfig& config() const { return config_; }

  LatentVector encode(const ImageTensor& image) const;
  ImageTensor decode(const LatentVector& code) const;
  ImageTensor reconstruct(const ImageTensor& image) const;

  /// Batched inference: (N, C, H, W) -> (N, latent, 1, 1) and back.
  nn::Tensor encode_batch(const nn::Tensor& images) const;
  nn::Tensor decode_batch(const nn::Tensor& codes) const;

  /// Training forward pass caching activations on the tape.
  nn::Tensor forward_train(const nn::Tensor& images, nn::Tape& tape) const;
  /// Accumulates parameter gradients given d(loss)/d(reconstruction).
  void backward(const nn::Tensor& grad_recon, nn::Tape& tape);

  nn::ParameterStore& encoder_parameters() { return encoder_params_; }
  const nn::ParameterStore& encoder_parameters() const { return encoder_params_; }
  nn::ParameterStore& decoder_parameters() { return decoder_params_; }
  const nn::ParameterStore& decoder_parameters() const { return decoder_params_; }

  std::string encoder_hash() const { return encoder_params_.hash(); }
  std::string parameter_hash() const;

  /// Writes the blob and a sidecar with latent_dim, input_side, channels,
  /// the architecture config and any extra metadata.
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static AutoencoderModel load(const std::filesystem::path& path);

 private:
  void check_image(const ImageTensor& image) const;

  AutoencoderConfig config_;
  nn::ParameterStore encoder_params_;
  nn::ParameterStore decoder_params_;
  nn::Sequential encoder_;
  nn::Sequential decoder_;
};

/// Pixel reconstruction error. Mean reduction by default; kSum gives the plain
/// sum of squared differences.
template <typename T>
double reconstruction_loss(std::span<const T> original, std::span<const T> recon,
                           Reduction reduction = Reduction::kMean) {
  if (original.size() != recon.size() || original.empty()) {
    throw ValidationError("reconstruction loss needs equally sized, non-empty tensors");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = static_cast<double>(original[i]) - static_cast<double>(recon[i]);
    sum += d * d;
  }
  return reduction == Reduction::kMean ? sum / static_cast<double>(original.size()) : sum;
}

/// d loss / d recon.
template <typename T>
std::vector<double> reconstruction_loss_grad(std::span<const T> original, std::span<const T> recon,
                                             Reduction reduction = Reduction::kMean) {
  if (original.size() != recon.size() || original.empty()) {
    throw ValidationError("reconstruction loss needs equally sized, non-empty tensors");
  }
  const double scale = reduction == Reduction::kMean ? 2.0 / static_cast<double>(original.size()) : 2.0;
  std::vector<double> grad(original.size());
  for (std::size_t i = 0; i < original.size(); ++i) {
    grad[i] = scale * (static_cast<double>(recon[i]) - static_cast<double>(original[i]));
  }
  return grad;
}

double reconstruction_loss(const ImageTensor& original, const ImageTensor& recon,
                           Reduction reduction = Reduction::kMean);

}  // namespace idistill
