#include "idistill/autoencoder.hpp"

#include <random>

#include "idistill/batch.hpp"
#include "idistill/checkpoint.hpp"
#include "idistill/hash.hpp"

namespace idistill {

using nlohmann::json;

void AutoencoderConfig::validate() const {
  if (channels != 1 && channels != 3) throw ValidationError("autoencoder channels must be 1 or 3");
  if (latent_dim <= 0) throw ValidationError("latent_dim must be positive");
  if (widths.empty()) throw ValidationError("autoencoder needs at least one stage");
  for (int w : widths) {
    if (w <= 0) throw ValidationError("stage widths must be positive");
  }
  const int factor = 1 << widths.size();
  if (side <= 0 || side % factor != 0) {
    throw ValidationError("input side " + std::to_string(side) + " is not divisible by 2^" +
                          std::to_string(widths.size()));
  }
}

json AutoencoderConfig::to_json() const {
  return json{{"side", side},
              {"channels", channels},
              {"latent_dim", latent_dim},
              {"widths", widths},
              {"reduction", reduction == Reduction::kMean ? "mean" : "sum"}};
}

AutoencoderConfig AutoencoderConfig::from_json(const json& j) {
  AutoencoderConfig c;
  c.side = j.at("side").get<int>();
  c.channels = j.at("channels").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.widths = j.at("widths").get<std::vector<int>>();
  c.reduction = j.value("reduction", std::string("mean")) == "sum" ? Reduction::kSum : Reduction::kMean;
  return c;
}

AutoencoderModel::AutoencoderModel(const AutoencoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& widths = config_.widths;
  const int stages = static_cast<int>(widths.size());
  const int grid = config_.side >> stages;
  const int flat = widths.back() * grid * grid;

  int in = config_.channels;
  for (int s = 0; s < stages; ++s) {
    const std::string name = "enc" + std::to_string(s);
    encoder_.push(std::make_shared<nn::Conv2d>(encoder_params_, name + ".down", in, widths[s], 3, 2, 1, rng));
    encoder_.push(std::make_shared<nn::ReLU>());
    encoder_.push(std::make_shared<nn::Conv2d>(encoder_params_, name + ".conv", widths[s], widths[s], 3, 1, 1, rng));
    encoder_.push(std::make_shared<nn::ReLU>());
    in = widths[s];
  }
  encoder_.push(std::make_shared<nn::Linear>(encoder_params_, "enc.code", flat, config_.latent_dim, rng));

  decoder_.push(std::make_shared<nn::Linear>(decoder_params_, "dec.expand", config_.latent_dim, flat, rng));
  decoder_.push(std::make_shared<nn::ReLU>());
  decoder_.push(std::make_shared<nn::Reshape>(widths.back(), grid, grid));
  for (int s = stages - 1; s >= 0; --s) {
    const std::string name = "dec" + std::to_string(s);
    const int out = s > 0 ? widths[s - 1] : widths[0];
    decoder_.push(std::make_shared<nn::ConvTranspose2d>(decoder_params_, name + ".up", widths[s], out, 4, 2, 1, rng));
    decoder_.push(std::make_shared<nn::ReLU>());
    if (s > 0) {
      decoder_.push(std::make_shared<nn::Conv2d>(decoder_params_, name + ".conv", out, out, 3, 1, 1, rng));
      decoder_.push(std::make_shared<nn::ReLU>());
    }
  }
  decoder_.push(std::make_shared<nn::Conv2d>(decoder_params_, "dec.out", widths[0], config_.channels, 3, 1, 1, rng));
  decoder_.push(std::make_shared<nn::Sigmoid>());
}

void AutoencoderModel::check_image(const ImageTensor& image) const {
  if (image.height() != config_.side || image.width() != config_.side || image.channels() != config_.channels) {
    throw ValidationError("image shape " + std::to_string(image.height()) + "x" + std::to_string(image.width()) + "x" +
                          std::to_string(image.channels()) + " does not match the autoencoder input " +
                          std::to_string(config_.side) + "x" + std::to_string(config_.side) + "x" +
                          std::to_string(config_.channels));
  }
}

nn::Tensor AutoencoderModel::encode_batch(const nn::Tensor& images) const {
  if (images.c() != config_.channels || images.h() != config_.side || images.w() != config_.side) {
    throw ValidationError("batch shape does not match the autoencoder input");
  }
  return encoder_.forward(encoder_params_, images, nullptr);
}

nn::Tensor AutoencoderModel::decode_batch(const nn::Tensor& codes) const {
  if (static_cast<int>(codes.sample_size()) != config_.latent_dim) {
    throw ValidationError("code dimension " + std::to_string(codes.sample_size()) + " != " +
                          std::to_string(config_.latent_dim));
  }
  return decoder_.forward(decoder_params_, codes, nullptr);
}

LatentVector AutoencoderModel::encode(const ImageTensor& image) const {
  check_image(image);
  return row_vector(encode_batch(stack_images(std::span(&image, 1))), 0);
}

ImageTensor AutoencoderModel::decode(const LatentVector& code) const {
  if (code.size() != config_.latent_dim) {
    throw ValidationError("code dimension " + std::to_string(code.size()) + " != " + std::to_string(config_.latent_dim));
  }
  nn::Tensor batch(1, config_.latent_dim, 1, 1);
  for (int k = 0; k < config_.latent_dim; ++k) batch[k] = static_cast<float>(code[k]);
  return unstack_image(decode_batch(batch), 0);
}

ImageTensor AutoencoderModel::reconstruct(const ImageTensor& image) const {
  check_image(image);
  return unstack_image(decode_batch(encode_batch(stack_images(std::span(&image, 1)))), 0);
}

nn::Tensor AutoencoderModel::forward_train(const nn::Tensor& images, nn::Tape& tape) const {
  const nn::Tensor codes = encoder_.forward(encoder_params_, images, &tape);
  return decoder_.forward(decoder_params_, codes, &tape);
}

void AutoencoderModel::backward(const nn::Tensor& grad_recon, nn::Tape& tape) {
  const nn::Tensor grad_code = decoder_.backward(decoder_params_, grad_recon, tape);
  encoder_.backward(encoder_params_, grad_code, tape);
}

std::string AutoencoderModel::parameter_hash() const {
  return hash_text(encoder_params_.hash() + decoder_params_.hash());
}

void AutoencoderModel::save(const std::filesystem::path& path, const json& metadata) const {
  json side = metadata.is_object() ? metadata : json::object();
  side["model"] = "autoencoder";
  side["latent_dim"] = config_.latent_dim;
  side["input_side"] = config_.side;
  side["channels"] = config_.channels;
  side["architecture"] = config_.to_json();
  side["config_hash"] = hash_text(config_.to_json().dump());
  side["parameter_hash"] = parameter_hash();
  side["encoder_hash"] = encoder_hash();
  save_checkpoint(path, {&encoder_params_, &decoder_params_}, side);
}

AutoencoderModel AutoencoderModel::load(const std::filesystem::path& path) {
  const json side = read_sidecar(path);
  if (side.value("model", std::string()) != "autoencoder") {
    throw ValidationError("'" + path.string() + "' is not an autoencoder checkpoint");
  }
  AutoencoderModel model(AutoencoderConfig::from_json(side.at("architecture")), 0);
  load_checkpoint_values(path, {&model.encoder_params_, &model.decoder_params_});
  return model;
}

double reconstruction_loss(const ImageTensor& original, const ImageTensor& recon, Reduction reduction) {
  if (!original.same_shape(recon)) throw ValidationError("reconstruction loss shape mismatch");
  return reconstruction_loss(std::span<const float>(original.data()), std::span<const float>(recon.data()), reduction);
}

}  // namespace idistill
