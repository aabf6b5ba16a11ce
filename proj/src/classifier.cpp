#include "idistill/classifier.hpp"

#include <cmath>
#include <random>

#include "idistill/batch.hpp"
#include "idistill/checkpoint.hpp"
#include "idistill/hash.hpp"

namespace idistill {

using nlohmann::json;

ClassifierConfig ClassifierConfig::resnet18() {
  ClassifierConfig c;
  c.stem_width = 64;
  c.widths = {64, 128, 256, 512};
  c.blocks_per_stage = 2;
  return c;
}

void ClassifierConfig::validate() const {
  if (channels != 1 && channels != 3) throw ValidationError("classifier channels must be 1 or 3");
  if (side < 8) throw ValidationError("classifier input side must be at least 8");
  if (latent_dim <= 0 || stem_width <= 0 || blocks_per_stage <= 0 || widths.empty()) {
    throw ValidationError("classifier dimensions must be positive");
  }
  for (int w : widths) {
    if (w <= 0) throw ValidationError("stage widths must be positive");
  }
}

json ClassifierConfig::to_json() const {
  return json{{"side", side},
              {"channels", channels},
              {"latent_dim", latent_dim},
              {"stem_width", stem_width},
              {"widths", widths},
              {"blocks_per_stage", blocks_per_stage}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  c.side = j.at("side").get<int>();
  c.channels = j.at("channels").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.stem_width = j.at("stem_width").get<int>();
  c.widths = j.at("widths").get<std::vector<int>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  return c;
}

double identity_score(const LatentVector& weights, const LatentVector& v) {
  if (weights.size() != v.size()) throw ValidationError("scorer and vector dimensions differ");
  const double logit = weights.dot(v);
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

double fuse(double id_1, double id_2) {
  if (!(id_1 >= 0.0 && id_1 <= 1.0 && id_2 >= 0.0 && id_2 <= 1.0)) {
    throw ValidationError("identity scores must lie in [0,1]");
  }
  return 1.0 - id_1 * id_2;
}

MorphClassifier::MorphClassifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_.push(std::make_shared<nn::Conv2d>(params_, "stem", config_.channels, config_.stem_width, 3, 2, 1, rng));
  backbone_.push(std::make_shared<nn::ReLU>());
  int in = config_.stem_width;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      backbone_.push(std::make_shared<nn::ResidualBlock>(params_, name, in, config_.widths[s], stride, rng));
      in = config_.widths[s];
    }
  }
  backbone_.push(std::make_shared<nn::GlobalAvgPool>());
  backbone_params_ = params_.scalar_count();

  head_1_ = std::make_shared<nn::Linear>(params_, "head1", in, config_.latent_dim, rng);
  head_2_ = std::make_shared<nn::Linear>(params_, "head2", in, config_.latent_dim, rng);
  // Small scorer so initial identity scores sit near 0.5.
  nn::Tensor w(1, config_.latent_dim, 1, 1);
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(config_.latent_dim)));
  for (float& x : w.values()) x = dist(rng);
  scorer_ = params_.add("scorer.weight", std::move(w));
}

void MorphClassifier::check_batch(const nn::Tensor& images) const {
  if (images.c() != config_.channels || images.h() != config_.side || images.w() != config_.side) {
    throw ValidationError("input shape " + std::to_string(images.h()) + "x" + std::to_string(images.w()) + "x" +
                          std::to_string(images.c()) + " does not match the classifier input " +
                          std::to_string(config_.side) + "x" + std::to_string(config_.side) + "x" +
                          std::to_string(config_.channels));
  }
}

VectorBatch MorphClassifier::extract_batch(const nn::Tensor& images) const {
  check_batch(images);
  const nn::Tensor features = backbone_.forward(params_, images, nullptr);
  return {head_1_->forward(params_, features, nullptr), head_2_->forward(params_, features, nullptr)};
}

std::pair<LatentVector, LatentVector> MorphClassifier::extract_vectors(const ImageTensor& image) const {
  const VectorBatch out = extract_batch(stack_images(std::span(&image, 1)));
  return {row_vector(out.v1, 0), row_vector(out.v2, 0)};
}

LatentVector MorphClassifier::scorer_weights() const {
  const nn::Tensor& w = params_.value(scorer_);
  LatentVector out(config_.latent_dim);
  for (int k = 0; k < config_.latent_dim; ++k) out[k] = w[k];
  return out;
}

ScoreTriple MorphClassifier::score(const LatentVector& v1, const LatentVector& v2) const {
  const LatentVector w = scorer_weights();
  ScoreTriple t;
  t.id_1 = identity_score(w, v1);
  t.id_2 = identity_score(w, v2);
  t.bonafide_score = fuse(t.id_1, t.id_2);
  return t;
}

ScoreTriple MorphClassifier::predict(const ImageTensor& image) const {
  const auto [v1, v2] = extract_vectors(image);
  return score(v1, v2);
}

std::vector<ScoreTriple> MorphClassifier::predict_batch(std::span<const ImageTensor> images) const {
  std::vector<ScoreTriple> out;
  if (images.empty()) return out;
  const VectorBatch vb = extract_batch(stack_images(images));
  out.reserve(images.size());
  for (int i = 0; i < vb.v1.n(); ++i) out.push_back(score(row_vector(vb.v1, i), row_vector(vb.v2, i)));
  return out;
}

std::size_t MorphClassifier::backbone_parameter_count() const { return backbone_params_; }

VectorBatch MorphClassifier::forward_train(const nn::Tensor& images, nn::Tape& tape) const {
  check_batch(images);
  const nn::Tensor features = backbone_.forward(params_, images, &tape);
  VectorBatch out;
  out.v1 = head_1_->forward(params_, features, &tape);
  out.v2 = head_2_->forward(params_, features, &tape);
  return out;
}

void MorphClassifier::backward(const nn::Tensor& grad_v1, const nn::Tensor& grad_v2, nn::Tape& tape) {
  nn::Tensor grad_features = head_2_->backward(params_, grad_v2, tape);
  const nn::Tensor g1 = head_1_->backward(params_, grad_v1, tape);
  for (std::size_t i = 0; i < grad_features.size(); ++i) grad_features[i] += g1[i];
  backbone_.backward(params_, grad_features, tape);
}

void MorphClassifier::save(const std::filesystem::path& path, const json& metadata) const {
  json side = metadata.is_object() ? metadata : json::object();
  side["model"] = "classifier";
  side["latent_dim"] = config_.latent_dim;
  side["input_side"] = config_.side;
  side["channels"] = config_.channels;
  side["architecture"] = config_.to_json();
  side["scorer_shape"] = {config_.latent_dim};
  side["scorer_bias"] = false;
  side["config_hash"] = hash_text(config_.to_json().dump());
  side["parameter_hash"] = parameter_hash();
  save_checkpoint(path, {&params_}, side);
}

MorphClassifier MorphClassifier::load(const std::filesystem::path& path) {
  const json side = read_sidecar(path);
  if (side.value("model", std::string()) != "classifier") {
    throw ValidationError("'" + path.string() + "' is not a classifier checkpoint");
  }
  MorphClassifier model(ClassifierConfig::from_json(side.at("architecture")), 0);
  load_checkpoint_values(path, {&model.params_});
  return model;
}

}  // namespace idistill
