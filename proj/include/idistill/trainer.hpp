#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idistill/autoencoder.hpp"
#include "idistill/classifier.hpp"
#include "idistill/core.hpp"
#include "idistill/losses.hpp"

namespace idistill {

enum class Stage { kAutoencoder, kClassifier };

/// Optimizer is always Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct TrainConfig {
  Stage stage = Stage::kAutoencoder;
  int epochs = 300;
  double learning_rate = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Classifier only: epochs without validation improvement before stopping.
  int patience = 20;
  /// Classifier only: weight on the distillation term (1 = plain sum).
  double kd_weight = 1.0;
  /// Classifier only: encode every teacher input once up front.
  bool cache_teacher_codes = false;
  bool horizontal_flip = false;
  /// Zeroes wall-clock fields so logs are byte-stable across runs.
  bool deterministic = false;

  static TrainConfig autoencoder_defaults();
  static TrainConfig classifier_defaults();

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> bce;
  std::optional<double> kd;
  std::optional<double> val_metric;  // held-out reconstruction loss (AE) or EER (classifier)
  std::optional<double> val_loss;    // classifier joint loss on the validation split
  double seconds = 0.0;
};

struct TrainLog {
  nlohmann::json header = nlohmann::json::object();
  std::vector<EpochRecord> epochs;
  std::optional<int> best_epoch;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
  static TrainLog load(const std::filesystem::path& path);
};

/// Called after every epoch; useful for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

struct AutoencoderRun {
  AutoencoderModel model;
  TrainLog log;
};

/// Stage A: trains on bonafide records only. Any attack record is rejected
/// before training starts. `val` (bonafide) is optional and only monitored.
AutoencoderRun train_autoencoder(const TrainConfig& cfg, const AutoencoderConfig& arch, const Manifest& manifest,
                                 const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val = {},
                                 const EpochCallback& on_epoch = {});

/// Teacher codes for one record: u for bonafide, (u_a, u_b) for attacks.
struct TeacherCodes {
  std::optional<LatentVector> u;
  std::optional<LatentVector> u_a;
  std::optional<LatentVector> u_b;
};

/// Encodes the images each record needs with the frozen teacher. A missing
/// source image raises IoError naming the morph record.
std::vector<TeacherCodes> teacher_codes(const AutoencoderModel& teacher, const Manifest& manifest,
                                        const std::vector<SampleRecord>& records);

/// Joint loss of one sample as a function of the student vectors and the
/// shared scorer W, with gradients chained through id = sigmoid(W . v) and
/// y_hat = 1 - id1 * id2.
struct SampleLoss {
  double value = 0.0;
  double bce = 0.0;
  double kd = 0.0;
  KdBranch branch = KdBranch::kAttack;
  ScoreTriple scores;
  LatentVector grad_v1, grad_v2, grad_w;
};

SampleLoss sample_loss(Label label, const TeacherCodes& codes, const LatentVector& v1, const LatentVector& v2,
                       const LatentVector& w, double kd_weight = 1.0, CosineMode mode = CosineMode::kTraining);

struct ClassifierRun {
  MorphClassifier model;  // parameters of the best validation epoch
  TrainLog log;
};

/// Stage B: trains the student with the joint loss against a frozen teacher.
/// Selection and early stopping use (validation EER, validation loss).
ClassifierRun train_classifier(const TrainConfig& cfg, const ClassifierConfig& arch, const Manifest& manifest,
                               const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val,
                               const AutoencoderModel& teacher, const EpochCallback& on_epoch = {});

}  // namespace idistill
