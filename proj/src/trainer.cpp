#include "idistill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "idistill/batch.hpp"
#include "idistill/metrics.hpp"
#include "idistill/synthgen.hpp"

namespace idistill {

using nlohmann::json;

TrainConfig TrainConfig::autoencoder_defaults() {
  TrainConfig c;
  c.stage = Stage::kAutoencoder;
  c.epochs = 300;
  c.learning_rate = 1e-4;
  c.batch_size = 32;
  return c;
}

TrainConfig TrainConfig::classifier_defaults() {
  TrainConfig c;
  c.stage = Stage::kClassifier;
  c.epochs = 100;
  c.learning_rate = 1e-4;
  c.batch_size = 16;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (patience < 1) throw ValidationError("patience must be at least 1");
  if (kd_weight < 0.0) throw ValidationError("kd weight must be non-negative");
}

json TrainConfig::to_json() const {
  json j{{"stage", stage == Stage::kAutoencoder ? "ae" : "clf"},
         {"epochs", epochs},
         {"learning_rate", learning_rate},
         {"batch_size", batch_size},
         {"seed", seed},
         {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}}},
         {"horizontal_flip", horizontal_flip},
         {"deterministic", deterministic}};
  if (stage == Stage::kClassifier) {
    j["patience"] = patience;
    j["kd_weight"] = kd_weight;
    j["cache_teacher_codes"] = cache_teacher_codes;
    j["early_stop_metric"] = "val_eer";
  }
  return j;
}

json TrainLog::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    json r{{"epoch", e.epoch}, {"loss", e.loss}};
    if (e.bce) r["bce"] = *e.bce;
    if (e.kd) r["kd"] = *e.kd;
    r["val_metric"] = e.val_metric ? json(*e.val_metric) : json(nullptr);
    if (e.val_loss) r["val_loss"] = *e.val_loss;
    r["seconds"] = e.seconds;
    epochs_json.push_back(std::move(r));
  }
  json j{{"header", header}, {"epochs", epochs_json}};
  j["best_epoch"] = best_epoch ? json(*best_epoch) : json(nullptr);
  return j;
}

void TrainLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log '" + path.string() + "'");
  out << to_json().dump(2) << "\n";
}

TrainLog TrainLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log '" + path.string() + "'");
  const json j = json::parse(in);
  TrainLog log;
  log.header = j.at("header");
  for (const auto& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.loss = r.at("loss").get<double>();
    if (r.contains("bce")) e.bce = r["bce"].get<double>();
    if (r.contains("kd")) e.kd = r["kd"].get<double>();
    if (r.contains("val_metric") && !r["val_metric"].is_null()) e.val_metric = r["val_metric"].get<double>();
    if (r.contains("val_loss")) e.val_loss = r["val_loss"].get<double>();
    e.seconds = r.at("seconds").get<double>();
    log.epochs.push_back(e);
  }
  if (j.contains("best_epoch") && !j["best_epoch"].is_null()) log.best_epoch = j["best_epoch"].get<int>();
  return log;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<ImageTensor> load_images(const Manifest& manifest, const std::vector<SampleRecord>& records, int side,
                                     int channels) {
  std::vector<ImageTensor> images;
  images.reserve(records.size());
  for (const auto& r : records) images.push_back(load_image(manifest.resolve(r.image_path), side, channels));
  return images;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

double mean_reconstruction_loss(const AutoencoderModel& model, const std::vector<ImageTensor>& images) {
  double total = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    const nn::Tensor batch = stack_images(std::span(images).subspan(begin, end - begin));
    const nn::Tensor recon = model.decode_batch(model.encode_batch(batch));
    for (int i = 0; i < batch.n(); ++i) {
      total += reconstruction_loss(std::span<const float>(batch.sample(i), batch.sample_size()),
                                   std::span<const float>(recon.sample(i), recon.sample_size()),
                                   model.config().reduction);
    }
  }
  return total / static_cast<double>(images.size());
}

}  // namespace

AutoencoderRun train_autoencoder(const TrainConfig& cfg, const AutoencoderConfig& arch, const Manifest& manifest,
                                 const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val,
                                 const EpochCallback& on_epoch) {
  cfg.validate();
  arch.validate();
  for (const auto* set : {&train, &val}) {
    for (const auto& r : *set) {
      if (r.label != Label::kBonafide) {
        throw ValidationError("autoencoder training is bonafide-only; found attack record '" + r.image_path + "'");
      }
    }
  }
  if (train.empty()) throw ValidationError("autoencoder training set is empty");

  AutoencoderRun run{AutoencoderModel(arch, cfg.seed), TrainLog{}};
  run.log.header = {{"train", cfg.to_json()}, {"architecture", arch.to_json()}, {"n_train", train.size()},
                    {"n_val", val.size()}};
  if (cfg.epochs == 0) return run;

  const std::vector<ImageTensor> train_images = load_images(manifest, train, arch.side, arch.channels);
  const std::vector<ImageTensor> val_images = load_images(manifest, val, arch.side, arch.channels);
  AutoencoderModel& model = run.model;
  nn::Adam enc_opt(model.encoder_parameters(), {.learning_rate = cfg.learning_rate});
  nn::Adam dec_opt(model.decoder_parameters(), {.learning_rate = cfg.learning_rate});
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xae));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = shuffled_order(train_images.size(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<ImageTensor> batch_images;
      for (std::size_t k = begin; k < end; ++k) {
        const ImageTensor& img = train_images[order[k]];
        batch_images.push_back(cfg.horizontal_flip && (rng() & 1U) ? flip_horizontal(img) : img);
      }
      const nn::Tensor batch = stack_images(batch_images);
      const int n = batch.n();
      model.encoder_parameters().zero_grad();
      model.decoder_parameters().zero_grad();
      nn::Tape tape;
      const nn::Tensor recon = model.forward_train(batch, tape);
      nn::Tensor grad(recon.n(), recon.c(), recon.h(), recon.w());
      for (int i = 0; i < n; ++i) {
        const std::span<const float> original(batch.sample(i), batch.sample_size());
        const std::span<const float> output(recon.sample(i), recon.sample_size());
        loss_sum += reconstruction_loss(original, output, arch.reduction);
        const auto g = reconstruction_loss_grad(original, output, arch.reduction);
        float* dst = grad.sample(i);
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] = static_cast<float>(g[k] / n);
      }
      model.backward(grad, tape);
      enc_opt.step(model.encoder_parameters());
      dec_opt.step(model.decoder_parameters());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_images.size());
    if (!val_images.empty()) rec.val_metric = mean_reconstruction_loss(model, val_images);
    rec.seconds = cfg.deterministic ? 0.0 : elapsed(start);
    run.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  run.log.best_epoch = cfg.epochs;
  return run;
}

std::vector<TeacherCodes> teacher_codes(const AutoencoderModel& teacher, const Manifest& manifest,
                                        const std::vector<SampleRecord>& records) {
  const auto& arch = teacher.config();
  std::vector<ImageTensor> inputs;
  for (const auto& r : records) {
    validate_record(r);
    if (r.label == Label::kBonafide) {
      inputs.push_back(load_image(manifest.resolve(r.image_path), arch.side, arch.channels));
      continue;
    }
    for (const auto& src : {*r.source_a, *r.source_b}) {
      const auto path = manifest.resolve(src);
      if (!std::filesystem::exists(path)) {
        throw IoError("morph '" + r.image_path + "': source image '" + path.string() + "' not found");
      }
      try {
        inputs.push_back(load_image(path, arch.side, arch.channels));
      } catch (const IoError& e) {
        throw IoError("morph '" + r.image_path + "': " + e.what());
      }
    }
  }
  std::vector<TeacherCodes> out(records.size());
  if (inputs.empty()) return out;
  const nn::Tensor codes = teacher.encode_batch(stack_images(inputs));
  int k = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].label == Label::kBonafide) {
      out[i].u = row_vector(codes, k++);
    } else {
      out[i].u_a = row_vector(codes, k++);
      out[i].u_b = row_vector(codes, k++);
    }
  }
  return out;
}

namespace {

struct StepTotals {
  double loss = 0.0;
  double bce = 0.0;
  double kd = 0.0;
};

// Teacher codes keyed by record index, either precomputed or encoded per batch.
class TeacherCodeSource {
 public:
  TeacherCodeSource(const AutoencoderModel& teacher, const Manifest& manifest,
                    const std::vector<SampleRecord>& records, bool cache)
      : teacher_(teacher), manifest_(manifest), records_(records) {
    if (cache) cached_ = teacher_codes(teacher, manifest, records);
  }

  std::vector<TeacherCodes> lookup(const std::vector<std::size_t>& indices) const {
    if (!cached_.empty()) {
      std::vector<TeacherCodes> out;
      for (auto i : indices) out.push_back(cached_[i]);
      return out;
    }
    std::vector<SampleRecord> subset;
    for (auto i : indices) subset.push_back(records_[i]);
    return teacher_codes(teacher_, manifest_, subset);
  }

 private:
  const AutoencoderModel& teacher_;
  const Manifest& manifest_;
  const std::vector<SampleRecord>& records_;
  std::vector<TeacherCodes> cached_;
};

struct Validation {
  double eer = 0.0;
  double loss = 0.0;
};

Validation validate_classifier(const MorphClassifier& model, const std::vector<ImageTensor>& images,
                               const std::vector<SampleRecord>& records, const std::vector<TeacherCodes>& codes,
                               double kd_weight) {
  ScoreSet scores;
  double loss = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    const VectorBatch vb = model.extract_batch(stack_images(std::span(images).subspan(begin, end - begin)));
    for (std::size_t i = begin; i < end; ++i) {
      const int row = static_cast<int>(i - begin);
      const SampleLoss sl = sample_loss(records[i].label, codes[i], row_vector(vb.v1, row), row_vector(vb.v2, row),
                                        model.scorer_weights(), kd_weight);
      loss += sl.value;
      (records[i].label == Label::kBonafide ? scores.bonafide_scores : scores.attack_scores)
          .push_back(sl.scores.bonafide_score);
    }
  }
  return {compute_eer(scores).eer, loss / static_cast<double>(images.size())};
}

bool has_both_classes(const std::vector<SampleRecord>& records) {
  const bool b = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::kBonafide; });
  const bool a = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::kAttack; });
  return a && b;
}

}  // namespace

SampleLoss sample_loss(Label label, const TeacherCodes& codes, const LatentVector& v1, const LatentVector& v2,
                       const LatentVector& w, double kd_weight, CosineMode mode) {
  KdContext ctx;
  ctx.label = label;
  ctx.u = codes.u;
  ctx.u_a = codes.u_a;
  ctx.u_b = codes.u_b;
  ctx.v1 = v1;
  ctx.v2 = v2;
  ctx.id1 = identity_score(w, v1);
  ctx.id2 = identity_score(w, v2);
  const double y_hat = fuse(ctx.id1, ctx.id2);
  const JointResult jr = joint_loss(ctx, y_hat, kd_weight, mode);

  SampleLoss out;
  out.value = jr.value;
  out.bce = jr.bce;
  out.kd = jr.kd;
  out.branch = jr.branch;
  out.scores = {ctx.id1, ctx.id2, y_hat};
  // Chain through y_hat = 1 - id1*id2 and id = sigmoid(W . v).
  const double g_logit1 = (jr.grad.id1 - jr.grad_y_hat * ctx.id2) * ctx.id1 * (1.0 - ctx.id1);
  const double g_logit2 = (jr.grad.id2 - jr.grad_y_hat * ctx.id1) * ctx.id2 * (1.0 - ctx.id2);
  out.grad_v1 = jr.grad.v1 + g_logit1 * w;
  out.grad_v2 = jr.grad.v2 + g_logit2 * w;
  out.grad_w = g_logit1 * v1 + g_logit2 * v2;
  return out;
}

ClassifierRun train_classifier(const TrainConfig& cfg, const ClassifierConfig& arch, const Manifest& manifest,
                               const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val,
                               const AutoencoderModel& teacher, const EpochCallback& on_epoch) {
  cfg.validate();
  arch.validate();
  if (!has_both_classes(train)) {
    throw ValidationError("classifier training needs both bonafide and attack records");
  }
  if (teacher.config().latent_dim != arch.latent_dim) {
    throw ValidationError("teacher latent dim " + std::to_string(teacher.config().latent_dim) +
                          " differs from student latent dim " + std::to_string(arch.latent_dim));
  }

  ClassifierRun run{MorphClassifier(arch, cfg.seed), TrainLog{}};
  run.log.header = {{"train", cfg.to_json()},
                    {"architecture", arch.to_json()},
                    {"teacher_encoder_hash", teacher.encoder_hash()},
                    {"n_train", train.size()},
                    {"n_val", val.size()}};
  if (cfg.epochs == 0) return run;

  MorphClassifier& model = run.model;
  const std::vector<ImageTensor> train_images = load_images(manifest, train, arch.side, arch.channels);
  const bool use_val = has_both_classes(val);
  const std::vector<ImageTensor> val_images =
      use_val ? load_images(manifest, val, arch.side, arch.channels) : std::vector<ImageTensor>{};
  const std::vector<TeacherCodes> val_codes = use_val ? teacher_codes(teacher, manifest, val) : std::vector<TeacherCodes>{};
  const TeacherCodeSource codes(teacher, manifest, train, cfg.cache_teacher_codes);

  nn::Adam opt(model.parameters(), {.learning_rate = cfg.learning_rate});
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xc1f));
  nn::ParameterStore best = model.parameters();
  std::optional<std::pair<double, double>> best_key;
  int since_best = 0;
  const int latent = arch.latent_dim;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = shuffled_order(train_images.size(), rng);
    StepTotals totals;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<ImageTensor> batch_images;
      for (auto i : idx) {
        const ImageTensor& img = train_images[i];
        batch_images.push_back(cfg.horizontal_flip && (rng() & 1U) ? flip_horizontal(img) : img);
      }
      const std::vector<TeacherCodes> batch_codes = codes.lookup(idx);
      const int n = static_cast<int>(idx.size());

      model.parameters().zero_grad();
      nn::Tape tape;
      const VectorBatch vb = model.forward_train(stack_images(batch_images), tape);
      const LatentVector w = model.scorer_weights();
      LatentVector grad_w = LatentVector::Zero(latent);
      nn::Tensor grad_v1(n, latent, 1, 1), grad_v2(n, latent, 1, 1);
      for (int i = 0; i < n; ++i) {
        const SampleLoss sl =
            sample_loss(train[idx[i]].label, batch_codes[i], row_vector(vb.v1, i), row_vector(vb.v2, i), w, cfg.kd_weight);
        totals.loss += sl.value;
        totals.bce += sl.bce;
        totals.kd += sl.kd;
        grad_w += sl.grad_w / n;
        for (int k = 0; k < latent; ++k) {
          grad_v1.sample(i)[k] = static_cast<float>(sl.grad_v1[k] / n);
          grad_v2.sample(i)[k] = static_cast<float>(sl.grad_v2[k] / n);
        }
      }
      model.backward(grad_v1, grad_v2, tape);
      nn::Tensor& scorer_grad = model.parameters().grad(model.scorer_index());
      for (int k = 0; k < latent; ++k) scorer_grad[k] += static_cast<float>(grad_w[k]);
      opt.step(model.parameters());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double count = static_cast<double>(train_images.size());
    rec.loss = totals.loss / count;
    rec.bce = totals.bce / count;
    rec.kd = totals.kd / count;
    bool improved = true;
    if (use_val) {
      const Validation v = validate_classifier(model, val_images, val, val_codes, cfg.kd_weight);
      rec.val_metric = v.eer;
      rec.val_loss = v.loss;
      const std::pair<double, double> key{v.eer, v.loss};
      improved = !best_key || key < *best_key;
      if (improved) best_key = key;
    }
    if (improved) {
      best = model.parameters();
      run.log.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.seconds = cfg.deterministic ? 0.0 : elapsed(start);
    run.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (use_val && since_best >= cfg.patience) break;
  }
  model.parameters().assign_values(best);
  return run;
}

}  // namespace idistill
