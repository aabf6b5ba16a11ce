#include <doctest.h>

#include <cmath>

#include "idistill/synthgen.hpp"
#include "idistill/trainer.hpp"
#include "test_util.hpp"

using namespace idistill;

namespace {

// One small dataset shared by the tests in this file.
const Manifest& dataset() {
  static const Manifest m = [] {
    GenConfig cfg;
    cfg.n_identities = 20;
    cfg.images_per_identity = 3;
    cfg.n_morphs = 30;
    cfg.seed = 5;
    cfg.side = 32;
    return load_manifest(generate_dataset(cfg, testing::scratch_dir("trainer_data")));
  }();
  return m;
}

AutoencoderConfig ae_arch() {
  AutoencoderConfig c;
  c.side = 32;
  c.widths = {8, 16, 32};
  return c;
}

ClassifierConfig clf_arch() {
  ClassifierConfig c;
  c.side = 32;
  c.stem_width = 8;
  c.widths = {8, 16, 32};
  return c;
}

TrainConfig ae_cfg(int epochs) {
  TrainConfig c = TrainConfig::autoencoder_defaults();
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  c.deterministic = true;
  return c;
}

TrainConfig clf_cfg(int epochs) {
  TrainConfig c = TrainConfig::classifier_defaults();
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  c.deterministic = true;
  return c;
}

}  // namespace

TEST_CASE("training defaults: AE 300 epochs lr 1e-4 batch 32, classifier lr 1e-4 batch 16") {
  const TrainConfig ae = TrainConfig::autoencoder_defaults();
  CHECK(ae.epochs == 300);
  CHECK(ae.learning_rate == 1e-4);
  CHECK(ae.batch_size == 32);
  const TrainConfig clf = TrainConfig::classifier_defaults();
  CHECK(clf.learning_rate == 1e-4);
  CHECK(clf.batch_size == 16);
  CHECK(clf.epochs == 100);
  CHECK(clf.patience == 20);
  CHECK(clf.kd_weight == 1.0);
  TrainConfig bad = clf;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("autoencoder: 40 bonafide images, 30 epochs lower the loss") {
  const Manifest& m = dataset();
  std::vector<SampleRecord> bona;
  for (const auto& r : m.records) {
    if (r.label == Label::kBonafide && bona.size() < 40) bona.push_back(r);
  }
  REQUIRE(bona.size() == 40);
  const std::vector<SampleRecord> held = filter_records(m.records, Split::kTest, Label::kBonafide);
  const AutoencoderRun run = train_autoencoder(ae_cfg(30), ae_arch(), m, bona, held);
  REQUIRE(run.log.epochs.size() == 30);
  CHECK(run.log.epochs.back().loss < run.log.epochs.front().loss);
  for (std::size_t i = 0; i < run.log.epochs.size(); ++i) CHECK(run.log.epochs[i].epoch == static_cast<int>(i) + 1);

  // Held-out reconstruction improves over the untrained model.
  const AutoencoderModel init(ae_arch(), ae_cfg(30).seed);
  double before = 0.0, after = 0.0;
  for (const auto& r : held) {
    const ImageTensor img = load_image(m.resolve(r.image_path), 32, 3);
    before += reconstruction_loss(img, init.reconstruct(img));
    after += reconstruction_loss(img, run.model.reconstruct(img));
  }
  CHECK(after < before);
}

TEST_CASE("autoencoder: zero epochs returns the initialisation and an empty log") {
  const Manifest& m = dataset();
  const auto bona = filter_records(m.records, Split::kTrain, Label::kBonafide);
  const AutoencoderRun run = train_autoencoder(ae_cfg(0), ae_arch(), m, bona);
  CHECK(run.log.epochs.empty());
  CHECK(run.model.parameter_hash() == AutoencoderModel(ae_arch(), 0).parameter_hash());
}

TEST_CASE("autoencoder: any attack record is rejected before training") {
  const Manifest& m = dataset();
  auto records = filter_records(m.records, Split::kTrain, Label::kBonafide);
  records.push_back(filter_records(m.records, Split::kTrain, Label::kAttack).front());
  CHECK_THROWS_AS(train_autoencoder(ae_cfg(1), ae_arch(), m, records), ValidationError);
}

TEST_CASE("teacher codes: u for bonafide, u_a/u_b for attacks") {
  const Manifest& m = dataset();
  const AutoencoderModel teacher(ae_arch(), 1);
  const auto train = filter_records(m.records, Split::kTrain);
  const auto codes = teacher_codes(teacher, m, train);
  REQUIRE(codes.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label == Label::kBonafide) {
      CHECK(codes[i].u.has_value());
      CHECK_FALSE(codes[i].u_a.has_value());
      CHECK(*codes[i].u == teacher.encode(load_image(m.resolve(train[i].image_path), 32, 3)));
    } else {
      CHECK_FALSE(codes[i].u.has_value());
      REQUIRE(codes[i].u_a.has_value());
      REQUIRE(codes[i].u_b.has_value());
      CHECK(*codes[i].u_a == teacher.encode(load_image(m.resolve(*train[i].source_a), 32, 3)));
    }
  }

  auto broken = filter_records(m.records, Split::kTrain, Label::kAttack);
  broken.front().source_b = "bonafide/does_not_exist.png";
  try {
    teacher_codes(teacher, m, broken);
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(broken.front().image_path) != std::string::npos);
  }
}

TEST_CASE("classifier: single-class data and latent mismatch are rejected") {
  const Manifest& m = dataset();
  const AutoencoderModel teacher(ae_arch(), 1);
  const auto bona = filter_records(m.records, Split::kTrain, Label::kBonafide);
  CHECK_THROWS_AS(train_classifier(clf_cfg(1), clf_arch(), m, bona, {}, teacher), ValidationError);
  ClassifierConfig wide = clf_arch();
  wide.latent_dim = 64;
  CHECK_THROWS_AS(train_classifier(clf_cfg(1), wide, m, filter_records(m.records, Split::kTrain), {}, teacher),
                  ValidationError);
}

TEST_CASE("classifier: frozen teacher, loss composition, determinism, better than chance") {
  const Manifest& m = dataset();
  const AutoencoderRun ae = train_autoencoder(ae_cfg(5), ae_arch(), m, filter_records(m.records, Split::kTrain, Label::kBonafide));
  const std::string teacher_hash = ae.model.encoder_hash();
  const std::string teacher_full = ae.model.parameter_hash();
  const auto train = filter_records(m.records, Split::kTrain);
  const auto val = filter_records(m.records, Split::kVal);

  TrainConfig cfg = clf_cfg(50);
  const ClassifierRun a = train_classifier(cfg, clf_arch(), m, train, val, ae.model);
  CHECK(ae.model.encoder_hash() == teacher_hash);
  CHECK(ae.model.parameter_hash() == teacher_full);
  CHECK(a.log.header.at("teacher_encoder_hash") == teacher_hash);

  REQUIRE_FALSE(a.log.epochs.empty());
  for (const auto& rec : a.log.epochs) {
    REQUIRE(rec.bce.has_value());
    REQUIRE(rec.kd.has_value());
    CHECK(std::abs(rec.loss - (*rec.bce + *rec.kd)) < 1e-6);
    REQUIRE(rec.val_metric.has_value());
  }
  REQUIRE(a.log.best_epoch.has_value());
  const double best_eer = *a.log.epochs[*a.log.best_epoch - 1].val_metric;
  CHECK(best_eer < 0.5);

  cfg.epochs = 3;
  const ClassifierRun b1 = train_classifier(cfg, clf_arch(), m, train, val, ae.model);
  const ClassifierRun b2 = train_classifier(cfg, clf_arch(), m, train, val, ae.model);
  CHECK(b1.log.to_json().dump() == b2.log.to_json().dump());
  CHECK(b1.model.parameter_hash() == b2.model.parameter_hash());

  cfg.cache_teacher_codes = true;
  const ClassifierRun cached = train_classifier(cfg, clf_arch(), m, train, val, ae.model);
  CHECK(cached.model.parameter_hash() == b1.model.parameter_hash());
}

TEST_CASE("train log JSON round trip") {
  TrainLog log;
  log.header = {{"k", 1}};
  log.epochs.push_back({1, 0.5, 0.3, 0.2, 0.4, 0.45, 1.25});
  log.epochs.push_back({2, 0.25, std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0.0});
  log.best_epoch = 1;
  const auto dir = testing::scratch_dir("trainlog");
  log.save(dir / "log.json");
  const TrainLog back = TrainLog::load(dir / "log.json");
  CHECK(back.to_json() == log.to_json());
}
