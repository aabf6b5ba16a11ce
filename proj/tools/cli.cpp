#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "idistill/autoencoder.hpp"
#include "idistill/classifier.hpp"
#include "idistill/hash.hpp"
#include "idistill/metrics.hpp"
#include "idistill/report.hpp"
#include "idistill/synthgen.hpp"
#include "idistill/trainer.hpp"

namespace idistill::cli {

namespace {

using nlohmann::json;

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("IDISTILL_SEED"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("IDISTILL_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 0;
}

Split parse_split_flag(const std::string& s) { return parse_split(s); }

struct SynthFlags {
  std::string out;
  GenConfig gen;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

struct TrainAeFlags {
  std::string data, out, log;
  TrainConfig train = TrainConfig::autoencoder_defaults();
  AutoencoderConfig arch;
  std::string reduction = "mean";
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

struct TrainClfFlags {
  std::string data, ae, out, log;
  TrainConfig train = TrainConfig::classifier_defaults();
  ClassifierConfig arch;
  bool resnet18 = false;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

struct EvalFlags {
  std::string data, model, out, split = "test";
};

struct ScoreFlags {
  std::string image, model;
  std::optional<double> threshold;
};

struct ReportFlags {
  std::string input, svg, table, label = "IDistill";
};

std::filesystem::path default_log_path(const std::string& out, const std::string& log) {
  return log.empty() ? std::filesystem::path(out + ".log.json") : std::filesystem::path(log);
}

int cmd_synth(SynthFlags& f, std::ostream& out) {
  f.gen.seed = resolve_seed(f.seed_opt, f.seed);
  const auto manifest = generate_dataset(f.gen, f.out);
  out << manifest.string() << "\n";
  return kExitOk;
}

int cmd_train_ae(TrainAeFlags& f, std::ostream& out, std::ostream& err) {
  f.train.seed = resolve_seed(f.seed_opt, f.seed);
  if (f.reduction != "mean" && f.reduction != "sum") throw ValidationError("--reduction must be 'mean' or 'sum'");
  f.arch.reduction = f.reduction == "sum" ? Reduction::kSum : Reduction::kMean;
  f.train.validate();
  f.arch.validate();
  const Manifest manifest = load_manifest(f.data);
  const auto train = filter_records(manifest.records, Split::kTrain, Label::kBonafide);
  const auto val = filter_records(manifest.records, Split::kVal, Label::kBonafide);

  out << json{{"command", "train-ae"}, {"data", f.data}, {"out", f.out}, {"train", f.train.to_json()},
              {"architecture", f.arch.to_json()}}
             .dump()
      << "\n";
  out.flush();
  AutoencoderRun run = train_autoencoder(f.train, f.arch, manifest, train, val, [&err](const EpochRecord& r) {
    err << "[train-ae] epoch " << r.epoch << " loss " << r.loss;
    if (r.val_metric) err << " val_loss " << *r.val_metric;
    err << "\n";
  });
  run.log.header["manifest_hash"] = hash_file(f.data);
  const double final_loss = run.log.epochs.empty() ? 0.0 : run.log.epochs.back().loss;
  run.model.save(f.out, {{"epochs_trained", run.log.epochs.size()}, {"final_loss", final_loss}});
  run.log.save(default_log_path(f.out, f.log));
  out << f.out << "\n";
  return kExitOk;
}

int cmd_train_clf(TrainClfFlags& f, std::ostream& out, std::ostream& err) {
  f.train.seed = resolve_seed(f.seed_opt, f.seed);
  if (f.resnet18) {
    const ClassifierConfig full = ClassifierConfig::resnet18();
    f.arch.stem_width = full.stem_width;
    f.arch.widths = full.widths;
    f.arch.blocks_per_stage = full.blocks_per_stage;
  }
  f.train.validate();
  f.arch.validate();
  const AutoencoderModel teacher = AutoencoderModel::load(f.ae);
  const Manifest manifest = load_manifest(f.data);
  const auto train = filter_records(manifest.records, Split::kTrain);
  const auto val = filter_records(manifest.records, Split::kVal);

  out << json{{"command", "train-clf"}, {"data", f.data}, {"ae", f.ae}, {"out", f.out},
              {"train", f.train.to_json()}, {"architecture", f.arch.to_json()}}
             .dump()
      << "\n";
  out.flush();
  ClassifierRun run = train_classifier(f.train, f.arch, manifest, train, val, teacher, [&err](const EpochRecord& r) {
    err << "[train-clf] epoch " << r.epoch << " loss " << r.loss << " bce " << r.bce.value_or(0.0) << " kd "
        << r.kd.value_or(0.0);
    if (r.val_metric) err << " val_eer " << *r.val_metric;
    err << "\n";
  });
  run.log.header["manifest_hash"] = hash_file(f.data);
  const double final_loss = run.log.epochs.empty() ? 0.0 : run.log.epochs.back().loss;
  run.model.save(f.out, {{"epochs_trained", run.log.epochs.size()},
                         {"final_loss", final_loss},
                         {"selection", "best_val_eer"},
                         {"best_epoch", run.log.best_epoch ? json(*run.log.best_epoch) : json(nullptr)},
                         {"teacher_encoder_hash", teacher.encoder_hash()}});
  run.log.save(default_log_path(f.out, f.log));
  out << f.out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalFlags& f, int workers, std::ostream& out) {
  const Split split = parse_split_flag(f.split);
  const MorphClassifier model = MorphClassifier::load(f.model);
  const Manifest manifest = load_manifest(f.data);
  EvalReport report = evaluate(model, manifest, filter_records(manifest.records, split), workers);
  report.manifest_hash = hash_file(f.data);
  report.save(f.out);
  out << summary_table(report);
  out << f.out << "\n";
  return kExitOk;
}

int cmd_score(const ScoreFlags& f, std::ostream& out) {
  const MorphClassifier model = MorphClassifier::load(f.model);
  const ImageTensor image = load_image(f.image, model.config().side, model.config().channels);
  const ScoreTriple s = model.predict(image);
  out << "id_1: " << s.id_1 << "\n";
  out << "id_2: " << s.id_2 << "\n";
  out << "bonafide_score: " << s.bonafide_score << "\n";
  if (f.threshold) {
    out << "verdict: " << (s.bonafide_score >= *f.threshold ? "bonafide" : "attack") << " (threshold "
        << *f.threshold << ")\n";
  }
  return kExitOk;
}

int cmd_report(const ReportFlags& f, std::ostream& out) {
  const EvalReport report = EvalReport::load(f.input);
  const std::filesystem::path svg = f.svg.empty() ? std::filesystem::path(f.input).replace_extension(".det.svg")
                                                  : std::filesystem::path(f.svg);
  {
    std::ofstream file(svg, std::ios::trunc);
    if (!file) throw IoError("cannot write '" + svg.string() + "'");
    file << det_svg(report);
  }
  const std::string table = summary_table(report, f.label);
  if (!f.table.empty()) {
    std::ofstream file(f.table, std::ios::trunc);
    if (!file) throw IoError("cannot write '" + f.table + "'");
    file << table;
  }
  out << table;
  out << svg.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Morphing attack detection with identity distillation"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads for batched inference")->check(CLI::PositiveNumber);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic bonafide/morph dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n-identities", synth.gen.n_identities, "Number of synthetic identities");
  s->add_option("--images-per-identity", synth.gen.images_per_identity, "Bonafide images per identity");
  s->add_option("--n-morphs", synth.gen.n_morphs, "Number of morph attacks");
  s->add_option("--alpha", synth.gen.alpha, "Blend weight of the first source");
  s->add_option("--side", synth.gen.side, "Image side in pixels");
  s->add_option("--train-fraction", synth.gen.train_fraction, "Fraction of identities in the train split");
  s->add_option("--val-fraction", synth.gen.val_fraction, "Fraction of identities in the val split");
  synth.seed_opt = s->add_option("--seed", synth.seed, "Random seed (falls back to IDISTILL_SEED)");

  TrainAeFlags ae;
  auto* a = app.add_subcommand("train-ae", "Train the autoencoder teacher on bonafide train images");
  a->add_option("--data", ae.data, "Manifest (JSON Lines)")->required();
  a->add_option("--out", ae.out, "Checkpoint path")->required();
  a->add_option("--log", ae.log, "Training log path (default: <out>.log.json)");
  a->add_option("--epochs", ae.train.epochs, "Training epochs");
  a->add_option("--lr", ae.train.learning_rate, "Adam learning rate");
  a->add_option("--batch-size", ae.train.batch_size, "Batch size");
  a->add_option("--side", ae.arch.side, "Input side");
  a->add_option("--channels", ae.arch.channels, "Input channels (1 or 3)");
  a->add_option("--widths", ae.arch.widths, "Encoder stage widths")->delimiter(',');
  a->add_option("--reduction", ae.reduction, "Reconstruction loss reduction (mean|sum)");
  a->add_flag("--hflip", ae.train.horizontal_flip, "Random horizontal flips");
  a->add_flag("--deterministic", ae.train.deterministic, "Omit wall-clock times from the log");
  ae.seed_opt = a->add_option("--seed", ae.seed, "Random seed (falls back to IDISTILL_SEED)");

  TrainClfFlags clf;
  auto* c = app.add_subcommand("train-clf", "Train the morphing classifier against a frozen teacher");
  c->add_option("--data", clf.data, "Manifest (JSON Lines)")->required();
  c->add_option("--ae", clf.ae, "Teacher autoencoder checkpoint")->required();
  c->add_option("--out", clf.out, "Checkpoint path")->required();
  c->add_option("--log", clf.log, "Training log path (default: <out>.log.json)");
  c->add_option("--epochs", clf.train.epochs, "Maximum training epochs");
  c->add_option("--lr", clf.train.learning_rate, "Adam learning rate");
  c->add_option("--batch-size", clf.train.batch_size, "Batch size");
  c->add_option("--patience", clf.train.patience, "Early-stopping patience in epochs");
  c->add_option("--kd-weight", clf.train.kd_weight, "Weight of the distillation term");
  c->add_option("--side", clf.arch.side, "Input side");
  c->add_option("--channels", clf.arch.channels, "Input channels (1 or 3)");
  c->add_option("--stem-width", clf.arch.stem_width, "Backbone stem width");
  c->add_option("--widths", clf.arch.widths, "Residual stage widths")->delimiter(',');
  c->add_option("--blocks-per-stage", clf.arch.blocks_per_stage, "Residual blocks per stage");
  c->add_flag("--resnet18", clf.resnet18, "Use the full ResNet-18 stage layout (64..512, 2 blocks)");
  c->add_flag("--cache-teacher", clf.train.cache_teacher_codes, "Precompute teacher codes once");
  c->add_flag("--hflip", clf.train.horizontal_flip, "Random horizontal flips");
  c->add_flag("--deterministic", clf.train.deterministic, "Omit wall-clock times from the log");
  clf.seed_opt = c->add_option("--seed", clf.seed, "Random seed (falls back to IDISTILL_SEED)");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "Evaluate a classifier on one manifest split");
  e->add_option("--data", ev.data, "Manifest (JSON Lines)")->required();
  e->add_option("--model", ev.model, "Classifier checkpoint")->required();
  e->add_option("--out", ev.out, "Report JSON path")->required();
  e->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));

  ScoreFlags sc;
  auto* o = app.add_subcommand("score", "Score one image and show both identity scores");
  o->add_option("--image", sc.image, "PNG image")->required();
  o->add_option("--model", sc.model, "Classifier checkpoint")->required();
  o->add_option("--threshold", sc.threshold, "Operating threshold on the bonafide score");

  ReportFlags rp;
  auto* r = app.add_subcommand("report", "Render a DET curve SVG and a summary table");
  r->add_option("--input", rp.input, "EvalReport JSON")->required();
  r->add_option("--svg", rp.svg, "SVG output path (default: <input>.det.svg)");
  r->add_option("--table", rp.table, "Also write the summary table to this file");
  r->add_option("--label", rp.label, "Row label in the summary table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kExitValidation;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*a) return cmd_train_ae(ae, out, err);
    if (*c) return cmd_train_clf(clf, out, err);
    if (*e) return cmd_eval(ev, workers, out);
    if (*o) return cmd_score(sc, out);
    if (*r) return cmd_report(rp, out);
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace idistill::cli
