// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "idistill/autoencoder.hpp"
#include "idistill/classifier.hpp"
#include "idistill/losses.hpp"
#include "idistill/metrics.hpp"
#include "idistill/trainer.hpp"
#include "metric_oracle.hpp"
#include "test_util.hpp"

using namespace idistill;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("%s  criterion %d  %s: %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

LatentVector unit(int dim, int axis) {
  LatentVector v = LatentVector::Zero(dim);
  v[axis] = 1.0;
  return v;
}

// Unit vector at cosine c to e0, inside the (e0, e1) plane.
LatentVector at_cosine(int dim, double c) {
  LatentVector v = LatentVector::Zero(dim);
  v[0] = c;
  v[1] = std::sqrt(1.0 - c * c);
  return v;
}

double plain_cosine(const LatentVector& a, const LatentVector& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------- criterion 1

void loss_examples() {
  const auto t0 = Clock::now();
  constexpr int d = kLatentDim;
  constexpr double tol = 1e-9;
  const double eps = kBceClamp;
  const double ln2 = std::numbers::ln2;
  int total = 0, ok = 0;
  std::string misses;
  auto expect = [&](const char* name, double got, double want) {
    ++total;
    if (std::abs(got - want) < tol) {
      ++ok;
    } else {
      misses += std::string(" ") + name + fmt("=%.12g(want %.12g)", got, want);
    }
  };

  std::mt19937_64 rng(11);
  const LatentVector a = testing::random_vector(rng);
  expect("cos(a,a)", cosine_similarity(a, a), 1.0);
  expect("cos(e0,e1)", cosine_similarity(unit(d, 0), unit(d, 1)), 0.0);
  expect("cos(a,-a)", cosine_similarity(a, -a), -1.0);

  // "~0" under the 1e-7 clamp is exactly -ln(1 - 1e-7).
  const double perfect_bce = -std::log(1.0 - eps);
  expect("bce(1,1-eps)", bce_loss(1.0, 1.0 - eps), perfect_bce);
  expect("bce(1,0.5)", bce_loss(1.0, 0.5), ln2);
  expect("bce(0,0.5)", bce_loss(0.0, 0.5), ln2);

  KdContext bona;
  bona.label = Label::kBonafide;
  bona.u = unit(d, 0);
  bona.v1 = unit(d, 0);
  bona.v2 = unit(d, 1);
  bona.id1 = 1.0;
  bona.id2 = 0.0;
  expect("kd1 minimum", kd_bonafide(bona).value, -1.0);

  KdContext half = bona;
  half.v1 = unit(d, 1);
  half.v2 = -unit(d, 0);
  half.id1 = 0.5;
  half.id2 = 0.5;
  const KdResult half_r = kd_bonafide(half);
  expect("kd1 half", half_r.value, 0.5);
  ++total;
  if (half_r.branch == KdBranch::kFirstVector) ++ok; else misses += " kd1-half-branch";

  KdContext r = bona;
  r.u = testing::random_vector(rng);
  r.v1 = testing::random_vector(rng);
  r.v2 = testing::random_vector(rng);
  r.id1 = 0.3;
  r.id2 = 0.8;
  KdContext swapped = r;
  std::swap(swapped.v1, swapped.v2);
  std::swap(swapped.id1, swapped.id2);
  expect("kd1 swap", kd_bonafide(swapped).value, kd_bonafide(r).value);

  KdContext att;
  att.label = Label::kAttack;
  att.u_a = unit(d, 0);
  att.u_b = at_cosine(d, 0.4);
  att.v1 = 2.0 * unit(d, 0);
  att.v2 = 3.0 * at_cosine(d, 0.4);
  expect("kd2 matched", kd_attack(att).value, 0.0);
  att.u_b = unit(d, 0);
  att.v2 = -unit(d, 0);
  expect("kd2 extreme", kd_attack(att).value, 4.0);
  att.u_b = at_cosine(d, 0.3);
  att.v2 = at_cosine(d, 0.8);
  expect("kd2 0.3/0.8", kd_attack(att).value, 0.25);

  expect("kd gate y=1", kd_loss(r).value, kd_bonafide(r).value);
  expect("kd gate y=0", kd_loss(att).value, kd_attack(att).value);

  std::vector<KdContext> batch = {r, att, bona, half};
  expect("kd batch mean", mean_kd_loss(batch),
         (kd_loss(r).value + kd_loss(att).value + kd_loss(bona).value + kd_loss(half).value) / 4.0);

  // "~ -1" is 0 + (-1) with the clamped BCE of a perfect prediction.
  expect("joint perfect", joint_loss(bona, 1.0).value, -1.0 + perfect_bce);
  att.u_b = at_cosine(d, 0.4);
  att.v2 = at_cosine(d, 0.4);
  expect("joint ln2", joint_loss(att, 0.5).value, ln2);

  const double secs = seconds_since(t0);
  verdict(1, "loss unit suite", ok == total && secs < 1.0,
          fmt("%.0f/%.0f examples within 1e-9, ", ok, total) + fmt("%.4f s (limit 1 s)", secs) + misses);
}

// ---------------------------------------------------------------- criterion 2

constexpr double kStep = 1e-5;

// Norm-wise relative error between analytic and central-difference gradients.
double rel_error(const std::vector<double>& an, const std::vector<double>& fd) {
  double diff = 0, na = 0, nf = 0;
  for (std::size_t i = 0; i < an.size(); ++i) {
    diff += (an[i] - fd[i]) * (an[i] - fd[i]);
    na += an[i] * an[i];
    nf += fd[i] * fd[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
  return std::sqrt(diff) / scale;
}

// Central differences of f over a flat parameter vector.
std::vector<double> central(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kStep;
    const double up = f(x);
    x[i] = keep - kStep;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * kStep);
  }
  return g;
}

void append(std::vector<double>& out, const LatentVector& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

LatentVector slice(const std::vector<double>& x, std::size_t& at, int dim) {
  LatentVector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = x[at++];
  return v;
}

// Flat layout: v1, v2, id1, id2, then whichever teacher codes the label carries.
std::vector<double> pack(const KdContext& c) {
  std::vector<double> x;
  append(x, c.v1);
  append(x, c.v2);
  x.push_back(c.id1);
  x.push_back(c.id2);
  if (c.u) append(x, *c.u);
  if (c.u_a) append(x, *c.u_a);
  if (c.u_b) append(x, *c.u_b);
  return x;
}

KdContext unpack(const KdContext& like, const std::vector<double>& x) {
  const int d = static_cast<int>(like.v1.size());
  KdContext c = like;
  std::size_t at = 0;
  c.v1 = slice(x, at, d);
  c.v2 = slice(x, at, d);
  c.id1 = x[at++];
  c.id2 = x[at++];
  if (c.u) c.u = slice(x, at, d);
  if (c.u_a) c.u_a = slice(x, at, d);
  if (c.u_b) c.u_b = slice(x, at, d);
  return c;
}

std::vector<double> pack(const KdContext& like, const KdGradient& g) {
  std::vector<double> x;
  append(x, g.v1);
  append(x, g.v2);
  x.push_back(g.id1);
  x.push_back(g.id2);
  if (like.u) append(x, g.u);
  if (like.u_a) append(x, g.u_a);
  if (like.u_b) append(x, g.u_b);
  return x;
}

KdContext random_context(std::mt19937_64& rng, Label label, int dim) {
  std::uniform_real_distribution<double> id(0.02, 0.98);
  KdContext c;
  c.label = label;
  c.v1 = testing::random_vector(rng, dim);
  c.v2 = testing::random_vector(rng, dim);
  c.id1 = id(rng);
  c.id2 = id(rng);
  if (label == Label::kBonafide) {
    c.u = testing::random_vector(rng, dim);
  } else {
    c.u_a = testing::random_vector(rng, dim);
    c.u_b = testing::random_vector(rng, dim);
  }
  return c;
}

// Bonafide context whose two similarities to u are clearly apart, so the
// case split is not crossed by a 1e-5 step.
KdContext separated_bonafide(std::mt19937_64& rng, int dim) {
  for (;;) {
    KdContext c = random_context(rng, Label::kBonafide, dim);
    if (std::abs(plain_cosine(c.v1, *c.u) - plain_cosine(c.v2, *c.u)) > 1e-3) return c;
  }
}

void gradient_check() {
  const auto t0 = Clock::now();
  constexpr int seeds = 100;
  constexpr int d = kLatentDim;
  constexpr double limit = 1e-4;
  struct Worst {
    const char* name;
    double err = 0;
    int fails = 0;
  };
  std::vector<Worst> worst = {{"L_auto"}, {"L_BCE"}, {"L_KD1"}, {"L_KD2"}, {"joint"}, {"joint->v1,v2,W"}};
  auto record = [&](int k, double err) {
    worst[k].err = std::max(worst[k].err, err);
    if (!(err < limit)) ++worst[k].fails;
  };

  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // L_auto over the reconstruction, both reductions.
    for (Reduction red : {Reduction::kMean, Reduction::kSum}) {
      std::vector<double> orig(192), recon(192);
      for (auto& v : orig) v = u01(rng);
      for (auto& v : recon) v = u01(rng);
      const auto an = reconstruction_loss_grad<double>(orig, recon, red);
      const auto fd = central([&](const std::vector<double>& x) { return reconstruction_loss<double>(orig, x, red); }, recon);
      record(0, rel_error(an, fd));
    }

    // L_BCE over y_hat away from the clamp.
    for (double y : {0.0, 1.0}) {
      const double yh = 0.02 + 0.96 * u01(rng);
      const auto fd = central([&](const std::vector<double>& x) { return bce_loss(y, x[0]); }, {yh});
      record(1, rel_error({bce_loss_grad(y, yh)}, fd));
    }

    // L_KD1 and L_KD2 over every context input.
    const KdContext b = separated_bonafide(rng, d);
    {
      const auto fd = central([&](const std::vector<double>& x) { return kd_bonafide(unpack(b, x)).value; }, pack(b));
      record(2, rel_error(pack(b, kd_bonafide(b).grad), fd));
    }
    const KdContext a = random_context(rng, Label::kAttack, d);
    {
      const auto fd = central([&](const std::vector<double>& x) { return kd_attack(unpack(a, x)).value; }, pack(a));
      record(3, rel_error(pack(a, kd_attack(a).grad), fd));
    }

    // Joint loss over the context plus y_hat.
    for (const KdContext* c : {&b, &a}) {
      const double yh = 0.02 + 0.96 * u01(rng);
      std::vector<double> x0 = pack(*c);
      x0.push_back(yh);
      const auto fd = central(
          [&](const std::vector<double>& x) {
            std::vector<double> head(x.begin(), x.end() - 1);
            return joint_loss(unpack(*c, head), x.back()).value;
          },
          x0);
      const JointResult jr = joint_loss(*c, yh);
      std::vector<double> an = pack(*c, jr.grad);
      an.push_back(jr.grad_y_hat);
      record(4, rel_error(an, fd));
    }

    // Joint loss chained through id = sigmoid(W.v) and y_hat = 1 - id1*id2.
    for (Label label : {Label::kBonafide, Label::kAttack}) {
      TeacherCodes codes;
      LatentVector v1, v2;
      for (;;) {
        v1 = 0.1 * testing::random_vector(rng, d);
        v2 = 0.1 * testing::random_vector(rng, d);
        if (label == Label::kAttack) {
          codes.u_a = testing::random_vector(rng, d);
          codes.u_b = testing::random_vector(rng, d);
          break;
        }
        codes.u = testing::random_vector(rng, d);
        if (std::abs(plain_cosine(v1, *codes.u) - plain_cosine(v2, *codes.u)) > 1e-3) break;
      }
      const LatentVector w = 0.3 * testing::random_vector(rng, d);
      std::vector<double> x0;
      append(x0, v1);
      append(x0, v2);
      append(x0, w);
      const auto fd = central(
          [&](const std::vector<double>& x) {
            std::size_t at = 0;
            const LatentVector p1 = slice(x, at, d), p2 = slice(x, at, d), pw = slice(x, at, d);
            return sample_loss(label, codes, p1, p2, pw, 1.0, CosineMode::kStrict).value;
          },
          x0);
      const SampleLoss sl = sample_loss(label, codes, v1, v2, w, 1.0, CosineMode::kStrict);
      std::vector<double> an;
      append(an, sl.grad_v1);
      append(an, sl.grad_v2);
      append(an, sl.grad_w);
      record(5, rel_error(an, fd));
    }
  }

  const double secs = seconds_since(t0);
  bool pass = secs < 30.0;
  std::string detail = fmt("%.0f seeds, step 1e-5, max relative error:", seeds);
  for (const auto& w : worst) {
    pass = pass && w.fails == 0;
    detail += std::string(" ") + w.name + fmt("=%.2e", w.err);
    if (w.fails > 0) detail += fmt("(%.0f over)", w.fails);
  }
  detail += fmt("; %.2f s (limit 30 s)", secs);
  verdict(2, "gradient check", pass, detail);
}

// ---------------------------------------------------------------- criterion 3

void metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  int disagreements = 0;
  std::string first;
  for (int trial = 0; trial < 1000; ++trial) {
    ScoreSet s;
    const int size = std::uniform_int_distribution<int>(2, 12)(rng);
    const int n_bona = std::uniform_int_distribution<int>(1, size - 1)(rng);
    const bool grid = trial % 2 == 0;
    std::uniform_int_distribution<int> step(0, 20);
    std::uniform_real_distribution<double> real(0.0, 1.0);
    for (int i = 0; i < size; ++i) {
      const double v = grid ? 0.05 * step(rng) : real(rng);
      (i < n_bona ? s.bonafide_scores : s.attack_scores).push_back(v);
    }
    const double targets[] = {0.01, 0.2, 0.5, 0.001 + 0.998 * real(rng)};
    bool agree = std::abs(compute_eer(s, EerMode::kDiscrete).eer - oracle::discrete_eer(s)) < 1e-12 &&
                 std::abs(compute_eer(s, EerMode::kInterpolated).eer - oracle::interpolated_eer(s)) < 1e-12;
    for (double t : targets) agree = agree && bpcer_at_apcer(s, t) == oracle::bpcer_at_apcer(s, t);
    if (!agree) {
      ++disagreements;
      if (first.empty()) first = fmt(" (first at trial %.0f)", trial);
    }
  }
  const double secs = seconds_since(t0);
  verdict(3, "metric oracle equivalence", disagreements == 0 && secs < 30.0,
          fmt("1000 score sets of size 2-12, %.0f disagreements, %.3f s (limit 30 s)", disagreements, secs) + first);
}

// ---------------------------------------------------------------- criterion 4

void fusion_and_gating() {
  const auto t0 = Clock::now();
  constexpr int n = 100000;
  constexpr int d = 32;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int fuse_bad = 0, gate_bad = 0;
  double worst = 0;
  for (int i = 0; i < n; ++i) {
    const double a = u01(rng), b = u01(rng);
    const double diff = std::abs(fuse(a, b) - (1.0 - a * b));
    worst = std::max(worst, diff);
    if (diff > 0.0) ++fuse_bad;

    const Label label = i % 2 == 0 ? Label::kBonafide : Label::kAttack;
    KdContext c = random_context(rng, label, d);
    if (i % 1000 == 7 && label == Label::kBonafide) c.v2 = c.v1;  // exact tie
    const KdResult got = kd_loss(c);
    bool ok;
    if (label == Label::kBonafide) {
      const double s1 = plain_cosine(c.v1, *c.u), s2 = plain_cosine(c.v2, *c.u);
      const bool first = s1 >= s2;
      const double want = first ? (1 - c.id1) * (1 - c.id1) + c.id2 * c.id2 - s1
                                : (1 - c.id2) * (1 - c.id2) + c.id1 * c.id1 - s2;
      ok = got.branch == (first ? KdBranch::kFirstVector : KdBranch::kSecondVector) &&
           std::abs(got.value - want) < 1e-12 && got.value == kd_bonafide(c).value;
    } else {
      const double gap = plain_cosine(*c.u_a, *c.u_b) - plain_cosine(c.v1, c.v2);
      ok = got.branch == KdBranch::kAttack && std::abs(got.value - gap * gap) < 1e-12 &&
           got.value == kd_attack(c).value;
    }
    if (!ok) ++gate_bad;
  }
  const double secs = seconds_since(t0);
  verdict(4, "fusion and gating identities", fuse_bad == 0 && gate_bad == 0 && secs < 10.0,
          fmt("1e5 pairs: %.0f fusion mismatches (max |diff| %.1e), ", fuse_bad, worst) +
              fmt("%.0f branch/value mismatches, %.2f s (limit 10 s)", gate_bad, secs));
}

// ---------------------------------------------------------------- pipeline

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "idistill");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct Desk {
  bool ok = false;
  std::string error;
  fs::path dir;
  double seconds = 0;
  double eer_untrained = 0, eer_trained = 0;
  int best_epoch = 0, epochs_run = 0;
};

fs::path manifest_of(const fs::path& dir) { return dir / "data" / "manifest.jsonl"; }

Desk desk_run(const fs::path& dir, int seed) {
  const auto t0 = Clock::now();
  Desk r;
  r.dir = dir;
  const std::string s = std::to_string(seed);
  const std::string data = manifest_of(dir).string();
  const std::string ae = (dir / "ae.ckpt").string();
  const std::string c0 = (dir / "untrained.ckpt").string();
  const std::string c1 = (dir / "trained.ckpt").string();
  const std::vector<std::vector<std::string>> steps = {
      {"synth", "--out", (dir / "data").string(), "--n-identities", "30", "--images-per-identity", "3", "--n-morphs",
       "40", "--seed", s},
      {"train-ae", "--data", data, "--out", ae, "--epochs", "50", "--seed", s, "--deterministic"},
      {"train-clf", "--data", data, "--ae", ae, "--out", c0, "--epochs", "0", "--seed", s, "--deterministic"},
      {"train-clf", "--data", data, "--ae", ae, "--out", c1, "--epochs", "100", "--seed", s, "--deterministic"},
      {"eval", "--data", data, "--model", c0, "--out", (dir / "untrained.eval.json").string()},
      {"eval", "--data", data, "--model", c1, "--out", (dir / "trained.eval.json").string()},
  };
  for (const auto& step : steps) {
    const CliResult res = run_cli(step);
    if (res.code != 0) {
      r.error = step.front() + " exited " + std::to_string(res.code) + ": " + res.err;
      return r;
    }
  }
  r.eer_untrained = EvalReport::load(dir / "untrained.eval.json").eer;
  r.eer_trained = EvalReport::load(dir / "trained.eval.json").eer;
  const TrainLog log = TrainLog::load(c1 + ".log.json");
  r.best_epoch = log.best_epoch.value_or(0);
  r.epochs_run = static_cast<int>(log.epochs.size());
  r.seconds = seconds_since(t0);
  r.ok = true;
  return r;
}

// Test-split bonafide samples with exactly one identity score above 0.5.
std::pair<int, int> one_identity_count(const fs::path& model_path, const Manifest& m) {
  const MorphClassifier model = MorphClassifier::load(model_path);
  const auto& cfg = model.config();
  int hits = 0, total = 0;
  for (const auto& rec : filter_records(m.records, Split::kTest, Label::kBonafide)) {
    const ScoreTriple t = model.predict(load_image(m.resolve(rec.image_path), cfg.side, cfg.channels));
    hits += ((t.id_1 > 0.5) != (t.id_2 > 0.5)) ? 1 : 0;
    ++total;
  }
  return {hits, total};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string sa((std::istreambuf_iterator<char>(fa)), {});
  const std::string sb((std::istreambuf_iterator<char>(fb)), {});
  return sa == sb;
}

void frozen_teacher(const Desk& run, int seed) {
  const auto t0 = Clock::now();
  const Manifest m = load_manifest(manifest_of(run.dir));
  const AutoencoderModel teacher = AutoencoderModel::load(run.dir / "ae.ckpt");
  const std::string before = teacher.encoder_hash();
  TrainConfig cfg = TrainConfig::classifier_defaults();
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.deterministic = true;
  const ClassifierRun clf = train_classifier(cfg, ClassifierConfig{}, m, filter_records(m.records, Split::kTrain),
                                             filter_records(m.records, Split::kVal), teacher);
  const std::string after = teacher.encoder_hash();
  const std::string on_disk = AutoencoderModel::load(run.dir / "ae.ckpt").encoder_hash();
  const std::string logged = clf.log.header.value("teacher_encoder_hash", std::string());
  const bool pass = before == after && after == on_disk && logged == before;
  verdict(5, "frozen teacher", pass,
          "encoder hash " + before + " before, " + after + " after " + std::to_string(clf.log.epochs.size()) +
              " classifier epochs (checkpoint " + on_disk + ", log " + logged + ")" +
              fmt(", %.1f s", seconds_since(t0)));
}

}  // namespace

int main() {
  std::printf("acceptance run\n");
  loss_examples();
  gradient_check();
  metric_oracle();
  fusion_and_gating();

  const fs::path root = testing::scratch_dir("acceptance");
  const int seeds[] = {1, 2, 3};
  std::vector<Desk> runs;
  const auto desk_t0 = Clock::now();
  for (int seed : seeds) {
    runs.push_back(desk_run(root / ("seed" + std::to_string(seed)), seed));
    const Desk& r = runs.back();
    if (r.ok) {
      std::printf("      seed %d: untrained EER %.4f, trained EER %.4f (best epoch %d of %d), %.1f s\n", seed,
                  r.eer_untrained, r.eer_trained, r.best_epoch, r.epochs_run, r.seconds);
    } else {
      std::printf("      seed %d: pipeline failed: %s\n", seed, r.error.c_str());
    }
    std::fflush(stdout);
  }
  const double desk_secs = seconds_since(desk_t0);
  const bool all_ok = std::all_of(runs.begin(), runs.end(), [](const Desk& r) { return r.ok; });

  if (all_ok) {
    frozen_teacher(runs.front(), seeds[0]);
  } else {
    verdict(5, "frozen teacher", false, "pipeline for seed 1 did not complete");
  }

  if (all_ok) {
    double mt = 0, mu = 0;
    for (const auto& r : runs) {
      mt += r.eer_trained / 3.0;
      mu += r.eer_untrained / 3.0;
    }
    verdict(6, "desk-scale end to end", mt <= 0.25 && mt < mu && desk_secs < 900.0,
            fmt("mean held-out EER over 3 seeds: trained %.4f (limit 0.25), untrained %.4f", mt, mu) +
                fmt("; %.1f s (target 900 s)", desk_secs));
  } else {
    verdict(6, "desk-scale end to end", false, "a pipeline step failed");
  }

  if (all_ok) {
    int th = 0, tt = 0, uh = 0, ut = 0;
    for (const auto& r : runs) {
      const Manifest m = load_manifest(manifest_of(r.dir));
      const auto [a, b] = one_identity_count(r.dir / "trained.ckpt", m);
      const auto [c, d] = one_identity_count(r.dir / "untrained.ckpt", m);
      th += a;
      tt += b;
      uh += c;
      ut += d;
    }
    const double ft = static_cast<double>(th) / tt, fu = static_cast<double>(uh) / ut;
    verdict(7, "disentanglement", ft > fu,
            fmt("held-out bonafide with exactly one id > 0.5: trained %.4f, untrained %.4f", ft, fu) +
                fmt(" (%.0f samples over 3 seeds)", tt));
  } else {
    verdict(7, "disentanglement", false, "a pipeline step failed");
  }

  if (all_ok) {
    const Desk again = desk_run(root / "seed1_again", seeds[0]);
    bool same = again.ok;
    std::string which;
    for (const char* f : {"ae.ckpt.log.json", "untrained.ckpt.log.json", "trained.ckpt.log.json",
                          "untrained.eval.json", "trained.eval.json"}) {
      const bool eq = again.ok && same_bytes(runs.front().dir / f, again.dir / f);
      same = same && eq;
      which += std::string(" ") + f + (eq ? "=same" : "=DIFFERENT");
    }
    verdict(8, "reproducibility", same, "seed 1 rerun in determinism mode:" + which);
  } else {
    verdict(8, "reproducibility", false, "a pipeline step failed");
  }

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "SOME FAIL", failures);
  return failures == 0 ? 0 : 1;
}
