#include "idistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "idistill/classifier.hpp"

namespace idistill {

namespace {

void require_attacks(const ScoreSet& s) {
  if (s.attack_scores.empty()) throw ValidationError("APCER needs at least one attack score");
}

void require_bonafide(const ScoreSet& s) {
  if (s.bonafide_scores.empty()) throw ValidationError("BPCER needs at least one bonafide score");
}

// Sorted copies of both populations so every rate is a binary search.
struct SortedScores {
  std::vector<double> bonafide;
  std::vector<double> attack;

  explicit SortedScores(const ScoreSet& s) : bonafide(s.bonafide_scores), attack(s.attack_scores) {
    require_attacks(s);
    require_bonafide(s);
    std::sort(bonafide.begin(), bonafide.end());
    std::sort(attack.begin(), attack.end());
  }

  double apcer(double t) const {
    const auto below = std::lower_bound(attack.begin(), attack.end(), t) - attack.begin();
    return static_cast<double>(static_cast<std::ptrdiff_t>(attack.size()) - below) / static_cast<double>(attack.size());
  }
  double bpcer(double t) const {
    const auto below = std::lower_bound(bonafide.begin(), bonafide.end(), t) - bonafide.begin();
    return static_cast<double>(below) / static_cast<double>(bonafide.size());
  }
};

}  // namespace

double apcer(const ScoreSet& scores, double threshold) {
  require_attacks(scores);
  const auto accepted = std::count_if(scores.attack_scores.begin(), scores.attack_scores.end(),
                                      [threshold](double s) { return s >= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(scores.attack_scores.size());
}

double bpcer(const ScoreSet& scores, double threshold) {
  require_bonafide(scores);
  const auto rejected = std::count_if(scores.bonafide_scores.begin(), scores.bonafide_scores.end(),
                                      [threshold](double s) { return s < threshold; });
  return static_cast<double>(rejected) / static_cast<double>(scores.bonafide_scores.size());
}

std::vector<double> sweep_thresholds(const ScoreSet& scores) {
  std::vector<double> t(scores.bonafide_scores);
  t.insert(t.end(), scores.attack_scores.begin(), scores.attack_scores.end());
  if (t.empty()) throw ValidationError("cannot sweep thresholds over empty score sets");
  for (double s : t) {
    if (!std::isfinite(s)) throw ValidationError("scores must be finite");
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::nextafter(t.back(), std::numeric_limits<double>::infinity()));
  return t;
}

EerResult compute_eer(const ScoreSet& scores, EerMode mode) {
  const SortedScores sorted(scores);
  const std::vector<double> thresholds = sweep_thresholds(scores);
  std::vector<double> a(thresholds.size()), b(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    a[k] = sorted.apcer(thresholds[k]);
    b[k] = sorted.bpcer(thresholds[k]);
  }
  // First candidate with the smallest |APCER - BPCER|.
  std::size_t best = 0;
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    if (std::abs(a[k] - b[k]) < std::abs(a[best] - b[best])) best = k;
  }
  EerResult r{(a[best] + b[best]) / 2.0, thresholds[best]};
  if (mode == EerMode::kDiscrete || a[best] == b[best]) return r;

  // APCER - BPCER is nonincreasing in the threshold, +1 at the lowest candidate
  // and -1 at the highest, so it changes sign exactly once.
  for (std::size_t k = 0; k + 1 < thresholds.size(); ++k) {
    const double d0 = a[k] - b[k];
    const double d1 = a[k + 1] - b[k + 1];
    if (d0 > 0.0 && d1 < 0.0) {
      const double f = d0 / (d0 - d1);
      r.eer = a[k] + f * (a[k + 1] - a[k]);
      return r;
    }
  }
  return r;
}

double bpcer_at_apcer(const ScoreSet& scores, double target_apcer) {
  if (!(target_apcer > 0.0 && target_apcer < 1.0)) throw ValidationError("target APCER must lie in (0,1)");
  const SortedScores sorted(scores);
  for (double t : sweep_thresholds(scores)) {
    if (sorted.apcer(t) <= target_apcer + 1e-12) return sorted.bpcer(t);
  }
  return 1.0;
}

std::vector<std::pair<double, double>> det_curve(const ScoreSet& scores) {
  const SortedScores sorted(scores);
  const std::vector<double> thresholds = sweep_thresholds(scores);
  std::vector<std::pair<double, double>> det;
  det.reserve(thresholds.size());
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    det.emplace_back(sorted.apcer(*it), sorted.bpcer(*it));
  }
  return det;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json det_json = nlohmann::json::array();
  for (const auto& [a, b] : det) det_json.push_back({a, b});
  nlohmann::json at = nlohmann::json::object();
  for (const auto& [k, v] : bpcer_at_apcer) at[k] = v;
  return nlohmann::json{{"eer", eer},
                        {"eer_threshold", eer_threshold},
                        {"bpcer_at_apcer", at},
                        {"det", det_json},
                        {"n_bonafide", n_bonafide},
                        {"n_attack", n_attack},
                        {"model_hash", model_hash},
                        {"manifest_hash", manifest_hash}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.eer = j.at("eer").get<double>();
  r.eer_threshold = j.at("eer_threshold").get<double>();
  for (const auto& [k, v] : j.at("bpcer_at_apcer").items()) r.bpcer_at_apcer[k] = v.get<double>();
  for (const auto& p : j.at("det")) r.det.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  r.n_bonafide = j.at("n_bonafide").get<std::size_t>();
  r.n_attack = j.at("n_attack").get<std::size_t>();
  r.model_hash = j.value("model_hash", std::string());
  r.manifest_hash = j.value("manifest_hash", std::string());
  return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << to_json().dump(2) << "\n";
  if (!out) throw IoError("failed writing report '" + path.string() + "'");
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed report '" + path.string() + "': " + e.what());
  }
}

EvalReport make_report(const ScoreSet& scores) {
  EvalReport r;
  const EerResult eer = compute_eer(scores);
  r.eer = eer.eer;
  r.eer_threshold = eer.threshold;
  r.bpcer_at_apcer["0.01"] = bpcer_at_apcer(scores, 0.01);
  r.bpcer_at_apcer["0.20"] = bpcer_at_apcer(scores, 0.20);
  r.det = det_curve(scores);
  r.n_bonafide = scores.bonafide_scores.size();
  r.n_attack = scores.attack_scores.size();
  return r;
}

ScoreSet score_records(const MorphClassifier& model, const Manifest& manifest,
                       const std::vector<SampleRecord>& records, int workers) {
  const auto& cfg = model.config();
  std::vector<double> scores(records.size());
  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (records.size() + kChunk - 1) / kChunk;
  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(records.size(), begin + kChunk);
    std::vector<ImageTensor> images;
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(load_image(manifest.resolve(records[i].image_path), cfg.side, cfg.channels));
    }
    const auto triples = model.predict_batch(images);
    for (std::size_t i = begin; i < end; ++i) scores[i] = triples[i - begin].bonafide_score;
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(chunks, 1));
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    // Each chunk writes a disjoint slice, so results do not depend on scheduling.
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t c = t; c < chunks; c += n_threads) run_chunk(c);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ScoreSet set;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (records[i].label == Label::kBonafide ? set.bonafide_scores : set.attack_scores).push_back(scores[i]);
  }
  return set;
}

EvalReport evaluate(const MorphClassifier& model, const Manifest& manifest, const std::vector<SampleRecord>& records,
                    int workers) {
  const bool has_bonafide = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::kBonafide; });
  const bool has_attack = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.label == Label::kAttack; });
  if (!has_bonafide || !has_attack) throw ValidationError("evaluation needs both bonafide and attack samples");
  EvalReport report = make_report(score_records(model, manifest, records, workers));
  report.model_hash = model.parameter_hash();
  return report;
}

}  // namespace idistill
