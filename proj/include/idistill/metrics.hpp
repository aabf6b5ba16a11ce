#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "idistill/core.hpp"

namespace idistill {

class MorphClassifier;

/// Fused bonafide scores split by ground truth. A sample is classified
/// bonafide when its score is >= the threshold (ties count as bonafide).
struct ScoreSet {
  std::vector<double> bonafide_scores;
  std::vector<double> attack_scores;
};

/// Fraction of attacks classified bonafide (score >= threshold).
double apcer(const ScoreSet& scores, double threshold);
/// Fraction of bonafide classified as attacks (score < threshold).
double bpcer(const ScoreSet& scores, double threshold);

enum class EerMode {
  kInterpolated,  // linear interpolation where APCER-BPCER changes sign between sweep points
  kDiscrete,      // plain argmin of |APCER - BPCER| over the sweep
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Candidate thresholds: every distinct score, plus one just above the
/// maximum (everything rejected). A threshold below every score gives the
/// same rates as the minimum score, so it needs no separate candidate.
std::vector<double> sweep_thresholds(const ScoreSet& scores);

EerResult compute_eer(const ScoreSet& scores, EerMode mode = EerMode::kInterpolated);

/// BPCER at the smallest sweep threshold whose APCER is <= target.
double bpcer_at_apcer(const ScoreSet& scores, double target_apcer);

/// (APCER, BPCER) at every sweep threshold, ordered by increasing APCER.
std::vector<std::pair<double, double>> det_curve(const ScoreSet& scores);

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::map<std::string, double> bpcer_at_apcer;  // keys "0.01", "0.20"
  std::vector<std::pair<double, double>> det;
  std::size_t n_bonafide = 0;
  std::size_t n_attack = 0;
  std::string model_hash;
  std::string manifest_hash;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
  bool operator==(const EvalReport&) const = default;
};

/// Rates, EER and DET samples from a ScoreSet (hash fields left empty).
EvalReport make_report(const ScoreSet& scores);

/// Scores every record with the classifier and builds the report. Both
/// classes must be present.
EvalReport evaluate(const MorphClassifier& model, const Manifest& manifest,
                    const std::vector<SampleRecord>& records, int workers = 1);

/// Collects scores per label without building a report.
ScoreSet score_records(const MorphClassifier& model, const Manifest& manifest,
                       const std::vector<SampleRecord>& records, int workers = 1);

}  // namespace idistill
