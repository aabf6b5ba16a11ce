#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>

#include "idistill/core.hpp"

namespace idistill {

using LatentVector = Eigen::VectorXd;

/// Strict mode rejects near-zero vectors; training mode adds a small epsilon
/// to the denominator instead so gradients stay finite.
enum class CosineMode { kStrict, kTraining };

inline constexpr double kCosineZeroNorm = 1e-12;
inline constexpr double kCosineTrainingEps = 1e-8;
inline constexpr double kBceClamp = 1e-7;

struct CosineResult {
  double value = 0.0;
  LatentVector grad_a;  // d value / d a
  LatentVector grad_b;  // d value / d b
};

CosineResult cosine_similarity_grad(const LatentVector& a, const LatentVector& b,
                                    CosineMode mode = CosineMode::kStrict);
double cosine_similarity(const LatentVector& a, const LatentVector& b,
                         CosineMode mode = CosineMode::kStrict);

/// Binary cross-entropy on the fused bonafide score, y_hat clamped into
/// [1e-7, 1 - 1e-7]. The derivative is zero where the clamp is active.
double bce_loss(double y, double y_hat);
double bce_loss_grad(double y, double y_hat);

/// Per-sample bundle of student outputs and teacher codes.
struct KdContext {
  Label label = Label::kBonafide;
  std::optional<LatentVector> u;    // teacher code of a bonafide image
  std::optional<LatentVector> u_a;  // teacher codes of a morph's two sources
  std::optional<LatentVector> u_b;
  LatentVector v1;
  LatentVector v2;
  double id1 = 0.5;
  double id2 = 0.5;
};

/// Which case of the knowledge-distillation term produced a value.
enum class KdBranch { kFirstVector, kSecondVector, kAttack };

/// Partial derivatives of a loss with respect to every KdContext input (teacher
/// gradients are reported for checking; training never applies them).
struct KdGradient {
  LatentVector v1, v2;
  double id1 = 0.0;
  double id2 = 0.0;
  LatentVector u, u_a, u_b;  // empty when the code is absent
};

struct KdResult {
  double value = 0.0;
  KdBranch branch = KdBranch::kAttack;
  KdGradient grad;
};

/// Bonafide term: pick the student vector more similar to u (ties go to v1),
/// pull its identity score to 1, the other to 0, and maximize the similarity.
KdResult kd_bonafide(const KdContext& ctx, CosineMode mode = CosineMode::kStrict);
/// Attack term: squared gap between the teacher angle S(u_a,u_b) and the
/// student angle S(v1,v2).
KdResult kd_attack(const KdContext& ctx, CosineMode mode = CosineMode::kStrict);
/// Label gated: y * kd_bonafide + (1 - y) * kd_attack, evaluating only the
/// active branch.
KdResult kd_loss(const KdContext& ctx, CosineMode mode = CosineMode::kStrict);

/// Batch reduction: arithmetic mean of the per-sample kd_loss values.
double mean_kd_loss(std::span<const KdContext> batch, CosineMode mode = CosineMode::kStrict);

struct JointResult {
  double value = 0.0;
  double bce = 0.0;
  double kd = 0.0;
  KdBranch branch = KdBranch::kAttack;
  KdGradient grad;        // d value / d ctx inputs
  double grad_y_hat = 0.0;
};

/// bce(y, y_hat) + kd_weight * kd_loss(ctx). kd_weight defaults to the plain
/// unweighted sum.
JointResult joint_loss(const KdContext& ctx, double y_hat, double kd_weight = 1.0,
                       CosineMode mode = CosineMode::kStrict);

/// Throws ValidationError unless the context carries exactly the teacher codes
/// its label requires and all vector dimensions agree.
void validate_context(const KdContext& ctx);

}  // namespace idistill
