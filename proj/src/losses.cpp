#include "idistill/losses.hpp"

#include <algorithm>
#include <cmath>

namespace idistill {

CosineResult cosine_similarity_grad(const LatentVector& a, const LatentVector& b, CosineMode mode) {
  if (a.size() != b.size()) throw ValidationError("cosine similarity of vectors with different dims");
  const double na = a.norm();
  const double nb = b.norm();
  const double dot = a.dot(b);
  CosineResult r;
  if (mode == CosineMode::kStrict) {
    if (na < kCosineZeroNorm || nb < kCosineZeroNorm) {
      throw ValidationError("cosine similarity of a (near) zero vector");
    }
    r.value = dot / (na * nb);
    r.grad_a = b / (na * nb) - r.value * a / (na * na);
    r.grad_b = a / (na * nb) - r.value * b / (nb * nb);
    return r;
  }
  const double denom = na * nb + kCosineTrainingEps;
  r.value = dot / denom;
  // d denom / d a = nb * a / na (zero at a = 0).
  r.grad_a = b / denom;
  r.grad_b = a / denom;
  if (na > 0.0) r.grad_a -= (dot / (denom * denom)) * (nb / na) * a;
  if (nb > 0.0) r.grad_b -= (dot / (denom * denom)) * (na / nb) * b;
  return r;
}

double cosine_similarity(const LatentVector& a, const LatentVector& b, CosineMode mode) {
  return cosine_similarity_grad(a, b, mode).value;
}

double bce_loss(double y, double y_hat) {
  const double p = std::clamp(y_hat, kBceClamp, 1.0 - kBceClamp);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double bce_loss_grad(double y, double y_hat) {
  if (y_hat < kBceClamp || y_hat > 1.0 - kBceClamp) return 0.0;
  return -y / y_hat + (1.0 - y) / (1.0 - y_hat);
}

void validate_context(const KdContext& ctx) {
  const auto dim = ctx.v1.size();
  if (dim == 0 || ctx.v2.size() != dim) throw ValidationError("student vectors must be non-empty and equal-sized");
  auto check = [dim](const std::optional<LatentVector>& code, const char* name) {
    if (code && code->size() != dim) {
      throw ValidationError(std::string("teacher code ") + name + " has the wrong dimension");
    }
  };
  check(ctx.u, "u");
  check(ctx.u_a, "u_a");
  check(ctx.u_b, "u_b");
  if (ctx.label == Label::kBonafide) {
    if (!ctx.u) throw ValidationError("bonafide sample requires teacher code u");
    if (ctx.u_a || ctx.u_b) throw ValidationError("bonafide sample must not carry source codes");
  } else {
    if (!ctx.u_a || !ctx.u_b) throw ValidationError("attack sample requires both source teacher codes");
    if (ctx.u) throw ValidationError("attack sample must not carry a bonafide teacher code");
  }
}

namespace {

KdGradient zero_gradient(const KdContext& ctx) {
  KdGradient g;
  g.v1 = LatentVector::Zero(ctx.v1.size());
  g.v2 = LatentVector::Zero(ctx.v2.size());
  if (ctx.u) g.u = LatentVector::Zero(ctx.u->size());
  if (ctx.u_a) g.u_a = LatentVector::Zero(ctx.u_a->size());
  if (ctx.u_b) g.u_b = LatentVector::Zero(ctx.u_b->size());
  return g;
}

}  // namespace

KdResult kd_bonafide(const KdContext& ctx, CosineMode mode) {
  if (!ctx.u) throw ValidationError("bonafide distillation term requires teacher code u");
  const CosineResult s1 = cosine_similarity_grad(ctx.v1, *ctx.u, mode);
  const CosineResult s2 = cosine_similarity_grad(ctx.v2, *ctx.u, mode);
  KdResult r;
  r.grad = zero_gradient(ctx);
  // Ties go to the first vector.
  if (s1.value >= s2.value) {
    r.branch = KdBranch::kFirstVector;
    r.value = (1.0 - ctx.id1) * (1.0 - ctx.id1) + ctx.id2 * ctx.id2 - s1.value;
    r.grad.id1 = -2.0 * (1.0 - ctx.id1);
    r.grad.id2 = 2.0 * ctx.id2;
    r.grad.v1 = -s1.grad_a;
    r.grad.u = -s1.grad_b;
  } else {
    r.branch = KdBranch::kSecondVector;
    r.value = (1.0 - ctx.id2) * (1.0 - ctx.id2) + ctx.id1 * ctx.id1 - s2.value;
    r.grad.id2 = -2.0 * (1.0 - ctx.id2);
    r.grad.id1 = 2.0 * ctx.id1;
    r.grad.v2 = -s2.grad_a;
    r.grad.u = -s2.grad_b;
  }
  return r;
}

KdResult kd_attack(const KdContext& ctx, CosineMode mode) {
  if (!ctx.u_a || !ctx.u_b) throw ValidationError("attack distillation term requires both source codes");
  const CosineResult teacher = cosine_similarity_grad(*ctx.u_a, *ctx.u_b, mode);
  const CosineResult student = cosine_similarity_grad(ctx.v1, ctx.v2, mode);
  const double gap = teacher.value - student.value;
  KdResult r;
  r.branch = KdBranch::kAttack;
  r.value = gap * gap;
  r.grad = zero_gradient(ctx);
  r.grad.u_a = 2.0 * gap * teacher.grad_a;
  r.grad.u_b = 2.0 * gap * teacher.grad_b;
  r.grad.v1 = -2.0 * gap * student.grad_a;
  r.grad.v2 = -2.0 * gap * student.grad_b;
  return r;
}

KdResult kd_loss(const KdContext& ctx, CosineMode mode) {
  validate_context(ctx);
  return ctx.label == Label::kBonafide ? kd_bonafide(ctx, mode) : kd_attack(ctx, mode);
}

double mean_kd_loss(std::span<const KdContext> batch, CosineMode mode) {
  if (batch.empty()) throw ValidationError("kd loss needs a non-empty batch");
  double sum = 0.0;
  for (const auto& ctx : batch) sum += kd_loss(ctx, mode).value;
  return sum / static_cast<double>(batch.size());
}

JointResult joint_loss(const KdContext& ctx, double y_hat, double kd_weight, CosineMode mode) {
  const double y = label_value(ctx.label);
  const KdResult kd = kd_loss(ctx, mode);
  JointResult r;
  r.bce = bce_loss(y, y_hat);
  r.kd = kd.value;
  r.value = r.bce + kd_weight * kd.value;
  r.branch = kd.branch;
  r.grad_y_hat = bce_loss_grad(y, y_hat);
  r.grad = kd.grad;
  r.grad.v1 *= kd_weight;
  r.grad.v2 *= kd_weight;
  r.grad.id1 *= kd_weight;
  r.grad.id2 *= kd_weight;
  r.grad.u *= kd_weight;
  r.grad.u_a *= kd_weight;
  r.grad.u_b *= kd_weight;
  return r;
}

}  // namespace idistill
