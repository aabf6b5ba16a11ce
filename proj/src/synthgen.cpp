#include "idistill/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <system_error>

namespace idistill {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

IdentityParams IdentityParams::sample(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&rng](float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); };
  IdentityParams p;
  // Passport-style backdrop: pale, nearly neutral.
  const float bg = u(0.7f, 0.9f);
  p.background = {bg + u(-0.05f, 0.05f), bg + u(-0.05f, 0.05f), bg + u(-0.05f, 0.05f)};
  p.background_gradient = u(-0.1f, 0.1f);
  p.face_cx = u(0.42f, 0.58f);
  p.face_cy = u(0.44f, 0.58f);
  p.face_ax = u(0.2f, 0.34f);
  p.face_ay = u(0.30f, 0.40f);
  const float tone = u(0.3f, 0.95f);
  p.skin = {tone, tone * u(0.7f, 0.85f), tone * u(0.55f, 0.75f)};
  const float h = u(0.02f, 0.6f);
  p.hair = {h, h * u(0.6f, 1.0f), h * u(0.4f, 0.9f)};
  p.hair_line = u(0.2f, 0.7f);
  p.eye_spacing = u(0.3f, 0.7f);
  p.eye_height = u(-0.15f, 0.1f);
  p.eye_size = u(0.025f, 0.05f);
  p.iris = {u(0.05f, 0.5f), u(0.05f, 0.5f), u(0.05f, 0.5f)};
  p.nose_length = u(0.08f, 0.2f);
  p.mouth_y = u(0.35f, 0.55f);
  p.mouth_width = u(0.25f, 0.5f);
  p.mouth_curve = u(-0.04f, 0.04f);
  p.lips = {u(0.5f, 0.85f), u(0.1f, 0.35f), u(0.1f, 0.35f)};
  p.jitter_scale = u(0.8f, 1.2f);
  return p;
}

namespace {

// Anti-aliased coverage of a shape given an approximate signed distance.
float coverage(float signed_distance, float edge) {
  return std::clamp(0.5f - signed_distance / edge, 0.0f, 1.0f);
}

float ellipse_distance(float x, float y, float cx, float cy, float ax, float ay) {
  const float dx = (x - cx) / ax;
  const float dy = (y - cy) / ay;
  return (std::sqrt(dx * dx + dy * dy) - 1.0f) * std::min(ax, ay);
}

void blend(Rgb& dst, const Rgb& src, float amount) {
  for (int c = 0; c < 3; ++c) dst[c] += amount * (src[c] - dst[c]);
}

}  // namespace

ImageTensor render_identity(const IdentityParams& params, std::uint64_t jitter_seed, int side) {
  if (side <= 0) throw ValidationError("render side must be positive");
  std::mt19937_64 rng(jitter_seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  const float js = params.jitter_scale;
  const float dx = 0.025f * js * gauss(rng);
  const float dy = 0.025f * js * gauss(rng);
  const float scale = 1.0f + 0.04f * js * gauss(rng);
  const float gain = 1.0f + 0.08f * js * gauss(rng);
  const Rgb backdrop_shift = {0.03f * gauss(rng), 0.03f * gauss(rng), 0.03f * gauss(rng)};

  const float cx = params.face_cx + dx;
  const float cy = params.face_cy + dy;
  const float ax = params.face_ax * scale;
  const float ay = params.face_ay * scale;
  const float edge = 1.5f / static_cast<float>(side);
  const float hair_y = cy - params.hair_line * ay;
  const float eye_y = cy - 0.15f * ay + params.eye_height * ay;
  const float eye_dx = params.eye_spacing * ax;
  const float eye_r = params.eye_size * scale;
  const float mouth_y = cy + params.mouth_y * ay;
  const float mouth_w = params.mouth_width * ax;
  const Rgb sclera = {0.95f, 0.95f, 0.92f};
  const Rgb nose = {params.skin[0] * 0.8f, params.skin[1] * 0.75f, params.skin[2] * 0.7f};

  ImageTensor img(side, side, 3);
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      const float x = (static_cast<float>(px) + 0.5f) / static_cast<float>(side);
      const float y = (static_cast<float>(py) + 0.5f) / static_cast<float>(side);
      Rgb color = params.background;
      for (int c = 0; c < 3; ++c) color[c] = (color[c] + backdrop_shift[c]) * (1.0f + params.background_gradient * (y - 0.5f));

      // Hair cap: a slightly larger ellipse, visible above the hair line.
      const float hair_cov = coverage(ellipse_distance(x, y, cx, cy - 0.02f, ax * 1.12f, ay * 1.08f), edge) *
                             coverage(y - hair_y, edge);
      blend(color, params.hair, hair_cov);
      const float face_cov = coverage(ellipse_distance(x, y, cx, cy, ax, ay), edge) * coverage(hair_y - y, edge);
      blend(color, params.skin, face_cov);

      for (float side_sign : {-1.0f, 1.0f}) {
        const float ex = cx + side_sign * eye_dx;
        blend(color, sclera, coverage(ellipse_distance(x, y, ex, eye_y, eye_r * 1.6f, eye_r), edge));
        blend(color, params.iris, coverage(ellipse_distance(x, y, ex, eye_y, eye_r * 0.7f, eye_r * 0.7f), edge));
      }

      const float nose_top = eye_y + eye_r;
      if (y > nose_top && y < nose_top + params.nose_length * ay) {
        blend(color, nose, coverage(std::abs(x - cx) - 0.012f, edge));
      }

      const float t = (x - cx) / mouth_w;
      if (std::abs(t) < 1.0f) {
        const float curve_y = mouth_y + params.mouth_curve * (t * t - 1.0f);
        blend(color, params.lips, coverage(std::abs(y - curve_y) - 0.014f, edge));
      }

      for (int c = 0; c < 3; ++c) {
        img.at(c, py, px) = std::clamp(color[c] * gain + 0.03f * gauss(rng), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

ImageTensor morph(const ImageTensor& a, const ImageTensor& b, double alpha) {
  if (!a.same_shape(b)) throw ValidationError("morph sources must share one shape");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("morph alpha must lie in (0,1)");
  ImageTensor out(a.height(), a.width(), a.channels());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double v = alpha * da[i] + (1.0 - alpha) * db[i];
    dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

namespace {

// Morphing tools warp both sources onto averaged landmarks and resample; a
// half-pixel bilinear shift reproduces the interpolation smoothing that leaves.
ImageTensor warp_resample(const ImageTensor& img) {
  ImageTensor out(img.height(), img.width(), img.channels());
  const int h = img.height();
  const int w = img.width();
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int y1 = std::min(y + 1, h - 1);
      for (int x = 0; x < w; ++x) {
        const int x1 = std::min(x + 1, w - 1);
        out.at(c, y, x) = 0.25f * (img.at(c, y, x) + img.at(c, y, x1) + img.at(c, y1, x) + img.at(c, y1, x1));
      }
    }
  }
  return out;
}

}  // namespace

void GenConfig::validate() const {
  if (n_identities < 2) throw ValidationError("n_identities must be at least 2");
  if (images_per_identity < 1) throw ValidationError("images_per_identity must be at least 1");
  if (n_morphs < 0) throw ValidationError("n_morphs must be non-negative");
  const long pairs = static_cast<long>(n_identities) * (n_identities - 1) / 2;
  if (n_morphs > pairs) {
    throw ValidationError("n_morphs " + std::to_string(n_morphs) + " exceeds the " + std::to_string(pairs) +
                          " available identity pairs");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
  if (side < 8) throw ValidationError("side must be at least 8");
  if (!(train_fraction > 0.0) || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ValidationError("split fractions must satisfy train > 0, val >= 0, train + val <= 1");
  }
}

nlohmann::json GenConfig::to_json() const {
  return nlohmann::json{{"n_identities", n_identities}, {"images_per_identity", images_per_identity},
                        {"n_morphs", n_morphs},         {"alpha", alpha},
                        {"seed", seed},                 {"side", side},
                        {"train_fraction", train_fraction}, {"val_fraction", val_fraction}};
}

std::array<int, 3> split_identity_counts(const GenConfig& cfg) {
  const int n = cfg.n_identities;
  int train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * n)));
  int val = static_cast<int>(std::lround(cfg.val_fraction * n));
  train = std::min(train, n);
  val = std::min(val, n - train);
  return {train, val, n - train - val};
}

std::filesystem::path generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "bonafide", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "morph", ec);
  if (ec) throw IoError("cannot create dataset directory '" + out_dir.string() + "': " + ec.message());

  const int n = cfg.n_identities;
  std::vector<IdentityParams> identities;
  for (int i = 0; i < n; ++i) identities.push_back(IdentityParams::sample(mix_seed(cfg.seed, static_cast<std::uint64_t>(i))));

  // Identity-level split assignment.
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x5eedULL));
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto counts = split_identity_counts(cfg);
  std::vector<Split> split_of(n);
  std::array<std::vector<int>, 3> members;
  for (int r = 0; r < n; ++r) {
    const int s = r < counts[0] ? 0 : (r < counts[0] + counts[1] ? 1 : 2);
    split_of[order[r]] = static_cast<Split>(s);
    members[s].push_back(order[r]);
  }
  for (auto& m : members) std::sort(m.begin(), m.end());

  std::vector<SampleRecord> records;
  std::vector<std::vector<ImageTensor>> rendered(n);
  auto bonafide_path = [](int i, int k) { return "bonafide/" + std::to_string(i) + "_" + std::to_string(k) + ".png"; };
  for (int i = 0; i < n; ++i) {
    const std::uint64_t id_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
    for (int k = 0; k < cfg.images_per_identity; ++k) {
      ImageTensor img = quantize_8bit(render_identity(identities[i], mix_seed(id_seed, 1000 + static_cast<std::uint64_t>(k)), cfg.side));
      save_image(out_dir / bonafide_path(i, k), img);
      rendered[i].push_back(std::move(img));
      records.push_back({bonafide_path(i, k), Label::kBonafide, std::nullopt, std::nullopt, split_of[i]});
    }
  }

  // Morph budget per split: proportional to identity share, capped by the
  // number of distinct pairs inside the split, overflow handed on in order.
  std::array<int, 3> capacity{}, budget{};
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const int m = static_cast<int>(members[s].size());
    capacity[s] = m * (m - 1) / 2;
    budget[s] = std::min(capacity[s], static_cast<int>(std::lround(static_cast<double>(cfg.n_morphs) * m / n)));
    assigned += budget[s];
  }
  for (int s = 0; s < 3 && assigned > cfg.n_morphs; ++s) {
    const int cut = std::min(budget[2 - s], assigned - cfg.n_morphs);
    budget[2 - s] -= cut;
    assigned -= cut;
  }
  for (int s = 0; s < 3 && assigned < cfg.n_morphs; ++s) {
    const int add = std::min(capacity[s] - budget[s], cfg.n_morphs - assigned);
    budget[s] += add;
    assigned += add;
  }
  if (assigned < cfg.n_morphs) {
    throw ValidationError("identity-disjoint splits only offer " + std::to_string(assigned) + " morph pairs, " +
                          std::to_string(cfg.n_morphs) + " requested");
  }

  for (int s = 0; s < 3; ++s) {
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < members[s].size(); ++a) {
      for (std::size_t b = a + 1; b < members[s].size(); ++b) pairs.emplace_back(members[s][a], members[s][b]);
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(static_cast<std::size_t>(budget[s]));
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [i, j] : pairs) {
      std::uniform_int_distribution<int> pick(0, cfg.images_per_identity - 1);
      const int ka = pick(rng);
      const int kb = pick(rng);
      const ImageTensor img = quantize_8bit(warp_resample(morph(rendered[i][ka], rendered[j][kb], cfg.alpha)));
      const std::string path = "morph/" + std::to_string(i) + "_" + std::to_string(j) + ".png";
      save_image(out_dir / path, img);
      records.push_back({path, Label::kAttack, bonafide_path(i, ka), bonafide_path(j, kb), static_cast<Split>(s)});
    }
  }

  const auto manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, records);
  return manifest;
}

}  // namespace idistill
