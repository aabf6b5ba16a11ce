#include "idistill/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "idistill/core.hpp"
#include "idistill/hash.hpp"

namespace idistill::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

Tensor pop(Tape& tape) {
  if (tape.empty()) throw std::logic_error("backward called with an exhausted tape");
  Tensor t = std::move(tape.back());
  tape.pop_back();
  return t;
}

Tensor he_normal(int count_out, int fan_in, int c, int h, int w, float gain, std::mt19937_64& rng) {
  Tensor t(count_out, c, h, w);
  if (gain == 0.0f) return t;
  std::normal_distribution<float> dist(0.0f, gain * std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

// Geometry of a stride/padding window sweep over an (h, w) image.
struct Window {
  int channels, h, w, kernel, stride, padding, out_h, out_w;
};

void im2col(const float* src, const Window& g, float* cols) {
  const int positions = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * positions;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
            row[oy * g.out_w + ox] = inside ? src[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const Window& g, float* dst) {
  const int positions = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * positions;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.w) continue;
            dst[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
  if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("negative tensor dimension");
}

Tensor Tensor::reshaped(int n, int c, int h, int w) const {
  if (static_cast<std::size_t>(n) * c * h * w != data_.size()) {
    throw std::invalid_argument("reshape changes element count");
  }
  Tensor t = *this;
  t.n_ = n;
  t.c_ = c;
  t.h_ = h;
  t.w_ = w;
  return t;
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

// -------------------------------------------------------- ParameterStore

int ParameterStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  grads_.emplace_back(value.n(), value.c(), value.h(), value.w());
  values_.push_back(std::move(value));
  return static_cast<int>(values_.size()) - 1;
}

void ParameterStore::zero_grad() {
  for (auto& g : grads_) g.fill(0.0f);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::string ParameterStore::hash() const {
  Fnv1a h;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    h.update(names_[i]);
    const int shape[4] = {values_[i].n(), values_[i].c(), values_[i].h(), values_[i].w()};
    h.update_values(std::span<const int>(shape));
    h.update_values(values_[i].values());
  }
  return h.hex();
}

void ParameterStore::assign_values(const ParameterStore& other) {
  if (other.values_.size() != values_.size()) throw std::invalid_argument("parameter layout mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!values_[i].same_shape(other.values_[i]) || names_[i] != other.names_[i]) {
      throw std::invalid_argument("parameter layout mismatch at '" + names_[i] + "'");
    }
    values_[i] = other.values_[i];
  }
}

std::vector<float> ParameterStore::flatten() const {
  std::vector<float> flat;
  flat.reserve(scalar_count());
  for (const auto& v : values_) flat.insert(flat.end(), v.values().begin(), v.values().end());
  return flat;
}

void ParameterStore::unflatten(std::span<const float> flat) {
  if (flat.size() != scalar_count()) throw std::invalid_argument("flat parameter size mismatch");
  std::size_t offset = 0;
  for (auto& v : values_) {
    std::copy_n(flat.begin() + offset, v.size(), v.data());
    offset += v.size();
  }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
               int kernel, int stride, int padding, std::mt19937_64& rng, float init_gain)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  const int fan_in = in_channels * kernel * kernel;
  weight_ = store.add(name + ".weight", he_normal(out_channels, fan_in, in_channels, kernel, kernel, init_gain, rng));
  bias_ = store.add(name + ".bias", Tensor(1, out_channels, 1, 1));
}

Tensor Conv2d::forward(const ParameterStore& params, const Tensor& x, Tape* tape) const {
  if (x.c() != in_) throw ValidationError("conv input has " + std::to_string(x.c()) + " channels, expected " + std::to_string(in_));
  const Window g{in_, x.h(), x.w(), kernel_, stride_, padding_, out_size(x.h()), out_size(x.w())};
  const int rows = in_ * kernel_ * kernel_;
  const int positions = g.out_h * g.out_w;
  Tensor y(x.n(), out_, g.out_h, g.out_w);
  FloatBuffer cols(static_cast<std::size_t>(rows) * positions);
  ConstMapRM weight(params.value(weight_).data(), out_, rows);
  ConstVecMap bias(params.value(bias_).data(), out_);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i), g, cols.data());
    MapRM out(y.sample(i), out_, positions);
    out.noalias() = weight * ConstMapRM(cols.data(), rows, positions);
    out.colwise() += bias;
  }
  if (tape) tape->push_back(x);
  return y;
}

Tensor Conv2d::backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const {
  const Tensor x = pop(tape);
  const Window g{in_, x.h(), x.w(), kernel_, stride_, padding_, out_size(x.h()), out_size(x.w())};
  const int rows = in_ * kernel_ * kernel_;
  const int positions = g.out_h * g.out_w;
  Tensor dx(x.n(), x.c(), x.h(), x.w());
  FloatBuffer cols(static_cast<std::size_t>(rows) * positions);
  FloatBuffer dcols(cols.size());
  ConstMapRM weight(params.value(weight_).data(), out_, rows);
  MapRM dweight(params.grad(weight_).data(), out_, rows);
  VecMap dbias(params.grad(bias_).data(), out_);
  for (int i = 0; i < x.n(); ++i) {
    im2col(x.sample(i), g, cols.data());
    ConstMapRM gout(grad_out.sample(i), out_, positions);
    dweight.noalias() += gout * ConstMapRM(cols.data(), rows, positions).transpose();
    dbias += gout.rowwise().sum();
    MapRM(dcols.data(), rows, positions).noalias() = weight.transpose() * gout;
    col2im(dcols.data(), g, dx.sample(i));
  }
  return dx;
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name, int in_channels,
                                 int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  // Each output pixel receives about in*(k/s)^2 contributions.
  const int fan_in = std::max(1, in_channels * (kernel / stride) * (kernel / stride));
  weight_ = store.add(name + ".weight", he_normal(in_channels, fan_in, out_channels, kernel, kernel, 1.0f, rng));
  bias_ = store.add(name + ".bias", Tensor(1, out_channels, 1, 1));
}

Tensor ConvTranspose2d::forward(const ParameterStore& params, const Tensor& x, Tape* tape) const {
  if (x.c() != in_) throw ValidationError("transposed conv input channel mismatch");
  const int oh = out_size(x.h());
  const int ow = out_size(x.w());
  // The output image is the "input" side of the equivalent convolution.
  const Window g{out_, oh, ow, kernel_, stride_, padding_, x.h(), x.w()};
  const int rows = out_ * kernel_ * kernel_;
  const int positions = x.h() * x.w();
  Tensor y(x.n(), out_, oh, ow);
  FloatBuffer cols(static_cast<std::size_t>(rows) * positions);
  ConstMapRM weight(params.value(weight_).data(), in_, rows);
  const float* bias = params.value(bias_).data();
  for (int i = 0; i < x.n(); ++i) {
    MapRM(cols.data(), rows, positions).noalias() = weight.transpose() * ConstMapRM(x.sample(i), in_, positions);
    float* dst = y.sample(i);
    col2im(cols.data(), g, dst);
    for (int c = 0; c < out_; ++c) {
      float* plane = dst + static_cast<std::size_t>(c) * oh * ow;
      for (int p = 0; p < oh * ow; ++p) plane[p] += bias[c];
    }
  }
  if (tape) tape->push_back(x);
  return y;
}

Tensor ConvTranspose2d::backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const {
  const Tensor x = pop(tape);
  const Window g{out_, grad_out.h(), grad_out.w(), kernel_, stride_, padding_, x.h(), x.w()};
  const int rows = out_ * kernel_ * kernel_;
  const int positions = x.h() * x.w();
  Tensor dx(x.n(), x.c(), x.h(), x.w());
  FloatBuffer cols(static_cast<std::size_t>(rows) * positions);
  ConstMapRM weight(params.value(weight_).data(), in_, rows);
  MapRM dweight(params.grad(weight_).data(), in_, rows);
  float* dbias = params.grad(bias_).data();
  const int plane = grad_out.h() * grad_out.w();
  for (int i = 0; i < x.n(); ++i) {
    const float* gout = grad_out.sample(i);
    im2col(gout, g, cols.data());
    ConstMapRM gcols(cols.data(), rows, positions);
    ConstMapRM xi(x.sample(i), in_, positions);
    dweight.noalias() += xi * gcols.transpose();
    MapRM(dx.sample(i), in_, positions).noalias() = weight * gcols;
    for (int c = 0; c < out_; ++c) {
      float s = 0.0f;
      for (int p = 0; p < plane; ++p) s += gout[static_cast<std::size_t>(c) * plane + p];
      dbias[c] += s;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(ParameterStore& store, const std::string& name, int in_features, int out_features,
               std::mt19937_64& rng, float init_gain)
    : in_(in_features), out_(out_features) {
  weight_ = store.add(name + ".weight", he_normal(out_features, in_features, in_features, 1, 1, init_gain, rng));
  bias_ = store.add(name + ".bias", Tensor(1, out_features, 1, 1));
}

Tensor Linear::forward(const ParameterStore& params, const Tensor& x, Tape* tape) const {
  if (static_cast<int>(x.sample_size()) != in_) {
    throw ValidationError("linear layer expects " + std::to_string(in_) + " features, got " + std::to_string(x.sample_size()));
  }
  Tensor y(x.n(), out_, 1, 1);
  ConstMapRM weight(params.value(weight_).data(), out_, in_);
  ConstVecMap bias(params.value(bias_).data(), out_);
  // Per-sample products keep each output independent of the batch size.
  for (int i = 0; i < x.n(); ++i) {
    VecMap out(y.sample(i), out_);
    out.noalias() = weight * ConstVecMap(x.sample(i), in_);
    out += bias;
  }
  if (tape) tape->push_back(x);
  return y;
}

Tensor Linear::backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const {
  const Tensor x = pop(tape);
  ConstMapRM in(x.data(), x.n(), in_);
  ConstMapRM gout(grad_out.data(), x.n(), out_);
  MapRM(params.grad(weight_).data(), out_, in_).noalias() += gout.transpose() * in;
  VecMap(params.grad(bias_).data(), out_) += gout.colwise().sum().transpose();
  Tensor dx(x.n(), x.c(), x.h(), x.w());
  MapRM(dx.data(), x.n(), in_).noalias() = gout * ConstMapRM(params.value(weight_).data(), out_, in_);
  return dx;
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const ParameterStore&, const Tensor& x, Tape* tape) const {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  if (tape) tape->push_back(x);
  return y;
}

Tensor ReLU::backward(ParameterStore&, const Tensor& grad_out, Tape& tape) const {
  const Tensor x = pop(tape);
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0f)) dx[i] = 0.0f;
  }
  return dx;
}

Tensor Sigmoid::forward(const ParameterStore&, const Tensor& x, Tape* tape) const {
  Tensor y = x;
  for (float& v : y.values()) v = 1.0f / (1.0f + std::exp(-v));
  if (tape) tape->push_back(y);
  return y;
}

Tensor Sigmoid::backward(ParameterStore&, const Tensor& grad_out, Tape& tape) const {
  const Tensor y = pop(tape);
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0f - y[i]);
  return dx;
}

Tensor GlobalAvgPool::forward(const ParameterStore&, const Tensor& x, Tape* tape) const {
  Tensor y(x.n(), x.c(), 1, 1);
  const int plane = x.h() * x.w();
  for (int i = 0; i < x.n(); ++i) {
    const float* src = x.sample(i);
    for (int c = 0; c < x.c(); ++c) {
      double s = 0.0;
      for (int p = 0; p < plane; ++p) s += src[static_cast<std::size_t>(c) * plane + p];
      y.sample(i)[c] = static_cast<float>(s / plane);
    }
  }
  if (tape) tape->push_back(Tensor(x.n(), x.c(), x.h(), x.w()));
  return y;
}

Tensor GlobalAvgPool::backward(ParameterStore&, const Tensor& grad_out, Tape& tape) const {
  Tensor dx = pop(tape);
  const int plane = dx.h() * dx.w();
  for (int i = 0; i < dx.n(); ++i) {
    for (int c = 0; c < dx.c(); ++c) {
      const float g = grad_out.sample(i)[c] / static_cast<float>(plane);
      std::fill_n(dx.sample(i) + static_cast<std::size_t>(c) * plane, plane, g);
    }
  }
  return dx;
}

Tensor Reshape::forward(const ParameterStore&, const Tensor& x, Tape* tape) const {
  if (tape) tape->push_back(Tensor(0, x.c(), x.h(), x.w()));
  return x.reshaped(x.n(), c_, h_, w_);
}

Tensor Reshape::backward(ParameterStore&, const Tensor& grad_out, Tape& tape) const {
  const Tensor shape = pop(tape);
  return grad_out.reshaped(grad_out.n(), shape.c(), shape.h(), shape.w());
}

// ------------------------------------------------------------ containers

Tensor Sequential::forward(const ParameterStore& params, const Tensor& x, Tape* tape) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->forward(params, h, tape);
  return h;
}

Tensor Sequential::backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(params, g, tape);
  return g;
}

ResidualBlock::ResidualBlock(ParameterStore& store, const std::string& name, int in_channels,
                             int out_channels, int stride, std::mt19937_64& rng) {
  branch_.push(std::make_shared<Conv2d>(store, name + ".conv1", in_channels, out_channels, 3, stride, 1, rng));
  branch_.push(std::make_shared<ReLU>());
  branch_.push(std::make_shared<Conv2d>(store, name + ".conv2", out_channels, out_channels, 3, 1, 1, rng, 0.0f));
  if (stride != 1 || in_channels != out_channels) {
    projection_ = std::make_shared<Conv2d>(store, name + ".proj", in_channels, out_channels, 1, stride, 0, rng);
  }
}

Tensor ResidualBlock::forward(const ParameterStore& params, const Tensor& x, Tape* tape) const {
  Tensor sum = branch_.forward(params, x, tape);
  const Tensor shortcut = projection_ ? projection_->forward(params, x, tape) : x;
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += shortcut[i];
  return out_relu_.forward(params, sum, tape);
}

Tensor ResidualBlock::backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const {
  const Tensor g = out_relu_.backward(params, grad_out, tape);
  Tensor dx = projection_ ? projection_->backward(params, g, tape) : g;
  const Tensor dbranch = branch_.backward(params, g, tape);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dbranch[i];
  return dx;
}

// ------------------------------------------------------------------ Adam

Adam::Adam(const ParameterStore& store, Options options) : options_(options) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(static_cast<int>(i)).size(), 0.0f);
    v_.emplace_back(store.value(static_cast<int>(i)).size(), 0.0f);
  }
}

void Adam::step(ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(options_.beta1);
  const float b2 = static_cast<float>(options_.beta2);
  const float step = static_cast<float>(options_.learning_rate / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(options_.epsilon);
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& value = store.value(static_cast<int>(p));
    const Tensor& grad = store.grad(static_cast<int>(p));
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

}  // namespace idistill::nn
