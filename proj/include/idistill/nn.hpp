#pragma once

// Minimal CPU network building blocks: NCHW float tensors, im2col convolutions
// backed by Eigen GEMM, and hand-written backward passes. Layers are immutable
// configuration objects; all trainable values live in a ParameterStore so a
// model can be copied, hashed and snapshotted as a plain value.

#include <cstddef>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace idistill::nn {

// Eigen peels unaligned heads off vectorised reductions, so the summation
// order depends on the buffer address. Fixing the alignment keeps results
// bitwise stable from one allocation to the next.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f);

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float* sample(int i) { return data_.data() + i * sample_size(); }
  const float* sample(int i) const { return data_.data() + i * sample_size(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape; element count must match.
  Tensor reshaped(int n, int c, int h, int w) const;
  void fill(float value);

  bool operator==(const Tensor&) const = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  FloatBuffer data_;
};

/// Owns every trainable tensor of a model together with its gradient buffer.
class ParameterStore {
 public:
  int add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(int i) const { return names_[i]; }
  const Tensor& value(int i) const { return values_[i]; }
  Tensor& value(int i) { return values_[i]; }
  Tensor& grad(int i) { return grads_[i]; }
  const Tensor& grad(int i) const { return grads_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;
  /// Fingerprint of names, shapes and values (FNV-1a hex).
  std::string hash() const;
  /// Copies values from a store with identical layout.
  void assign_values(const ParameterStore& other);

  std::vector<float> flatten() const;
  void unflatten(std::span<const float> flat);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
};

/// Activations cached by forward passes, consumed last-in first-out by backward.
using Tape = std::vector<Tensor>;

class Layer {
 public:
  virtual ~Layer() = default;
  /// tape == nullptr selects inference (nothing cached).
  virtual Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const = 0;
  /// Accumulates parameter gradients into params and returns d(loss)/d(input).
  virtual Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const = 0;
};

using LayerPtr = std::shared_ptr<const Layer>;

class Conv2d : public Layer {
 public:
  /// He-normal weights scaled by init_gain; zero bias.
  Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
         int kernel, int stride, int padding, std::mt19937_64& rng, float init_gain = 1.0f);
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

 private:
  int weight_, bias_;
  int in_, out_, kernel_, stride_, padding_;
};

/// Adjoint of Conv2d with the same geometry; kernel 4, stride 2, padding 1
/// doubles the spatial size.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
                  int kernel, int stride, int padding, std::mt19937_64& rng);
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

  int out_size(int in) const { return (in - 1) * stride_ - 2 * padding_ + kernel_; }

 private:
  int weight_, bias_;
  int in_, out_, kernel_, stride_, padding_;
};

/// Fully connected layer over the flattened sample; output is (N, out, 1, 1).
class Linear : public Layer {
 public:
  Linear(ParameterStore& store, const std::string& name, int in_features, int out_features,
         std::mt19937_64& rng, float init_gain = 1.0f);
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

 private:
  int weight_, bias_;
  int in_, out_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;
};

class Reshape : public Layer {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

 private:
  int c_, h_, w_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}
  void push(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t depth() const { return layers_.size(); }

  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

 private:
  std::vector<LayerPtr> layers_;
};

/// ResNet basic block without normalization: relu(conv(relu(conv(x))) + shortcut(x)).
/// The second convolution starts at zero so every block is the identity at
/// initialization; a 1x1 projection handles stride or width changes.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
                int stride, std::mt19937_64& rng);
  Tensor forward(const ParameterStore& params, const Tensor& x, Tape* tape) const override;
  Tensor backward(ParameterStore& params, const Tensor& grad_out, Tape& tape) const override;

 private:
  Sequential branch_;
  std::shared_ptr<const Conv2d> projection_;
  ReLU out_relu_;
};

/// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(const ParameterStore& store, Options options);
  void step(ParameterStore& store);
  long steps() const { return t_; }

 private:
  Options options_;
  long t_ = 0;
  std::vector<FloatBuffer> m_, v_;
};

}  // namespace idistill::nn
