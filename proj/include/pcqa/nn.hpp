#pragma once

// Minimal dense layers with explicit backward passes. Activations are
// row-major (rows = points or samples, cols = channels). Each layer caches
// what its backward pass needs during forward; a layer instance therefore
// serves one forward/backward pair at a time.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace pcqa::nn {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// A named array owned by the parameter store. Buffers (batch-norm running
// statistics) live here too but are not touched by the optimizer.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;
};

class ParameterStore {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool trainable = true);

  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  std::size_t size() const noexcept { return tensors_.size(); }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  void zero_grad();

 private:
  std::vector<Tensor> tensors_;
};

// Row offsets delimiting the samples of a batch: sample s owns rows
// [offsets[s], offsets[s+1]).
using Segments = std::vector<std::size_t>;

struct Context {
  bool train = false;
  const Segments* segments = nullptr;
  std::mt19937_64* rng = nullptr;  // dropout masks
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& x, const Context& ctx) = 0;
  // Returns d(loss)/d(input); accumulates parameter gradients in the store.
  virtual Matrix backward(const Matrix& dy) = 0;
};

// y = x W + b with W stored in x out.
class Linear final : public Layer {
 public:
  Linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
         bool bias = true);
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }

 private:
  ParameterStore& store_;
  std::size_t weight_, bias_;
  bool has_bias_;
  std::size_t in_, out_;
  Matrix x_;
};

// Per-channel normalization over all rows of the batch. Evaluation mode uses
// running statistics (momentum 0.1, unbiased running variance).
class BatchNorm final : public Layer {
 public:
  BatchNorm(ParameterStore& store, const std::string& prefix, std::size_t channels);
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  ParameterStore& store_;
  std::size_t gamma_, beta_, running_mean_, running_var_;
  std::size_t channels_;
  bool train_ = false;
  Matrix xhat_;
  std::vector<double> inv_std_;
};

class Relu final : public Layer {
 public:
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

 private:
  Matrix y_;
};

// Inverted dropout; identity in evaluation mode or with rate 0.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

 private:
  double rate_;
  std::vector<double> mask_;
};

class Sigmoid final : public Layer {
 public:
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

 private:
  Matrix y_;
};

double sigmoid(double x);

// ---------------------------------------------------------------------------
// Squeeze-and-excitation blocks on one M x C feature map.

// Channel gating: z = column means of U, w = expand * relu(reduce * z),
// output column c = sigmoid(w_c) * U[:, c]. `reduce` is (C/2) x C and
// `expand` is C x (C/2), both row-major.
Matrix cse_block(const Matrix& u, const std::vector<double>& expand,
                 const std::vector<double>& reduce);
// Point gating: q_i = sigmoid(<U[i,:], squeeze>), output row i = q_i * U[i,:].
Matrix sse_block(const Matrix& u, const std::vector<double>& squeeze);
// Elementwise sum of the two.
Matrix scse_block(const Matrix& u, const std::vector<double>& expand,
                  const std::vector<double>& reduce, const std::vector<double>& squeeze);

// Channel gates sigmoid(w) and point gates q for inspection.
std::vector<double> cse_gates(const Matrix& u, const std::vector<double>& expand,
                              const std::vector<double>& reduce);
std::vector<double> sse_gates(const Matrix& u, const std::vector<double>& squeeze);

enum class AttentionKind { none, cse, sse, scse };

// Applies the chosen block independently to every segment (sample).
class SqueezeExcite final : public Layer {
 public:
  SqueezeExcite(ParameterStore& store, const std::string& prefix, std::size_t channels,
                AttentionKind kind);
  Matrix forward(const Matrix& x, const Context& ctx) override;
  Matrix backward(const Matrix& dy) override;

 private:
  struct SegmentCache {
    std::vector<double> z, hidden, gate;
  };

  ParameterStore& store_;
  AttentionKind kind_;
  std::size_t channels_;
  std::size_t expand_ = 0, reduce_ = 0, squeeze_ = 0;
  Matrix x_;
  Segments segments_;
  std::vector<SegmentCache> cache_;
  std::vector<double> point_gate_;
};

// ---------------------------------------------------------------------------
// Pooling over fixed-size consecutive row groups.

struct GroupMaxPool {
  std::size_t group = 1;
  std::size_t in_rows = 0;
  std::vector<std::uint32_t> argmax;  // (rows/group) x cols, offset within group

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy) const;
};

}  // namespace pcqa::nn
