#include "pcqa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcqa/error.hpp"
#include "pcqa/simd.hpp"

namespace pcqa::nn {

std::size_t ParameterStore::add(std::string name, std::size_t rows, std::size_t cols, bool trainable) {
  Tensor t;
  t.name = std::move(name);
  t.rows = rows;
  t.cols = cols;
  t.value.assign(rows * cols, 0.0);
  t.grad.assign(rows * cols, 0.0);
  t.trainable = trainable;
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

Tensor* ParameterStore::find(const std::string& name) {
  for (auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

// Kept strictly inside (0,1): past |x| ~ 37 (top) or ~ 745 (bottom) the plain form rounds to 1 or 0.
double sigmoid(double x) {
  constexpr double top = 1.0 - 0x1p-53;
  constexpr double bottom = std::numeric_limits<double>::denorm_min();
  if (x >= 0.0) return std::min(top, 1.0 / (1.0 + std::exp(-x)));
  const double e = std::exp(x);
  return std::max(bottom, e / (1.0 + e));
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
               bool bias)
    : store_(store), has_bias_(bias), in_(in), out_(out) {
  weight_ = store.add(prefix + "/weight", in, out);
  bias_ = bias ? store.add(prefix + "/bias", 1, out) : 0;
}

Matrix Linear::forward(const Matrix& x, const Context&) {
  if (x.cols != in_) {
    throw Error(ErrorKind::ShapeMismatch, "linear layer expects " + std::to_string(in_) +
                                              " inputs, got " + std::to_string(x.cols));
  }
  const auto& k = simd::kernels();
  const Tensor& w = store_.at(weight_);
  Matrix y(x.rows, out_);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double* yr = y.row(r);
    if (has_bias_) std::copy_n(store_.at(bias_).value.data(), out_, yr);
    const double* xr = x.row(r);
    for (std::size_t i = 0; i < in_; ++i) {
      if (xr[i] != 0.0) k.axpy(xr[i], w.value.data() + i * out_, yr, out_);
    }
  }
  x_ = x;
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  const auto& k = simd::kernels();
  Tensor& w = store_.at(weight_);
  Matrix dx(dy.rows, in_);
  for (std::size_t r = 0; r < dy.rows; ++r) {
    const double* dyr = dy.row(r);
    const double* xr = x_.row(r);
    double* dxr = dx.row(r);
    for (std::size_t i = 0; i < in_; ++i) {
      dxr[i] = k.dot(dyr, w.value.data() + i * out_, out_);
      if (xr[i] != 0.0) k.axpy(xr[i], dyr, w.grad.data() + i * out_, out_);
    }
    if (has_bias_) k.axpy(1.0, dyr, store_.at(bias_).grad.data(), out_);
  }
  return dx;
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(ParameterStore& store, const std::string& prefix, std::size_t channels)
    : store_(store), channels_(channels) {
  gamma_ = store.add(prefix + "/gamma", 1, channels);
  beta_ = store.add(prefix + "/beta", 1, channels);
  running_mean_ = store.add(prefix + "/running_mean", 1, channels, false);
  running_var_ = store.add(prefix + "/running_var", 1, channels, false);
  std::fill(store.at(gamma_).value.begin(), store.at(gamma_).value.end(), 1.0);
  std::fill(store.at(running_var_).value.begin(), store.at(running_var_).value.end(), 1.0);
}

Matrix BatchNorm::forward(const Matrix& x, const Context& ctx) {
  if (x.cols != channels_) throw Error(ErrorKind::ShapeMismatch, "batch norm channel mismatch");
  const auto& k = simd::kernels();
  const std::size_t c = channels_;
  const auto& gamma = store_.at(gamma_).value;
  const auto& beta = store_.at(beta_).value;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  train_ = ctx.train;
  if (ctx.train) {
    if (x.rows == 0) throw Error(ErrorKind::ShapeMismatch, "batch norm over zero rows");
    for (std::size_t r = 0; r < x.rows; ++r) k.axpy(1.0, x.row(r), mean.data(), c);
    const double n = static_cast<double>(x.rows);
    for (double& m : mean) m /= n;
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double* xr = x.row(r);
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xr[j] - mean[j];
        var[j] += d * d;
      }
    }
    auto& rm = store_.at(running_mean_).value;
    auto& rv = store_.at(running_var_).value;
    for (std::size_t j = 0; j < c; ++j) {
      const double biased = var[j] / n;
      const double unbiased = x.rows > 1 ? var[j] / (n - 1.0) : biased;
      rm[j] = (1.0 - kMomentum) * rm[j] + kMomentum * mean[j];
      rv[j] = (1.0 - kMomentum) * rv[j] + kMomentum * unbiased;
      var[j] = biased;
    }
  } else {
    mean = store_.at(running_mean_).value;
    var = store_.at(running_var_).value;
  }
  inv_std_.resize(c);
  std::vector<double> scale(c), shift(c), neg_mean(c);
  for (std::size_t j = 0; j < c; ++j) {
    inv_std_[j] = 1.0 / std::sqrt(var[j] + kEpsilon);
    scale[j] = gamma[j] * inv_std_[j];
    neg_mean[j] = -mean[j] * inv_std_[j];
  }
  Matrix y(x.rows, c);
  if (ctx.train) xhat_ = Matrix(x.rows, c);
  std::vector<double> xh(c);
  for (std::size_t r = 0; r < x.rows; ++r) {
    k.scale_add(inv_std_.data(), x.row(r), neg_mean.data(), xh.data(), c);
    k.scale_add(gamma.data(), xh.data(), beta.data(), y.row(r), c);
    if (ctx.train) std::copy(xh.begin(), xh.end(), xhat_.row(r));
  }
  if (!ctx.train) xhat_ = Matrix();
  return y;
}

Matrix BatchNorm::backward(const Matrix& dy) {
  const std::size_t c = channels_;
  auto& dgamma = store_.at(gamma_).grad;
  auto& dbeta = store_.at(beta_).grad;
  const auto& gamma = store_.at(gamma_).value;
  Matrix dx(dy.rows, c);
  if (!train_) {
    // Running statistics are constants: an affine map per channel.
    for (std::size_t r = 0; r < dy.rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        dbeta[j] += dy(r, j);
        dx(r, j) = dy(r, j) * gamma[j] * inv_std_[j];
      }
    }
    // gamma gradient needs xhat; recomputing it would need the input, which eval mode does not keep.
    return dx;
  }
  const double n = static_cast<double>(dy.rows);
  std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
  for (std::size_t r = 0; r < dy.rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double g = dy(r, j);
      const double xh = xhat_(r, j);
      dgamma[j] += g * xh;
      dbeta[j] += g;
      const double dxh = g * gamma[j];
      sum_dxhat[j] += dxh;
      sum_dxhat_xhat[j] += dxh * xh;
    }
  }
  for (std::size_t r = 0; r < dy.rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double dxh = dy(r, j) * gamma[j];
      dx(r, j) = inv_std_[j] / n * (n * dxh - sum_dxhat[j] - xhat_(r, j) * sum_dxhat_xhat[j]);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Matrix Relu::forward(const Matrix& x, const Context&) {
  Matrix y(x.rows, x.cols);
  simd::kernels().relu(x.data.data(), y.data.data(), x.data.size());
  y_ = y;
  return y;
}

Matrix Relu::backward(const Matrix& dy) {
  Matrix dx(dy.rows, dy.cols);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = y_.data[i] > 0.0 ? dy.data[i] : 0.0;
  return dx;
}

Matrix Dropout::forward(const Matrix& x, const Context& ctx) {
  if (!ctx.train || rate_ <= 0.0) {
    mask_.clear();
    return x;
  }
  if (ctx.rng == nullptr) throw Error(ErrorKind::InvalidArgument, "dropout in training needs an rng");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.data.size());
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    mask_[i] = uniform(*ctx.rng) < rate_ ? 0.0 : keep_scale;
    y.data[i] = x.data[i] * mask_[i];
  }
  return y;
}

Matrix Dropout::backward(const Matrix& dy) {
  if (mask_.empty()) return dy;
  Matrix dx(dy.rows, dy.cols);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = dy.data[i] * mask_[i];
  return dx;
}

Matrix Sigmoid::forward(const Matrix& x, const Context&) {
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = sigmoid(x.data[i]);
  y_ = y;
  return y;
}

Matrix Sigmoid::backward(const Matrix& dy) {
  Matrix dx(dy.rows, dy.cols);
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    dx.data[i] = dy.data[i] * y_.data[i] * (1.0 - y_.data[i]);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation

namespace {

struct CseTrace {
  std::vector<double> z, hidden, gate;
};

// Channel gates for rows [begin, end) of u.
CseTrace cse_trace(const Matrix& u, std::size_t begin, std::size_t end, const double* expand,
                   const double* reduce) {
  const std::size_t c = u.cols;
  const std::size_t h = c / 2;
  const auto& k = simd::kernels();
  CseTrace t;
  t.z.assign(c, 0.0);
  for (std::size_t r = begin; r < end; ++r) k.axpy(1.0, u.row(r), t.z.data(), c);
  const double m = static_cast<double>(end - begin);
  for (double& v : t.z) v /= m;
  t.hidden.resize(h);
  for (std::size_t j = 0; j < h; ++j) t.hidden[j] = k.dot(reduce + j * c, t.z.data(), c);
  std::vector<double> act(h);
  for (std::size_t j = 0; j < h; ++j) act[j] = t.hidden[j] > 0.0 ? t.hidden[j] : 0.0;
  t.gate.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) t.gate[ch] = sigmoid(k.dot(expand + ch * h, act.data(), h));
  return t;
}

void check_cse_shapes(const Matrix& u, const std::vector<double>& expand,
                      const std::vector<double>& reduce) {
  if (u.cols % 2 != 0) {
    throw Error(ErrorKind::OddChannelCount, "channel attention needs an even channel count, got " +
                                                std::to_string(u.cols));
  }
  const std::size_t expected = u.cols * (u.cols / 2);
  if (expand.size() != expected || reduce.size() != expected) {
    throw Error(ErrorKind::ShapeMismatch, "cSE weights must be C x C/2 and C/2 x C");
  }
}

}  // namespace

std::vector<double> cse_gates(const Matrix& u, const std::vector<double>& expand,
                              const std::vector<double>& reduce) {
  check_cse_shapes(u, expand, reduce);
  return cse_trace(u, 0, u.rows, expand.data(), reduce.data()).gate;
}

std::vector<double> sse_gates(const Matrix& u, const std::vector<double>& squeeze) {
  if (squeeze.size() != u.cols) throw Error(ErrorKind::ShapeMismatch, "sSE weight must be C x 1");
  std::vector<double> q(u.rows);
  for (std::size_t r = 0; r < u.rows; ++r) q[r] = sigmoid(simd::kernels().dot(u.row(r), squeeze.data(), u.cols));
  return q;
}

Matrix cse_block(const Matrix& u, const std::vector<double>& expand,
                 const std::vector<double>& reduce) {
  const std::vector<double> g = cse_gates(u, expand, reduce);
  Matrix out(u.rows, u.cols);
  for (std::size_t r = 0; r < u.rows; ++r) {
    for (std::size_t c = 0; c < u.cols; ++c) out(r, c) = g[c] * u(r, c);
  }
  return out;
}

Matrix sse_block(const Matrix& u, const std::vector<double>& squeeze) {
  const std::vector<double> q = sse_gates(u, squeeze);
  Matrix out(u.rows, u.cols);
  for (std::size_t r = 0; r < u.rows; ++r) {
    for (std::size_t c = 0; c < u.cols; ++c) out(r, c) = q[r] * u(r, c);
  }
  return out;
}

Matrix scse_block(const Matrix& u, const std::vector<double>& expand,
                  const std::vector<double>& reduce, const std::vector<double>& squeeze) {
  Matrix a = cse_block(u, expand, reduce);
  const Matrix b = sse_block(u, squeeze);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  return a;
}

SqueezeExcite::SqueezeExcite(ParameterStore& store, const std::string& prefix, std::size_t channels,
                             AttentionKind kind)
    : store_(store), kind_(kind), channels_(channels) {
  const bool channel = kind == AttentionKind::cse || kind == AttentionKind::scse;
  const bool spatial = kind == AttentionKind::sse || kind == AttentionKind::scse;
  if (channel) {
    if (channels % 2 != 0) {
      throw Error(ErrorKind::OddChannelCount, prefix + ": channel attention needs an even width");
    }
    reduce_ = store.add(prefix + "/cse_reduce", channels / 2, channels);
    expand_ = store.add(prefix + "/cse_expand", channels, channels / 2);
  }
  if (spatial) squeeze_ = store.add(prefix + "/sse_squeeze", channels, 1);
}

Matrix SqueezeExcite::forward(const Matrix& x, const Context& ctx) {
  if (kind_ == AttentionKind::none) return x;
  if (x.cols != channels_) throw Error(ErrorKind::ShapeMismatch, "attention channel mismatch");
  const bool channel = kind_ == AttentionKind::cse || kind_ == AttentionKind::scse;
  const bool spatial = kind_ == AttentionKind::sse || kind_ == AttentionKind::scse;
  segments_ = ctx.segments ? *ctx.segments : Segments{0, x.rows};
  const auto& k = simd::kernels();
  Matrix y(x.rows, x.cols);
  cache_.clear();
  if (channel) {
    const double* expand = store_.at(expand_).value.data();
    const double* reduce = store_.at(reduce_).value.data();
    for (std::size_t s = 0; s + 1 < segments_.size(); ++s) {
      CseTrace t = cse_trace(x, segments_[s], segments_[s + 1], expand, reduce);
      for (std::size_t r = segments_[s]; r < segments_[s + 1]; ++r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (std::size_t c = 0; c < channels_; ++c) yr[c] = t.gate[c] * xr[c];
      }
      cache_.push_back({std::move(t.z), std::move(t.hidden), std::move(t.gate)});
    }
  }
  point_gate_.clear();
  if (spatial) {
    const double* squeeze = store_.at(squeeze_).value.data();
    point_gate_.resize(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double q = sigmoid(k.dot(x.row(r), squeeze, channels_));
      point_gate_[r] = q;
      k.axpy(q, x.row(r), y.row(r), channels_);
    }
  }
  x_ = x;
  return y;
}

Matrix SqueezeExcite::backward(const Matrix& dy) {
  if (kind_ == AttentionKind::none) return dy;
  const auto& k = simd::kernels();
  const std::size_t c = channels_;
  Matrix dx(dy.rows, dy.cols);
  if (!cache_.empty()) {
    const std::size_t h = c / 2;
    Tensor& expand = store_.at(expand_);
    Tensor& reduce = store_.at(reduce_);
    for (std::size_t s = 0; s + 1 < segments_.size(); ++s) {
      const SegmentCache& t = cache_[s];
      const std::size_t begin = segments_[s], end = segments_[s + 1];
      std::vector<double> dgate(c, 0.0);
      for (std::size_t r = begin; r < end; ++r) {
        const double* dyr = dy.row(r);
        const double* xr = x_.row(r);
        double* dxr = dx.row(r);
        for (std::size_t ch = 0; ch < c; ++ch) {
          dxr[ch] += dyr[ch] * t.gate[ch];
          dgate[ch] += dyr[ch] * xr[ch];
        }
      }
      std::vector<double> dw(c), act(h), dact(h, 0.0);
      for (std::size_t j = 0; j < h; ++j) act[j] = t.hidden[j] > 0.0 ? t.hidden[j] : 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dw[ch] = dgate[ch] * t.gate[ch] * (1.0 - t.gate[ch]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        k.axpy(dw[ch], act.data(), expand.grad.data() + ch * h, h);
        k.axpy(dw[ch], expand.value.data() + ch * h, dact.data(), h);
      }
      std::vector<double> dz(c, 0.0);
      for (std::size_t j = 0; j < h; ++j) {
        const double dh = t.hidden[j] > 0.0 ? dact[j] : 0.0;
        if (dh == 0.0) continue;
        k.axpy(dh, t.z.data(), reduce.grad.data() + j * c, c);
        k.axpy(dh, reduce.value.data() + j * c, dz.data(), c);
      }
      const double inv_m = 1.0 / static_cast<double>(end - begin);
      for (double& v : dz) v *= inv_m;
      for (std::size_t r = begin; r < end; ++r) k.axpy(1.0, dz.data(), dx.row(r), c);
    }
  }
  if (!point_gate_.empty()) {
    Tensor& squeeze = store_.at(squeeze_);
    for (std::size_t r = 0; r < dy.rows; ++r) {
      const double q = point_gate_[r];
      const double* dyr = dy.row(r);
      const double* xr = x_.row(r);
      double* dxr = dx.row(r);
      k.axpy(q, dyr, dxr, c);
      const double ds = k.dot(dyr, xr, c) * q * (1.0 - q);
      k.axpy(ds, squeeze.value.data(), dxr, c);
      k.axpy(ds, xr, squeeze.grad.data(), c);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Matrix GroupMaxPool::forward(const Matrix& x) {
  if (group == 0 || x.rows % group != 0) {
    throw Error(ErrorKind::ShapeMismatch, "max-pool rows not divisible by group size");
  }
  const auto& k = simd::kernels();
  const std::size_t groups = x.rows / group;
  in_rows = x.rows;
  Matrix y(groups, x.cols);
  argmax.assign(groups * x.cols, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    double* yr = y.row(g);
    std::copy_n(x.row(g * group), x.cols, yr);
    std::uint32_t* arg = argmax.data() + g * x.cols;
    for (std::size_t m = 1; m < group; ++m) {
      k.max_merge(x.row(g * group + m), yr, arg, static_cast<std::uint32_t>(m), x.cols);
    }
  }
  return y;
}

Matrix GroupMaxPool::backward(const Matrix& dy) const {
  Matrix dx(in_rows, dy.cols);
  for (std::size_t g = 0; g < dy.rows; ++g) {
    for (std::size_t c = 0; c < dy.cols; ++c) {
      dx(g * group + argmax[g * dy.cols + c], c) += dy(g, c);
    }
  }
  return dx;
}

}  // namespace pcqa::nn
