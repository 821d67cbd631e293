#include "cap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cap/errors.hpp"

namespace cap::kernels {
namespace {

constexpr std::size_t kColumnBlock = 64;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ContractError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                        to_string(t.shape()));
  }
}

void check_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (x.dim(1) != w.dim(0) || b.size() != w.dim(1)) {
    throw ContractError("linear: shapes " + to_string(x.shape()) + " x " + to_string(w.shape()) + " + " +
                        to_string(b.shape()));
  }
}

// Computes columns [c0, c1) of every row. Each output accumulates x[r,i]·w[i,c]
// for ascending i, then adds the bias.
void linear_block(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y, std::size_t c0, std::size_t c1) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
  for (std::size_t r = 0; r < n; ++r) std::fill(y.data() + r * out + c0, y.data() + r * out + c1, 0.0f);
  for (std::size_t i = 0; i < in; ++i) {
    const float* wi = w.data() + i * out;
    for (std::size_t r = 0; r < n; ++r) {
      const float xi = x.data()[r * in + i];
      float* yr = y.data() + r * out;
      for (std::size_t c = c0; c < c1; ++c) yr[c] += xi * wi[c];
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    float* yr = y.data() + r * out;
    for (std::size_t c = c0; c < c1; ++c) yr[c] += b[c];
  }
}

void layer_norm_row(const float* x, float* y, std::size_t d, const Tensor& gamma, const Tensor& beta, float eps) {
  float mean = 0.0f;
  for (std::size_t c = 0; c < d; ++c) mean += x[c];
  mean /= static_cast<float>(d);
  float var = 0.0f;
  for (std::size_t c = 0; c < d; ++c) {
    const float centered = x[c] - mean;
    var += centered * centered;
  }
  var /= static_cast<float>(d);
  const float inv = 1.0f / std::sqrt(var + eps);
  for (std::size_t c = 0; c < d; ++c) y[c] = (x[c] - mean) * inv * gamma[c] + beta[c];
}

inline float gelu_scalar(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

// One query row of one head: softmax over keys j <= i, zeros above the diagonal.
void pattern_row(const Tensor& qkv, std::size_t n_heads, std::size_t h, std::size_t i, float* row) {
  const std::size_t n = qkv.dim(0), d = qkv.dim(1) / 3, dh = d / n_heads;
  const float scale = std::sqrt(static_cast<float>(dh));
  const float* q = qkv.data() + i * 3 * d + h * dh;
  float peak = -std::numeric_limits<float>::infinity();
  for (std::size_t j = 0; j <= i; ++j) {
    const float* k = qkv.data() + j * 3 * d + d + h * dh;
    float s = 0.0f;
    for (std::size_t c = 0; c < dh; ++c) s += q[c] * k[c];
    row[j] = s / scale;
    peak = std::max(peak, row[j]);
  }
  float total = 0.0f;
  for (std::size_t j = 0; j <= i; ++j) {
    row[j] = std::exp(row[j] - peak);
    total += row[j];
  }
  for (std::size_t j = 0; j <= i; ++j) row[j] /= total;
  for (std::size_t j = i + 1; j < n; ++j) row[j] = 0.0f;
}

void check_pattern_inputs(const Tensor& pattern, const Tensor& values) {
  require_rank(pattern, 3, "attention pattern");
  require_rank(values, 2, "attention values");
  const std::size_t heads = pattern.dim(0), n = pattern.dim(1);
  if (pattern.dim(2) != n || values.dim(0) != n || values.dim(1) % heads != 0) {
    throw ContractError("apply_pattern: pattern " + to_string(pattern.shape()) + " vs values " +
                        to_string(values.shape()));
  }
}

// out[i, h*dh + c] = sum_{j <= i} pattern[h, i, j] * values[j, h*dh + c], ascending j.
void apply_pattern_row(const Tensor& pattern, const Tensor& values, std::size_t h, std::size_t i, Tensor& out) {
  const std::size_t n = pattern.dim(1), d = values.dim(1), dh = d / pattern.dim(0);
  float* o = out.data() + i * d + h * dh;
  std::fill(o, o + dh, 0.0f);
  const float* p = pattern.data() + (h * n + i) * n;
  for (std::size_t j = 0; j <= i; ++j) {
    const float* v = values.data() + j * d + h * dh;
    const float weight = p[j];
    for (std::size_t c = 0; c < dh; ++c) o[c] += weight * v[c];
  }
}

void check_qkv(const Tensor& qkv, std::size_t n_heads) {
  require_rank(qkv, 2, "qkv");
  if (qkv.dim(1) % 3 != 0 || n_heads == 0 || (qkv.dim(1) / 3) % n_heads != 0) {
    throw ContractError("attention_pattern: qkv " + to_string(qkv.shape()) + " with " + std::to_string(n_heads) +
                        " heads");
  }
}

}  // namespace

namespace serial {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_linear(x, w, b);
  Tensor y({x.dim(0), w.dim(1)});
  linear_block(x, w, b, y, 0, w.dim(1));
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < n; ++r) layer_norm_row(x.data() + r * d, y.data() + r * d, d, gamma, beta, eps);
  return y;
}

void gelu(Tensor& x) {
  for (float& v : x.values()) v = gelu_scalar(v);
}

Tensor attention_pattern(const Tensor& qkv, std::size_t n_heads) {
  check_qkv(qkv, n_heads);
  const std::size_t n = qkv.dim(0);
  Tensor pattern({n_heads, n, n});
  for (std::size_t h = 0; h < n_heads; ++h)
    for (std::size_t i = 0; i < n; ++i) pattern_row(qkv, n_heads, h, i, pattern.data() + (h * n + i) * n);
  return pattern;
}

Tensor apply_pattern(const Tensor& pattern, const Tensor& values) {
  check_pattern_inputs(pattern, values);
  Tensor out(values.shape());
  for (std::size_t h = 0; h < pattern.dim(0); ++h)
    for (std::size_t i = 0; i < pattern.dim(1); ++i) apply_pattern_row(pattern, values, h, i, out);
  return out;
}

}  // namespace serial

namespace parallel {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_linear(x, w, b);
  const std::size_t out = w.dim(1);
  const std::ptrdiff_t blocks = static_cast<std::ptrdiff_t>((out + kColumnBlock - 1) / kColumnBlock);
  Tensor y({x.dim(0), out});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t c0 = static_cast<std::size_t>(blk) * kColumnBlock;
    linear_block(x, w, b, y, c0, std::min(out, c0 + kColumnBlock));
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t d = x.dim(1);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.dim(0));
  Tensor y(x.shape());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    layer_norm_row(x.data() + r * d, y.data() + r * d, d, gamma, beta, eps);
  }
  return y;
}

void gelu(Tensor& x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  float* v = x.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) v[i] = gelu_scalar(v[i]);
}

Tensor attention_pattern(const Tensor& qkv, std::size_t n_heads) {
  check_qkv(qkv, n_heads);
  const std::size_t n = qkv.dim(0);
  Tensor pattern({n_heads, n, n});
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n_heads * n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t hi = 0; hi < rows; ++hi) {
    const std::size_t h = static_cast<std::size_t>(hi) / n, i = static_cast<std::size_t>(hi) % n;
    pattern_row(qkv, n_heads, h, i, pattern.data() + (h * n + i) * n);
  }
  return pattern;
}

Tensor apply_pattern(const Tensor& pattern, const Tensor& values) {
  check_pattern_inputs(pattern, values);
  const std::size_t n = pattern.dim(1);
  Tensor out(values.shape());
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(pattern.dim(0) * n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t hi = 0; hi < rows; ++hi) {
    apply_pattern_row(pattern, values, static_cast<std::size_t>(hi) / n, static_cast<std::size_t>(hi) % n, out);
  }
  return out;
}

}  // namespace parallel

Tensor linear(Backend backend, const Tensor& x, const Tensor& w, const Tensor& b) {
  return backend == Backend::Serial ? serial::linear(x, w, b) : parallel::linear(x, w, b);
}

Tensor layer_norm(Backend backend, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  return backend == Backend::Serial ? serial::layer_norm(x, gamma, beta, eps)
                                    : parallel::layer_norm(x, gamma, beta, eps);
}

void gelu(Backend backend, Tensor& x) {
  if (backend == Backend::Serial) {
    serial::gelu(x);
  } else {
    parallel::gelu(x);
  }
}

Tensor attention_pattern(Backend backend, const Tensor& qkv, std::size_t n_heads) {
  return backend == Backend::Serial ? serial::attention_pattern(qkv, n_heads)
                                    : parallel::attention_pattern(qkv, n_heads);
}

Tensor apply_pattern(Backend backend, const Tensor& pattern, const Tensor& values) {
  return backend == Backend::Serial ? serial::apply_pattern(pattern, values)
                                    : parallel::apply_pattern(pattern, values);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("add: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor value_columns(const Tensor& qkv) {
  require_rank(qkv, 2, "qkv");
  const std::size_t n = qkv.dim(0), d = qkv.dim(1) / 3;
  Tensor v({n, d});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(qkv.data() + r * 3 * d + 2 * d, d, v.data() + r * d);
  return v;
}

}  // namespace cap::kernels
