#pragma once

#include <cstddef>

#include "cap/parallel.hpp"
#include "cap/tensor.hpp"

// Dense kernels of the GPT-2 forward pass. Every kernel exists twice: a serial
// reference and an OpenMP version that partitions independent outputs across
// threads. Each output element is accumulated in the same order in both, so the
// two families agree bit for bit.
namespace cap::kernels {

namespace serial {

/// y = x·w + b for x [n, in], w [in, out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Row-wise layer normalization of x [n, d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
/// Tanh-approximated GELU, in place.
void gelu(Tensor& x);
/// Causal softmax attention weights from fused qkv [n, 3d]; returns [heads, n, n].
Tensor attention_pattern(const Tensor& qkv, std::size_t n_heads);
/// Weighted value sum: pattern [heads, n, n] (lower triangle), values [n, d] -> [n, d].
Tensor apply_pattern(const Tensor& pattern, const Tensor& values);

}  // namespace serial

namespace parallel {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
void gelu(Tensor& x);
Tensor attention_pattern(const Tensor& qkv, std::size_t n_heads);
Tensor apply_pattern(const Tensor& pattern, const Tensor& values);

}  // namespace parallel

Tensor linear(Backend backend, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor layer_norm(Backend backend, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
void gelu(Backend backend, Tensor& x);
Tensor attention_pattern(Backend backend, const Tensor& qkv, std::size_t n_heads);
Tensor apply_pattern(Backend backend, const Tensor& pattern, const Tensor& values);

/// Elementwise a + b (same shape).
Tensor add(const Tensor& a, const Tensor& b);
/// Columns [2d, 3d) of a fused qkv [n, 3d] block.
Tensor value_columns(const Tensor& qkv);

}  // namespace cap::kernels
