#pragma once

#include <cstddef>
#include <span>

#include "patchguard/tensor.hpp"

/// Differentiable operations with hand-written backward passes.
///
/// Every op is a pure function. Backward functions take the forward inputs
/// plus the upstream gradient and recompute whatever intermediate state they
/// need, so nothing is cached between calls and concurrent use is safe.
namespace patchguard::ops {

/// C (+)= op(A)·op(B) on raw row-major buffers; op(A) is m×k, op(B) is k×n.
template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

template <typename T>
struct MatmulGrads {
  Tensor<T> da;
  Tensor<T> db;
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc);

/// y = x·W + b for x [L×in], W [in×out], b [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> dx;
  Tensor<T> dweight;
  Tensor<T> dbias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& dy);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Cross-correlation of x [C×H×W] with kernels [F×C×kh×kw], zero padding.
/// Output is [F×H'×W'] with H' = (H + 2·pad − kh)/stride + 1. `bias` may be
/// empty (no bias) or [F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Conv2dGeometry geometry);

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx;
  Tensor<T> dkernel;
  Tensor<T> dbias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                               Conv2dGeometry geometry, const Tensor<T>& dy);

/// Non-overlapping max pooling over window×window blocks of [C×H×W].
/// Trailing rows/columns that do not fill a window are discarded.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window);

template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& x, std::size_t window, const Tensor<T>& dy);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

/// GELU, tanh approximation:
///   gelu(x) = 0.5·x·(1 + tanh(sqrt(2/π)·(x + 0.044715·x³)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy);

/// Normalizes each row over the last dimension D, then applies gamma·x̂ + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                                      const Tensor<T>& dy);

/// Row-wise softmax of a 2-D tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Multi-head scaled dot-product attention on [L×D] inputs. Head h uses
/// columns [h·D/heads, (h+1)·D/heads); outputs are concatenated in that order.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads);

template <typename T>
struct AttentionGrads {
  Tensor<T> dq;
  Tensor<T> dk;
  Tensor<T> dv;
};

template <typename T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k,
                                     const Tensor<T>& v, std::size_t heads,
                                     const Tensor<T>& dout);

template <typename T>
struct LossAndGrad {
  T loss;
  Tensor<T> dlogits;
};

/// Mean over the batch of −log softmax(logits)[label]. The returned gradient
/// is (softmax − onehot)/B.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits,
                                     std::span<const std::size_t> labels);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace patchguard::ops
