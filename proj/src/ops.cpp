#include "patchguard/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace patchguard {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace ops {
namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

// Transposes a rows×cols row-major buffer.
template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  // op(B) materialized as k×n row-major so the inner loop is contiguous.
  std::vector<T> bt;
  const T* bk = b;
  if (transpose_b) {
    bt = transposed(b, n, k);
    bk = bt.data();
  }
  if (!transpose_a) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = bk + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    // A stored k×m.
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = a + p * m;
      const T* brow = bk + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = arow[i];
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, a is " + shape_string(a.shape()) +
                         " and b is " + shape_string(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw(), false);
  return c;
}

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (dc.shape() != Shape{m, n}) {
    throw DimensionError("matmul_backward: upstream gradient " + shape_string(dc.shape()) +
                         " does not match output " + shape_string({m, n}));
  }
  MatmulGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
  gemm(false, true, m, k, n, dc.raw(), b.raw(), g.da.raw(), false);
  gemm(true, false, k, n, m, a.raw(), dc.raw(), g.db.raw(), false);
  return g;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear", "x");
  require_rank(weight, 2, "linear", "weight");
  if (x.dim(1) != weight.dim(0) || bias.size() != weight.dim(1)) {
    throw DimensionError("linear: x " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.dim(0), out = weight.dim(1);
  Tensor<T> y({rows, out});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(bias.raw(), bias.raw() + out, y.raw() + r * out);
  gemm(false, false, rows, out, x.dim(1), x.raw(), weight.raw(), y.raw(), true);
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& dy) {
  const std::size_t rows = x.dim(0), in = x.dim(1), out = weight.dim(1);
  if (dy.shape() != Shape{rows, out}) {
    throw DimensionError("linear_backward: upstream gradient " + shape_string(dy.shape()));
  }
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>({out})};
  gemm(false, true, rows, in, out, dy.raw(), weight.raw(), g.dx.raw(), false);
  gemm(true, false, in, out, rows, x.raw(), dy.raw(), g.dweight.raw(), false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) g.dbias[j] += dy[r * out + j];
  return g;
}

namespace {

struct ConvDims {
  std::size_t c, h, w, f, kh, kw, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& kernel, Conv2dGeometry g) {
  require_rank(x, 3, "conv2d", "x");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (g.stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0};
  if (kernel.dim(1) != d.c) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " channel count does not match input " + shape_string(x.shape()));
  }
  if (d.kh > d.h + 2 * g.pad || d.kw > d.w + 2 * g.pad) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " larger than padded input " + shape_string(x.shape()) + " with pad " +
                         std::to_string(g.pad));
  }
  d.oh = (d.h + 2 * g.pad - d.kh) / g.stride + 1;
  d.ow = (d.w + 2 * g.pad - d.kw) / g.stride + 1;
  return d;
}

// Column matrix [(C·kh·kw) × (oh·ow)].
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, const ConvDims& d, Conv2dGeometry g) {
  std::vector<T> cols(d.c * d.kh * d.kw * d.oh * d.ow, T{0});
  const std::size_t plane = d.oh * d.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < d.kh; ++i)
      for (std::size_t j = 0; j < d.kw; ++j, ++row) {
        T* dst = cols.data() + row * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            dst[oy * d.ow + ox] = x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
  return cols;
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvDims& d, Conv2dGeometry g, Tensor<T>& dx) {
  const std::size_t plane = d.oh * d.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < d.kh; ++i)
      for (std::size_t j = 0; j < d.kw; ++j, ++row) {
        const T* src = cols.data() + row * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            dx.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                src[oy * d.ow + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Conv2dGeometry geometry) {
  const ConvDims d = conv_dims(x, kernel, geometry);
  if (!bias.empty() && bias.size() != d.f) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                         std::to_string(d.f) + " filters");
  }
  const auto cols = im2col(x, d, geometry);
  Tensor<T> y({d.f, d.oh, d.ow});
  const std::size_t plane = d.oh * d.ow;
  if (!bias.empty()) {
    for (std::size_t f = 0; f < d.f; ++f)
      std::fill(y.raw() + f * plane, y.raw() + (f + 1) * plane, bias[f]);
  }
  gemm(false, false, d.f, plane, d.c * d.kh * d.kw, kernel.raw(), cols.data(), y.raw(), true);
  return y;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                               Conv2dGeometry geometry, const Tensor<T>& dy) {
  const ConvDims d = conv_dims(x, kernel, geometry);
  if (dy.shape() != Shape{d.f, d.oh, d.ow}) {
    throw DimensionError("conv2d_backward: upstream gradient " + shape_string(dy.shape()));
  }
  const std::size_t plane = d.oh * d.ow;
  const std::size_t patch = d.c * d.kh * d.kw;
  const auto cols = im2col(x, d, geometry);
  Conv2dGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(kernel.shape()), Tensor<T>({d.f})};
  gemm(false, true, d.f, patch, plane, dy.raw(), cols.data(), g.dkernel.raw(), false);
  std::vector<T> dcols(patch * plane);
  gemm(true, false, patch, plane, d.f, kernel.raw(), dy.raw(), dcols.data(), false);
  col2im(dcols, d, geometry, g.dx);
  for (std::size_t f = 0; f < d.f; ++f) {
    T s{0};
    for (std::size_t i = 0; i < plane; ++i) s += dy[f * plane + i];
    g.dbias[f] = s;
  }
  return g;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window) {
  require_rank(x, 3, "max_pool2d", "x");
  if (window == 0 || x.dim(1) < window || x.dim(2) < window) {
    throw DimensionError("max_pool2d: window " + std::to_string(window) + " on " +
                         shape_string(x.shape()));
  }
  const std::size_t c = x.dim(0), oh = x.dim(1) / window, ow = x.dim(2) / window;
  Tensor<T> y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j)
            best = std::max(best, x.at(ch, oy * window + i, ox * window + j));
        y.at(ch, oy, ox) = best;
      }
  return y;
}

template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& x, std::size_t window, const Tensor<T>& dy) {
  const std::size_t c = x.dim(0), oh = x.dim(1) / window, ow = x.dim(2) / window;
  if (dy.shape() != Shape{c, oh, ow}) {
    throw DimensionError("max_pool2d_backward: upstream gradient " + shape_string(dy.shape()));
  }
  Tensor<T> dx(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        // First maximum in scan order receives the gradient.
        std::size_t bi = 0, bj = 0;
        T best = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const T v = x.at(ch, oy * window + i, ox * window + j);
            if (v > best) {
              best = v;
              bi = i;
              bj = j;
            }
          }
        dx.at(ch, oy * window + bi, ox * window + bj) += dy.at(ch, oy, ox);
      }
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  x.require_same_shape(dy, "relu_backward");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return dx;
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T s = static_cast<T>(kGeluScale), a = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    y[i] = T{0.5} * v * (T{1} + std::tanh(s * (v + a * v * v * v)));
  }
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  x.require_same_shape(dy, "gelu_backward");
  Tensor<T> dx(x.shape());
  const T s = static_cast<T>(kGeluScale), a = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T t = std::tanh(s * (v + a * v * v * v));
    const T dt = (T{1} - t * t) * s * (T{1} + T{3} * a * v * v);
    dx[i] = dy[i] * (T{0.5} * (T{1} + t) + T{0.5} * v * dt);
  }
  return dx;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: last dimension " + std::to_string(d) + " vs gamma " +
                         shape_string(gamma.shape()) + " / beta " + shape_string(beta.shape()));
  }
  const std::size_t rows = x.size() / d;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.raw() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + eps);
    T* yr = y.raw() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = gamma[j] * (xr[j] - mean) * rstd + beta[j];
  }
  return y;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                                      const Tensor<T>& dy) {
  x.require_same_shape(dy, "layer_norm_backward");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({d}), Tensor<T>({d})};
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.raw() + r * d;
    const T* dyr = dy.raw() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + eps);
    T mean_dxhat{0}, mean_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean) * rstd;
      dxhat[j] = dyr[j] * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
      g.dgamma[j] += dyr[j] * xhat[j];
      g.dbeta[j] += dyr[j];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    T* dxr = g.dx.raw() + r * d;
    for (std::size_t j = 0; j < d; ++j)
      dxr[j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
  return g;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows", "x");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.raw() + r * cols;
    T* yr = y.raw() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  return y;
}

namespace {

template <typename T>
void check_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     std::size_t heads) {
  require_rank(q, 2, "attention", "q");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (heads == 0 || q.dim(1) % heads != 0) {
    throw ConfigError("attention: model width " + std::to_string(q.dim(1)) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
}

// Copies columns [offset, offset+width) of a [rows×cols] tensor.
template <typename T>
std::vector<T> head_slice(const Tensor<T>& t, std::size_t offset, std::size_t width) {
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  std::vector<T> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(t.raw() + r * cols + offset, t.raw() + r * cols + offset + width,
              out.data() + r * width);
  return out;
}

template <typename T>
void head_scatter(Tensor<T>& t, std::size_t offset, std::size_t width, const std::vector<T>& src) {
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(src.data() + r * width, src.data() + (r + 1) * width, t.raw() + r * cols + offset);
}

// Row softmax of QKᵀ·scale for one head, in place on an L×L buffer.
template <typename T>
void head_probs(const std::vector<T>& qh, const std::vector<T>& kh, std::size_t len,
                std::size_t width, T scale, std::vector<T>& probs) {
  gemm(false, true, len, len, width, qh.data(), kh.data(), probs.data(), false);
  for (std::size_t r = 0; r < len; ++r) {
    T* row = probs.data() + r * len;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      row[j] *= scale;
      mx = std::max(mx, row[j]);
    }
    T sum{0};
    for (std::size_t j = 0; j < len; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < len; ++j) row[j] /= sum;
  }
}

}  // namespace

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads) {
  check_attention(q, k, v, heads);
  const std::size_t len = q.dim(0), width = q.dim(1) / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(width));
  Tensor<T> out(q.shape());
  std::vector<T> probs(len * len), oh(len * width);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = head_slice(q, h * width, width);
    const auto kh = head_slice(k, h * width, width);
    const auto vh = head_slice(v, h * width, width);
    head_probs(qh, kh, len, width, scale, probs);
    gemm(false, false, len, width, len, probs.data(), vh.data(), oh.data(), false);
    head_scatter(out, h * width, width, oh);
  }
  return out;
}

template <typename T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k,
                                     const Tensor<T>& v, std::size_t heads,
                                     const Tensor<T>& dout) {
  check_attention(q, k, v, heads);
  q.require_same_shape(dout, "attention_backward");
  const std::size_t len = q.dim(0), width = q.dim(1) / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(width));
  AttentionGrads<T> g{Tensor<T>(q.shape()), Tensor<T>(k.shape()), Tensor<T>(v.shape())};
  std::vector<T> probs(len * len), dprobs(len * len), dqh(len * width), dkh(len * width),
      dvh(len * width);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = head_slice(q, h * width, width);
    const auto kh = head_slice(k, h * width, width);
    const auto vh = head_slice(v, h * width, width);
    const auto doh = head_slice(dout, h * width, width);
    head_probs(qh, kh, len, width, scale, probs);
    gemm(true, false, len, width, len, probs.data(), doh.data(), dvh.data(), false);
    gemm(false, true, len, len, width, doh.data(), vh.data(), dprobs.data(), false);
    // dS = P ∘ (dP − rowsum(dP ∘ P)), folded with the 1/sqrt(width) scale.
    for (std::size_t r = 0; r < len; ++r) {
      T* dp = dprobs.data() + r * len;
      const T* p = probs.data() + r * len;
      T dot{0};
      for (std::size_t j = 0; j < len; ++j) dot += dp[j] * p[j];
      for (std::size_t j = 0; j < len; ++j) dp[j] = p[j] * (dp[j] - dot) * scale;
    }
    gemm(false, false, len, width, len, dprobs.data(), kh.data(), dqh.data(), false);
    gemm(true, false, len, width, len, dprobs.data(), qh.data(), dkh.data(), false);
    head_scatter(g.dq, h * width, width, dqh);
    head_scatter(g.dk, h * width, width, dkh);
    head_scatter(g.dv, h * width, width, dvh);
  }
  return g;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits,
                                     std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                       " at batch index " + std::to_string(b) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  LossAndGrad<T> out{T{0}, softmax_rows(logits)};
  const T inv_batch = T{1} / static_cast<T>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xr = logits.raw() + b * classes;
    const T mx = *std::max_element(xr, xr + classes);
    T sum{0};
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(xr[j] - mx);
    out.loss += (std::log(sum) + mx - xr[labels[b]]) * inv_batch;
    T* gr = out.dlogits.raw() + b * classes;
    gr[labels[b]] -= T{1};
    for (std::size_t j = 0; j < classes; ++j) gr[j] *= inv_batch;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = a;
  out += b;
  return out;
}

#define PATCHGUARD_INSTANTIATE_OPS(T)                                                         \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template MatmulGrads<T> matmul_backward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&);                                \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&);                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               Conv2dGeometry);                                                \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                             Conv2dGeometry, const Tensor<T>&);                \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> max_pool2d_backward<T>(const Tensor<T>&, std::size_t, const Tensor<T>&);  \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                \
  template Tensor<T> gelu_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template LayerNormGrads<T> layer_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, T,     \
                                                    const Tensor<T>&);                         \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                        \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                  std::size_t);                                                \
  template AttentionGrads<T> attention_backward<T>(const Tensor<T>&, const Tensor<T>&,         \
                                                   const Tensor<T>&, std::size_t,              \
                                                   const Tensor<T>&);                          \
  template LossAndGrad<T> softmax_cross_entropy<T>(const Tensor<T>&,                           \
                                                   std::span<const std::size_t>);              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);

PATCHGUARD_INSTANTIATE_OPS(float)
PATCHGUARD_INSTANTIATE_OPS(double)

#undef PATCHGUARD_INSTANTIATE_OPS

}  // namespace ops
}  // namespace patchguard
