#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pram/parallel.hpp"
#include "pram/tensor.hpp"

// Differentiable operations. Every op validates shapes eagerly, computes the
// forward value, and records a backward closure that accumulates into the
// gradients of the parents that require them.

namespace pram {

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <typename T>
std::vector<T>* grad_of(Node<T>& parent) {
  return parent.requires_grad ? &parent.ensure_grad() : nullptr;
}

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<Matrix<T>> mat(T* data, std::size_t rows, std::size_t cols) {
  return {data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
Eigen::Map<const Matrix<T>> cmat(const T* data, std::size_t rows, std::size_t cols) {
  return {data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

inline constexpr std::size_t kRowBlock = 16;
}  // namespace detail

/// 2-D cross-correlation over a batch.
///
/// input [N,C,H,W], weight [K,C,kh,kw], optional bias [K]. Output is
/// [N,K,H',W'] with H' = floor((H + 2*padding - kh) / stride) + 1.
/// Lowered per sample to a [C*kh*kw, H'*W'] patch matrix and one GEMM.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  using detail::require;
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [K,C,kh,kw], got " + shape_str(weight.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  require(weight.dim(1) == C, "conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                                  std::to_string(weight.dim(1)));
  require(KH <= H + 2 * padding && KW <= W + 2 * padding, "conv2d: kernel larger than padded input");
  if (bias.defined()) require(bias.size() == K, "conv2d: bias must have K entries");
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;
  const std::size_t CK = C * KH * KW, P = OH * OW;
  const auto Pad = static_cast<std::ptrdiff_t>(padding);
  const auto S = static_cast<std::ptrdiff_t>(stride);

  // Visits every (patch row, output position, input offset) triple inside the
  // image; padded taps are skipped.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < KH; ++ky)
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const std::size_t r = (c * KH + ky) * KW + kx;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * S + static_cast<std::ptrdiff_t>(ky) - Pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * S + static_cast<std::ptrdiff_t>(kx) - Pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              fn(r * P + oy * OW + ox, (c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix));
            }
          }
        }
  };

  auto cols = std::make_shared<std::vector<T>>(N * CK * P, T{0});
  std::vector<T> out(N * K * P);
  const auto& x = input.values();
  const auto Wm = detail::cmat<T>(weight.values().data(), K, CK);
  parallel_for(N, [&](std::size_t n) {
    T* col = cols->data() + n * CK * P;
    const T* xin = x.data() + n * C * H * W;
    for_each_tap([&](std::size_t ci, std::size_t xi) { col[ci] = xin[xi]; });
    auto Y = detail::mat<T>(out.data() + n * K * P, K, P);
    Y.noalias() = Wm * detail::cmat<T>(col, CK, P);
    if (bias.defined())
      for (std::size_t k = 0; k < K; ++k) Y.row(k).array() += bias.values()[k];
  });

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::from_op(
      "conv2d", {N, K, OH, OW}, std::move(out), parents,
      [=](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const auto& dy = self.grad;
        if (auto* dx = detail::grad_of(xn)) {
          const auto Wt = detail::cmat<T>(wn.value.data(), K, CK).transpose();
          parallel_for(N, [&](std::size_t n) {
            detail::Matrix<T> dcol = Wt * detail::cmat<T>(dy.data() + n * K * P, K, P);
            T* dxin = dx->data() + n * C * H * W;
            const T* dc = dcol.data();
            for_each_tap([&](std::size_t ci, std::size_t xi) { dxin[xi] += dc[ci]; });
          });
        }
        if (auto* dw = detail::grad_of(wn)) {
          auto dW = detail::mat<T>(dw->data(), K, CK);
          for (std::size_t n = 0; n < N; ++n)
            dW.noalias() += detail::cmat<T>(dy.data() + n * K * P, K, P) *
                            detail::cmat<T>(cols->data() + n * CK * P, CK, P).transpose();
        }
        if (self.parents.size() > 2) {
          if (auto* db = detail::grad_of(*self.parents[2])) {
            for (std::size_t k = 0; k < K; ++k) {
              T acc = 0;
              for (std::size_t n = 0; n < N; ++n) {
                const T* g = &dy[((n * K) + k) * P];
                for (std::size_t i = 0; i < P; ++i) acc += g[i];
              }
              (*db)[k] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride, std::size_t padding) {
  return conv2d(input, weight, Tensor<T>{}, stride, padding);
}

/// Max-Feature-Map: splits dimension 1 into halves and keeps the elementwise
/// maximum. Works on [N,2k] feature rows and [N,2k,H,W] feature maps. Ties go
/// to the first half.
template <typename T>
Tensor<T> mfm(const Tensor<T>& input) {
  detail::require(input.rank() >= 2, "mfm: input must have a channel dimension");
  const std::size_t channels = input.dim(1);
  detail::require(channels % 2 == 0, "mfm: channel count must be even, got " + std::to_string(channels));
  const std::size_t N = input.dim(0), half = channels / 2;
  std::size_t inner = 1;
  for (std::size_t i = 2; i < input.rank(); ++i) inner *= input.dim(i);
  Shape out_shape = input.shape();
  out_shape[1] = half;

  const auto& x = input.values();
  std::vector<T> out(N * half * inner);
  std::vector<unsigned char> second(out.size());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < half; ++c)
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t o = (n * half + c) * inner + r;
        const T a = x[(n * channels + c) * inner + r];
        const T b = x[(n * channels + c + half) * inner + r];
        second[o] = b > a;
        out[o] = second[o] ? b : a;
      }
  return Tensor<T>::from_op("mfm", out_shape, std::move(out), {input},
                            [=, second = std::move(second)](Node<T>& self) {
                              auto* dx = detail::grad_of(*self.parents[0]);
                              if (!dx) return;
                              for (std::size_t n = 0; n < N; ++n)
                                for (std::size_t c = 0; c < half; ++c)
                                  for (std::size_t r = 0; r < inner; ++r) {
                                    const std::size_t o = (n * half + c) * inner + r;
                                    const std::size_t src = c + (second[o] ? half : 0);
                                    (*dx)[(n * channels + src) * inner + r] += self.grad[o];
                                  }
                            });
}

/// Non-overlapping or strided max pooling on [N,C,H,W] without padding.
/// The gradient goes to the first maximum in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  detail::require(input.rank() == 4, "max_pool2d: input must be [N,C,H,W]");
  detail::require(window >= 1 && stride >= 1, "max_pool2d: window and stride must be >= 1");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  detail::require(window <= H && window <= W, "max_pool2d: window " + std::to_string(window) +
                                                  " larger than input " + shape_str(input.shape()));
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  const auto& x = input.values();
  std::vector<T> out(N * C * OH * OW);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < N * C; ++p) {
    const T* plane = &x[p * H * W];
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = oy * stride * W + ox * stride;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (oy * stride + dy) * W + ox * stride + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (p * OH + oy) * OW + ox;
        out[o] = plane[best];
        arg[o] = p * H * W + best;
      }
  }
  return Tensor<T>::from_op("max_pool2d", {N, C, OH, OW}, std::move(out), {input},
                            [arg = std::move(arg)](Node<T>& self) {
                              auto* dx = detail::grad_of(*self.parents[0]);
                              if (!dx) return;
                              for (std::size_t o = 0; o < arg.size(); ++o) (*dx)[arg[o]] += self.grad[o];
                            });
}

/// input [N,D] times weight [D,E] plus optional bias [E].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using detail::require;
  require(input.rank() == 2, "fully_connected: input must be [N,D], got " + shape_str(input.shape()));
  require(weight.rank() == 2, "fully_connected: weight must be [D,E]");
  const std::size_t N = input.dim(0), D = input.dim(1), E = weight.dim(1);
  require(weight.dim(0) == D, "fully_connected: inner dimensions differ: input " + shape_str(input.shape()) +
                                  " weight " + shape_str(weight.shape()));
  if (bias.defined()) require(bias.size() == E, "fully_connected: bias must have E entries");
  std::vector<T> out(N * E);
  const auto Wm = detail::cmat<T>(weight.values().data(), D, E);
  const T* x = input.values().data();
  // Row blocks have a fixed size so the arithmetic never depends on the
  // thread count.
  const std::size_t blocks = (N + detail::kRowBlock - 1) / detail::kRowBlock;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t lo = b * detail::kRowBlock, rows = std::min(detail::kRowBlock, N - lo);
    auto Y = detail::mat<T>(out.data() + lo * E, rows, E);
    Y.noalias() = detail::cmat<T>(x + lo * D, rows, D) * Wm;
    if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values().data(), static_cast<Eigen::Index>(E));
  });
  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor<T>::from_op(
      "fully_connected", {N, E}, std::move(out), parents, [=](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const auto& dy = self.grad;
        if (auto* dx = detail::grad_of(xn)) {
          const auto Wt = detail::cmat<T>(wn.value.data(), D, E).transpose();
          parallel_for(blocks, [&](std::size_t b) {
            const std::size_t lo = b * detail::kRowBlock, rows = std::min(detail::kRowBlock, N - lo);
            detail::mat<T>(dx->data() + lo * D, rows, D).noalias() +=
                detail::cmat<T>(dy.data() + lo * E, rows, E) * Wt;
          });
        }
        if (auto* dw = detail::grad_of(wn))
          detail::mat<T>(dw->data(), D, E).noalias() +=
              detail::cmat<T>(xn.value.data(), N, D).transpose() * detail::cmat<T>(dy.data(), N, E);
        if (self.parents.size() > 2) {
          if (auto* db = detail::grad_of(*self.parents[2]))
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t e = 0; e < E; ++e) (*db)[e] += dy[n * E + e];
        }
      });
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight) {
  return fully_connected(input, weight, Tensor<T>{});
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
  detail::require(numel(shape) == input.size(),
                  "reshape: " + shape_str(input.shape()) + " cannot become " + shape_str(shape));
  return Tensor<T>::from_op("reshape", std::move(shape), input.values(), {input}, [](Node<T>& self) {
    if (auto* dx = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += self.grad[i];
  });
}

/// Flattens every dimension after the first: [N,...] -> [N,prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
  return reshape(input, {input.dim(0), input.size() / input.dim(0)});
}

/// Column-wise concatenation of [N,A] and [N,B] into [N,A+B].
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
                  "concat_cols: expected [N,A] and [N,B], got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::size_t N = a.dim(0), A = a.dim(1), B = b.dim(1);
  std::vector<T> out(N * (A + B));
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(&a.values()[n * A], A, &out[n * (A + B)]);
    std::copy_n(&b.values()[n * B], B, &out[n * (A + B) + A]);
  }
  return Tensor<T>::from_op("concat_cols", {N, A + B}, std::move(out), {a, b}, [=](Node<T>& self) {
    if (auto* da = detail::grad_of(*self.parents[0]))
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < A; ++i) (*da)[n * A + i] += self.grad[n * (A + B) + i];
    if (auto* db = detail::grad_of(*self.parents[1]))
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < B; ++i) (*db)[n * B + i] += self.grad[n * (A + B) + A + i];
  });
}

/// Gathers slices along the first dimension (indices may repeat).
template <typename T>
Tensor<T> select_rows(const Tensor<T>& input, const std::vector<std::size_t>& rows) {
  detail::require(!rows.empty(), "select_rows: empty index list");
  const std::size_t N = input.dim(0), stride = input.size() / N;
  for (auto r : rows) detail::require(r < N, "select_rows: index " + std::to_string(r) + " out of range");
  std::vector<T> out(rows.size() * stride);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(&input.values()[rows[i] * stride], stride, &out[i * stride]);
  Shape shape = input.shape();
  shape[0] = rows.size();
  return Tensor<T>::from_op("select_rows", shape, std::move(out), {input}, [=](Node<T>& self) {
    if (auto* dx = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < stride; ++j) (*dx)[rows[i] * stride + j] += self.grad[i * stride + j];
  });
}

/// sum_r weights[r] * terms[r] over same-shape terms; weights is a [R] tensor.
template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const Tensor<T>& weights) {
  detail::require(!terms.empty(), "weighted_sum: no terms");
  detail::require(weights.size() == terms.size(), "weighted_sum: " + std::to_string(terms.size()) +
                                                      " terms but " + std::to_string(weights.size()) + " weights");
  const Shape shape = terms.front().shape();
  for (const auto& t : terms) detail::require(t.shape() == shape, "weighted_sum: term shapes differ");
  const std::size_t R = terms.size(), M = terms.front().size();
  std::vector<T> out(M, T{0});
  for (std::size_t r = 0; r < R; ++r) {
    const T a = weights.values()[r];
    const auto& v = terms[r].values();
    for (std::size_t i = 0; i < M; ++i) out[i] += a * v[i];
  }
  std::vector<Tensor<T>> parents(terms);
  parents.push_back(weights);
  return Tensor<T>::from_op("weighted_sum", shape, std::move(out), parents, [=](Node<T>& self) {
    auto& wn = *self.parents[R];
    for (std::size_t r = 0; r < R; ++r) {
      auto& tn = *self.parents[r];
      if (auto* dt = detail::grad_of(tn)) {
        const T a = wn.value[r];
        for (std::size_t i = 0; i < M; ++i) (*dt)[i] += a * self.grad[i];
      }
    }
    if (auto* dw = detail::grad_of(wn))
      for (std::size_t r = 0; r < R; ++r) {
        T acc = 0;
        const auto& v = self.parents[r]->value;
        for (std::size_t i = 0; i < M; ++i) acc += v[i] * self.grad[i];
        (*dw)[r] += acc;
      }
  });
}

/// Row-wise cosine similarity of [N,D] tensors, giving [N].
/// Throws std::domain_error on a zero-norm row.
template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && a.shape() == b.shape(),
                  "cosine_rows: expected equal [N,D] shapes, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::size_t N = a.dim(0), D = a.dim(1);
  std::vector<T> out(N), na(N), nb(N);
  for (std::size_t n = 0; n < N; ++n) {
    T dot = 0, sa = 0, sb = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const T x = a.values()[n * D + d], y = b.values()[n * D + d];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    if (!(sa > T{0}) || !(sb > T{0}))
      throw std::domain_error("cosine similarity of a zero-norm vector (row " + std::to_string(n) + ")");
    na[n] = std::sqrt(sa);
    nb[n] = std::sqrt(sb);
    out[n] = dot / (na[n] * nb[n]);
  }
  std::vector<T> cs = out;
  return Tensor<T>::from_op("cosine_rows", {N}, std::move(out), {a, b},
                            [=, cs = std::move(cs)](Node<T>& self) {
                              auto& an = *self.parents[0];
                              auto& bn = *self.parents[1];
                              auto* da = detail::grad_of(an);
                              auto* db = detail::grad_of(bn);
                              for (std::size_t n = 0; n < N; ++n) {
                                const T g = self.grad[n];
                                const T inv = T{1} / (na[n] * nb[n]);
                                for (std::size_t d = 0; d < D; ++d) {
                                  const T x = an.value[n * D + d], y = bn.value[n * D + d];
                                  if (da) (*da)[n * D + d] += g * (y * inv - cs[n] * x / (na[n] * na[n]));
                                  if (db) (*db)[n * D + d] += g * (x * inv - cs[n] * y / (nb[n] * nb[n]));
                                }
                              }
                            });
}

/// Divides each row of [N,D] by its Euclidean norm.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& input) {
  detail::require(input.rank() == 2, "l2_normalize_rows: input must be [N,D]");
  const std::size_t N = input.dim(0), D = input.dim(1);
  std::vector<T> out(N * D), norms(N);
  for (std::size_t n = 0; n < N; ++n) {
    T s = 0;
    for (std::size_t d = 0; d < D; ++d) s += input.values()[n * D + d] * input.values()[n * D + d];
    if (!(s > T{0})) throw std::domain_error("l2 normalization of a zero vector (row " + std::to_string(n) + ")");
    norms[n] = std::sqrt(s);
    for (std::size_t d = 0; d < D; ++d) out[n * D + d] = input.values()[n * D + d] / norms[n];
  }
  std::vector<T> y = out;
  return Tensor<T>::from_op("l2_normalize_rows", {N, D}, std::move(out), {input},
                            [=, y = std::move(y)](Node<T>& self) {
                              auto* dx = detail::grad_of(*self.parents[0]);
                              if (!dx) return;
                              for (std::size_t n = 0; n < N; ++n) {
                                T dot = 0;
                                for (std::size_t d = 0; d < D; ++d) dot += self.grad[n * D + d] * y[n * D + d];
                                for (std::size_t d = 0; d < D; ++d)
                                  (*dx)[n * D + d] += (self.grad[n * D + d] - dot * y[n * D + d]) / norms[n];
                              }
                            });
}

namespace detail {
template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary_elementwise(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd f, Da dfa, Db dfb) {
  require(a.shape() == b.shape(),
          std::string(name) + ": shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i], b.values()[i]);
  return Tensor<T>::from_op(name, a.shape(), std::move(out), {a, b}, [=](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (auto* da = grad_of(an))
      for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += self.grad[i] * dfa(an.value[i], bn.value[i]);
    if (auto* db = grad_of(bn))
      for (std::size_t i = 0; i < db->size(); ++i) (*db)[i] += self.grad[i] * dfb(an.value[i], bn.value[i]);
  });
}

template <typename T, typename Fwd, typename Df>
Tensor<T> unary_elementwise(const char* name, const Tensor<T>& a, Fwd f, Df df) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
  return Tensor<T>::from_op(name, a.shape(), std::move(out), {a}, [=](Node<T>& self) {
    auto& an = *self.parents[0];
    if (auto* da = grad_of(an))
      for (std::size_t i = 0; i < da->size(); ++i) (*da)[i] += self.grad[i] * df(an.value[i]);
  });
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

/// Elementwise product. Passing a tensor without requires_grad as one side
/// makes it a constant weight (no gradient flows into it).
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.values())
    if (v == T{0}) throw std::domain_error("div: division by zero");
  return detail::binary_elementwise(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary_elementwise("add_scalar", a, [c](T x) { return x + c; }, [](T) { return T{1}; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  return detail::unary_elementwise("mul_scalar", a, [c](T x) { return x * c; }, [c](T) { return c; });
}

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
Tensor<T> hinge(const Tensor<T>& a) {
  return detail::unary_elementwise(
      "hinge", a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return Tensor<T>::from_op("sum", {1}, {s}, {a}, [](Node<T>& self) {
    if (auto* da = detail::grad_of(*self.parents[0]))
      for (auto& g : *da) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T{1} / static_cast<T>(a.size()));
}

/// Mean softmax cross-entropy of logits [N,K] against class indices.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  detail::require(logits.rank() == 2, "cross_entropy: logits must be [N,K]");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  detail::require(labels.size() == N, "cross_entropy: label count differs from batch size");
  for (auto l : labels)
    if (l >= K) throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " >= " + std::to_string(K));
  std::vector<T> prob(N * K);
  T total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* z = &logits.values()[n * K];
    T mx = *std::max_element(z, z + K);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      prob[n * K + k] = std::exp(z[k] - mx);
      s += prob[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) prob[n * K + k] /= s;
    total += std::log(s) + mx - z[labels[n]];
  }
  return Tensor<T>::from_op("cross_entropy", {1}, {total / static_cast<T>(N)}, {logits},
                            [=, prob = std::move(prob)](Node<T>& self) {
                              auto* dz = detail::grad_of(*self.parents[0]);
                              if (!dz) return;
                              const T g = self.grad[0] / static_cast<T>(N);
                              for (std::size_t n = 0; n < N; ++n)
                                for (std::size_t k = 0; k < K; ++k)
                                  (*dz)[n * K + k] += g * (prob[n * K + k] - (k == labels[n] ? T{1} : T{0}));
                            });
}

}  // namespace pram
