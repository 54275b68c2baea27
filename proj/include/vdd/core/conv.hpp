#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "vdd/core/autodiff.hpp"
#include "vdd/core/blas.hpp"
#include "vdd/core/tensor.hpp"

// Convolution, nearest-neighbor upsampling and batch normalization over NHWC
// tensors. Convolutions lower to GEMM over im2col patches, processed in row
// tiles through a reused scratch buffer: materializing the full patch matrix
// is memory-bound at training scale, so patches are regenerated per tile in
// backward instead of cached.
namespace vdd::ops {

namespace detail {

// Patch rows [row_begin, row_begin + n) of the im2col matrix, where a row
// index r decomposes as (b * Ho + oh) * Wo + ow.
template <typename T>
void im2col_rows(const Tensor<T>& x, int64_t k, int64_t stride, int64_t pad, int64_t ho,
                 int64_t wo, int64_t row_begin, int64_t n, T* cols) {
  const int64_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const T* px = x.data();
  for (int64_t r = 0; r < n; ++r) {
    const int64_t global = row_begin + r;
    const int64_t ow = global % wo;
    const int64_t oh = (global / wo) % ho;
    const int64_t bi = global / (wo * ho);
    T* row = cols + r * k * k * c;
    for (int64_t kh = 0; kh < k; ++kh) {
      const int64_t ih = oh * stride - pad + kh;
      for (int64_t kw = 0; kw < k; ++kw) {
        const int64_t iw = ow * stride - pad + kw;
        T* dst = row + (kh * k + kw) * c;
        if (ih < 0 || ih >= h || iw < 0 || iw >= w) {
          std::fill_n(dst, c, T(0));
        } else {
          std::copy_n(px + ((bi * h + ih) * w + iw) * c, c, dst);
        }
      }
    }
  }
}

template <typename T>
void col2im_rows(const T* cols, int64_t k, int64_t stride, int64_t pad, int64_t ho, int64_t wo,
                 int64_t row_begin, int64_t n, Tensor<T>& dx) {
  const int64_t h = dx.dim(1), w = dx.dim(2), c = dx.dim(3);
  T* px = dx.data();
  for (int64_t r = 0; r < n; ++r) {
    const int64_t global = row_begin + r;
    const int64_t ow = global % wo;
    const int64_t oh = (global / wo) % ho;
    const int64_t bi = global / (wo * ho);
    const T* row = cols + r * k * k * c;
    for (int64_t kh = 0; kh < k; ++kh) {
      const int64_t ih = oh * stride - pad + kh;
      if (ih < 0 || ih >= h) continue;
      for (int64_t kw = 0; kw < k; ++kw) {
        const int64_t iw = ow * stride - pad + kw;
        if (iw < 0 || iw >= w) continue;
        const T* src = row + (kh * k + kw) * c;
        T* dst = px + ((bi * h + ih) * w + iw) * c;
        for (int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
      }
    }
  }
}

template <typename T>
Tensor<T>& conv_scratch() {
  static thread_local Tensor<T> buf;
  return buf;
}

// Rows per tile, sized to keep the patch slab around a few MB.
inline int64_t conv_tile_rows(int64_t rows, int64_t patch) {
  const int64_t budget = (1 << 22) / static_cast<int64_t>(sizeof(float));  // 4 MB
  return std::clamp<int64_t>(budget / patch, 256, rows);
}

}  // namespace detail

// x: [B, H, W, Cin]; weight: [k*k*Cin, Cout]; bias: [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int64_t k,
              int64_t stride, int64_t pad) {
  const int64_t b = x.val().dim(0), h = x.val().dim(1), w = x.val().dim(2), cin = x.val().dim(3);
  const int64_t cout = weight.val().dim(1);
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (w + 2 * pad - k) / stride + 1;
  const int64_t rows = b * ho * wo;
  const int64_t patch = k * k * cin;
  assert(weight.val().dim(0) == patch);
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  Tensor<T> out = Tensor<T>::uninit({b, ho, wo, cout});
  T* po = out.data();
  const T* pb = bias.val().data();
  for (int64_t r = 0; r < rows; ++r) std::copy_n(pb, cout, po + r * cout);

  if (pointwise) {
    blas::gemm(false, false, static_cast<int>(rows), static_cast<int>(cout),
               static_cast<int>(patch), T(1), x.val().data(), static_cast<int>(patch),
               weight.val().data(), static_cast<int>(cout), T(1), po, static_cast<int>(cout));
  } else {
    Tensor<T>& cols = detail::conv_scratch<T>();
    const int64_t tile = detail::conv_tile_rows(rows, patch);
    if (cols.numel() < tile * patch) cols = Tensor<T>::uninit({tile, patch});
    for (int64_t begin = 0; begin < rows; begin += tile) {
      const int64_t n = std::min(tile, rows - begin);
      detail::im2col_rows(x.val(), k, stride, pad, ho, wo, begin, n, cols.data());
      blas::gemm(false, false, static_cast<int>(n), static_cast<int>(cout),
                 static_cast<int>(patch), T(1), cols.data(), static_cast<int>(patch),
                 weight.val().data(), static_cast<int>(cout), T(1), po + begin * cout,
                 static_cast<int>(cout));
    }
  }

  return make_op<T>(
      std::move(out), {x, weight, bias},
      [k, stride, pad, b, ho, wo, rows, patch, cout, pointwise](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pbb = self.parents[2];
        const T* g = self.grad.data();
        if (pbb->requires_grad) {
          pbb->ensure_grad();
          T* db = pbb->grad.data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < cout; ++j) db[j] += g[r * cout + j];
        }
        if (pointwise) {
          if (pw->requires_grad) {
            pw->ensure_grad();
            blas::gemm(true, false, static_cast<int>(patch), static_cast<int>(cout),
                       static_cast<int>(rows), T(1), px->value.data(), static_cast<int>(patch),
                       g, static_cast<int>(cout), T(1), pw->grad.data(),
                       static_cast<int>(cout));
          }
          if (px->requires_grad) {
            px->ensure_grad();
            blas::gemm(false, true, static_cast<int>(rows), static_cast<int>(patch),
                       static_cast<int>(cout), T(1), g, static_cast<int>(cout),
                       pw->value.data(), static_cast<int>(cout), T(1), px->grad.data(),
                       static_cast<int>(patch));
          }
          return;
        }

        Tensor<T>& cols = detail::conv_scratch<T>();
        const int64_t tile = detail::conv_tile_rows(rows, patch);
        if (cols.numel() < tile * patch) cols = Tensor<T>::uninit({tile, patch});
        Tensor<T> dcols = Tensor<T>::uninit({tile, patch});
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        for (int64_t begin = 0; begin < rows; begin += tile) {
          const int64_t n = std::min(tile, rows - begin);
          if (pw->requires_grad) {
            detail::im2col_rows(px->value, k, stride, pad, ho, wo, begin, n, cols.data());
            blas::gemm(true, false, static_cast<int>(patch), static_cast<int>(cout),
                       static_cast<int>(n), T(1), cols.data(), static_cast<int>(patch),
                       g + begin * cout, static_cast<int>(cout), T(1), pw->grad.data(),
                       static_cast<int>(cout));
          }
          if (px->requires_grad) {
            blas::gemm(false, true, static_cast<int>(n), static_cast<int>(patch),
                       static_cast<int>(cout), T(1), g + begin * cout, static_cast<int>(cout),
                       pw->value.data(), static_cast<int>(cout), T(0), dcols.data(),
                       static_cast<int>(patch));
            detail::col2im_rows(dcols.data(), k, stride, pad, ho, wo, begin, n, px->grad);
          }
        }
        (void)b;
      });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const int64_t b = x.val().dim(0), h = x.val().dim(1), w = x.val().dim(2), c = x.val().dim(3);
  Tensor<T> out = Tensor<T>::uninit({b, 2 * h, 2 * w, c});
  const T* px = x.val().data();
  T* po = out.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T* src = px + ((bi * h + i) * w + j) * c;
        for (int64_t di = 0; di < 2; ++di)
          for (int64_t dj = 0; dj < 2; ++dj)
            std::copy_n(src, c, po + ((bi * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * c);
      }
  return make_op<T>(std::move(out), {x}, [b, h, w, c](Node<T>& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    T* dst = p->grad.data();
    const T* g = self.grad.data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          T* d = dst + ((bi * h + i) * w + j) * c;
          for (int64_t di = 0; di < 2; ++di)
            for (int64_t dj = 0; dj < 2; ++dj) {
              const T* s = g + ((bi * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * c;
              for (int64_t ci = 0; ci < c; ++ci) d[ci] += s[ci];
            }
        }
  });
}

template <typename T>
struct BatchNormState {
  std::shared_ptr<Tensor<T>> running_mean;
  std::shared_ptr<Tensor<T>> running_var;
};

// Batch normalization over the channel (last) axis of [B, H, W, C] or [B, C].
// Training mode normalizes with batch statistics computed over all rows, so a
// mixed multi-domain batch shares one set of statistics.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormState<T>& state, bool training, T momentum = T(0.1),
                 T eps = T(1e-5)) {
  const int64_t c = gamma.val().numel();
  const int64_t m = x.val().numel() / c;
  Tensor<T> out = Tensor<T>::uninit(x.val().shape());
  const T* px = x.val().data();
  T* po = out.data();
  const T* pg = gamma.val().data();
  const T* pb = beta.val().data();

  if (!training) {
    for (int64_t j = 0; j < c; ++j) {
      const T inv = T(1) / std::sqrt((*state.running_var)[j] + eps);
      const T sc = pg[j] * inv;
      const T sh = pb[j] - (*state.running_mean)[j] * sc;
      for (int64_t i = 0; i < m; ++i) po[i * c + j] = px[i * c + j] * sc + sh;
    }
    auto inv_cache = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
    for (int64_t j = 0; j < c; ++j)
      (*inv_cache)[j] = T(1) / std::sqrt((*state.running_var)[j] + eps);
    auto rm = std::make_shared<Tensor<T>>(*state.running_mean);
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [inv_cache, rm, m, c](Node<T>& self) {
                        auto& px2 = self.parents[0];
                        auto& pg2 = self.parents[1];
                        auto& pb2 = self.parents[2];
                        const T* g = self.grad.data();
                        if (px2->requires_grad) {
                          px2->ensure_grad();
                          T* dx = px2->grad.data();
                          for (int64_t j = 0; j < c; ++j) {
                            const T sc = pg2->value[j] * (*inv_cache)[j];
                            for (int64_t i = 0; i < m; ++i) dx[i * c + j] += g[i * c + j] * sc;
                          }
                        }
                        if (pg2->requires_grad) {
                          pg2->ensure_grad();
                          const T* xv = px2->value.data();
                          for (int64_t j = 0; j < c; ++j) {
                            T acc = T(0);
                            for (int64_t i = 0; i < m; ++i)
                              acc += g[i * c + j] * (xv[i * c + j] - (*rm)[j]) * (*inv_cache)[j];
                            pg2->grad[j] += acc;
                          }
                        }
                        if (pb2->requires_grad) {
                          pb2->ensure_grad();
                          for (int64_t j = 0; j < c; ++j) {
                            T acc = T(0);
                            for (int64_t i = 0; i < m; ++i) acc += g[i * c + j];
                            pb2->grad[j] += acc;
                          }
                        }
                      });
  }

  auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::uninit(x.val().shape()));
  auto invstd = std::make_shared<Tensor<T>>(std::vector<int64_t>{c});
  for (int64_t j = 0; j < c; ++j) {
    T mean = T(0);
    for (int64_t i = 0; i < m; ++i) mean += px[i * c + j];
    mean /= static_cast<T>(m);
    T var = T(0);
    for (int64_t i = 0; i < m; ++i) {
      const T d = px[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T inv = T(1) / std::sqrt(var + eps);
    (*invstd)[j] = inv;
    for (int64_t i = 0; i < m; ++i) {
      const T xh = (px[i * c + j] - mean) * inv;
      (*xhat)[i * c + j] = xh;
      po[i * c + j] = pg[j] * xh + pb[j];
    }
    (*state.running_mean)[j] = (T(1) - momentum) * (*state.running_mean)[j] + momentum * mean;
    const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
    (*state.running_var)[j] = (T(1) - momentum) * (*state.running_var)[j] + momentum * unbiased;
  }

  return make_op<T>(std::move(out), {x, gamma, beta}, [xhat, invstd, m, c](Node<T>& self) {
    auto& px2 = self.parents[0];
    auto& pg2 = self.parents[1];
    auto& pb2 = self.parents[2];
    const T* g = self.grad.data();
    const T* xh = xhat->data();
    for (int64_t j = 0; j < c; ++j) {
      T gsum = T(0), gxsum = T(0);
      for (int64_t i = 0; i < m; ++i) {
        gsum += g[i * c + j];
        gxsum += g[i * c + j] * xh[i * c + j];
      }
      if (pb2->requires_grad) {
        pb2->ensure_grad();
        pb2->grad[j] += gsum;
      }
      if (pg2->requires_grad) {
        pg2->ensure_grad();
        pg2->grad[j] += gxsum;
      }
      if (px2->requires_grad) {
        px2->ensure_grad();
        T* dx = px2->grad.data();
        const T gamma_j = pg2->value[j];
        const T inv = (*invstd)[j];
        const T mT = static_cast<T>(m);
        for (int64_t i = 0; i < m; ++i)
          dx[i * c + j] +=
              gamma_j * inv * (g[i * c + j] - gsum / mT - xh[i * c + j] * gxsum / mT);
      }
    }
  });
}

}  // namespace vdd::ops
