#include <algorithm>
#include <vector>

#include "twoview/kernels.hpp"

namespace twoview::kernels {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  const int oc_n = g.out_c;
  const int ic_n = g.in_c;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        T* acc = &out[((std::size_t(b) * g.out_h + oy) * g.out_w + ox) * oc_n];
        for (int oc = 0; oc < oc_n; ++oc) acc[oc] = bias[oc];
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride + ky - g.padding;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride + kx - g.padding;
            if (ix < 0 || ix >= g.in_w) continue;
            const T* src = &in[((std::size_t(b) * g.in_h + iy) * g.in_w + ix) * ic_n];
            const T* w = &weight[(std::size_t(ky) * g.kernel + kx) * ic_n * oc_n];
            for (int ic = 0; ic < ic_n; ++ic) {
              const T v = src[ic];
              const T* wrow = w + std::size_t(ic) * oc_n;
#pragma omp simd
              for (int oc = 0; oc < oc_n; ++oc) acc[oc] += v * wrow[oc];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  const int oc_n = g.out_c;
  const int ic_n = g.in_c;
  const int k = g.kernel;
  // [ky][kx][oc][ic] copy so the innermost loop runs over contiguous ic.
  std::vector<T> wt(weight.size());
  for (int kk = 0; kk < k * k; ++kk) {
    for (int ic = 0; ic < ic_n; ++ic) {
      for (int oc = 0; oc < oc_n; ++oc) {
        wt[(std::size_t(kk) * oc_n + oc) * ic_n + ic] = weight[(std::size_t(kk) * ic_n + ic) * oc_n + oc];
      }
    }
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    for (int iy = 0; iy < g.in_h; ++iy) {
      for (int ix = 0; ix < g.in_w; ++ix) {
        T* acc = &grad_in[((std::size_t(b) * g.in_h + iy) * g.in_w + ix) * ic_n];
        std::fill(acc, acc + ic_n, T(0));
        for (int ky = 0; ky < k; ++ky) {
          const int ny = iy + g.padding - ky;
          if (ny < 0 || ny % g.stride != 0) continue;
          const int oy = ny / g.stride;
          if (oy >= g.out_h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int nx = ix + g.padding - kx;
            if (nx < 0 || nx % g.stride != 0) continue;
            const int ox = nx / g.stride;
            if (ox >= g.out_w) continue;
            const T* go = &grad_out[((std::size_t(b) * g.out_h + oy) * g.out_w + ox) * oc_n];
            const T* w = &wt[(std::size_t(ky) * k + kx) * oc_n * ic_n];
            for (int oc = 0; oc < oc_n; ++oc) {
              const T gv = go[oc];
              if (gv == T(0)) continue;
              const T* wrow = w + std::size_t(oc) * ic_n;
#pragma omp simd
              for (int ic = 0; ic < ic_n; ++ic) acc[ic] += gv * wrow[ic];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  const int oc_n = g.out_c;
  const int ic_n = g.in_c;
  const int k = g.kernel;
  const int tasks = k * k * ic_n;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < tasks; ++t) {
    const int ic = t % ic_n;
    const int kx = (t / ic_n) % k;
    const int ky = t / (ic_n * k);
    T* acc = &grad_weight[std::size_t(t) * oc_n];
    std::fill(acc, acc + oc_n, T(0));
    for (int b = 0; b < g.batch; ++b) {
      for (int oy = 0; oy < g.out_h; ++oy) {
        const int iy = oy * g.stride + ky - g.padding;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int ox = 0; ox < g.out_w; ++ox) {
          const int ix = ox * g.stride + kx - g.padding;
          if (ix < 0 || ix >= g.in_w) continue;
          const T v = in[((std::size_t(b) * g.in_h + iy) * g.in_w + ix) * ic_n + ic];
          if (v == T(0)) continue;
          const T* go = &grad_out[((std::size_t(b) * g.out_h + oy) * g.out_w + ox) * oc_n];
#pragma omp simd
          for (int oc = 0; oc < oc_n; ++oc) acc[oc] += v * go[oc];
        }
      }
    }
  }
  std::fill(grad_bias.begin(), grad_bias.end(), T(0));
  const std::size_t pixels = std::size_t(g.batch) * g.out_h * g.out_w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* go = &grad_out[p * oc_n];
#pragma omp simd
    for (int oc = 0; oc < oc_n; ++oc) grad_bias[oc] += go[oc];
  }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out) {
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    T* acc = &out[std::size_t(b) * g.out];
    const T* x = &in[std::size_t(b) * g.in];
    for (int o = 0; o < g.out; ++o) acc[o] = bias[o];
    for (int i = 0; i < g.in; ++i) {
      const T v = x[i];
      if (v == T(0)) continue;
      const T* wrow = &weight[std::size_t(i) * g.out];
#pragma omp simd
      for (int o = 0; o < g.out; ++o) acc[o] += v * wrow[o];
    }
  }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in) {
  std::vector<T> wt(weight.size());
  for (int i = 0; i < g.in; ++i) {
    for (int o = 0; o < g.out; ++o) wt[std::size_t(o) * g.in + i] = weight[std::size_t(i) * g.out + o];
  }
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    T* acc = &grad_in[std::size_t(b) * g.in];
    const T* go = &grad_out[std::size_t(b) * g.out];
    std::fill(acc, acc + g.in, T(0));
    for (int o = 0; o < g.out; ++o) {
      const T gv = go[o];
      if (gv == T(0)) continue;
      const T* wrow = &wt[std::size_t(o) * g.in];
#pragma omp simd
      for (int i = 0; i < g.in; ++i) acc[i] += gv * wrow[i];
    }
  }
}

template <typename T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < g.in; ++i) {
    T* acc = &grad_weight[std::size_t(i) * g.out];
    std::fill(acc, acc + g.out, T(0));
    for (int b = 0; b < g.batch; ++b) {
      const T v = in[std::size_t(b) * g.in + i];
      if (v == T(0)) continue;
      const T* go = &grad_out[std::size_t(b) * g.out];
#pragma omp simd
      for (int o = 0; o < g.out; ++o) acc[o] += v * go[o];
    }
  }
  std::fill(grad_bias.begin(), grad_bias.end(), T(0));
  for (int b = 0; b < g.batch; ++b) {
    const T* go = &grad_out[std::size_t(b) * g.out];
    for (int o = 0; o < g.out; ++o) grad_bias[o] += go[o];
  }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::int32_t> argmax) {
  const int c_n = g.channels;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      const T* sample = &in[std::size_t(b) * g.in_h * g.in_w * c_n];
      for (int ox = 0; ox < g.out_w; ++ox) {
        const std::size_t o = ((std::size_t(b) * g.out_h + oy) * g.out_w + ox) * c_n;
        T* o_val = &out[o];
        std::int32_t* o_arg = &argmax[o];
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride + ky;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride + kx;
            const auto base = static_cast<std::int32_t>((iy * g.in_w + ix) * c_n);
            const T* v = sample + base;
            if (ky == 0 && kx == 0) {
              for (int c = 0; c < c_n; ++c) {
                o_val[c] = v[c];
                o_arg[c] = base + c;
              }
              continue;
            }
#pragma omp simd
            for (int c = 0; c < c_n; ++c) {
              if (v[c] > o_val[c]) {
                o_val[c] = v[c];
                o_arg[c] = base + c;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::int32_t> argmax,
                      std::span<T> grad_in) {
  const std::size_t in_per = std::size_t(g.in_h) * g.in_w * g.channels;
  const std::size_t out_per = std::size_t(g.out_h) * g.out_w * g.channels;
  // Windows may overlap, so each sample is scattered by a single thread.
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.batch; ++b) {
    T* gi = &grad_in[std::size_t(b) * in_per];
    std::fill(gi, gi + in_per, T(0));
    const std::size_t base = std::size_t(b) * out_per;
    for (std::size_t o = 0; o < out_per; ++o) gi[argmax[base + o]] += grad_out[base + o];
  }
}

#define TWOVIEW_INSTANTIATE(T)                                                                                       \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                                                     \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_backward_params<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,              \
                                          std::span<T>, std::span<T>);                                               \
  template void dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                 std::span<T>);                                                                      \
  template void dense_backward_input<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void dense_backward_params<T>(const DenseGeometry&, std::span<const T>, std::span<const T>, std::span<T>, \
                                         std::span<T>);                                                              \
  template void maxpool_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>, std::span<std::int32_t>); \
  template void maxpool_backward<T>(const PoolGeometry&, std::span<const T>, std::span<const std::int32_t>,         \
                                    std::span<T>);

TWOVIEW_INSTANTIATE(float)
TWOVIEW_INSTANTIATE(double)

}  // namespace twoview::kernels
