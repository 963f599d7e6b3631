#include <algorithm>

#include "twoview/kernels.hpp"

namespace twoview::kernels::reference {

namespace {

std::size_t nhwc(int b, int y, int x, int c, int h, int w, int channels) {
  return ((std::size_t(b) * h + y) * w + x) * channels + c;
}

std::size_t hwio(int ky, int kx, int ic, int oc, int k, int in_c, int out_c) {
  return ((std::size_t(ky) * k + kx) * in_c + ic) * out_c + oc;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox)
        for (int oc = 0; oc < g.out_c; ++oc) {
          T sum = bias[oc];
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = oy * g.stride + ky - g.padding;
              const int ix = ox * g.stride + kx - g.padding;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int ic = 0; ic < g.in_c; ++ic)
                sum += in[nhwc(b, iy, ix, ic, g.in_h, g.in_w, g.in_c)] *
                       weight[hwio(ky, kx, ic, oc, g.kernel, g.in_c, g.out_c)];
            }
          out[nhwc(b, oy, ox, oc, g.out_h, g.out_w, g.out_c)] = sum;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), T(0));
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox)
        for (int oc = 0; oc < g.out_c; ++oc) {
          const T go = grad_out[nhwc(b, oy, ox, oc, g.out_h, g.out_w, g.out_c)];
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = oy * g.stride + ky - g.padding;
              const int ix = ox * g.stride + kx - g.padding;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int ic = 0; ic < g.in_c; ++ic)
                grad_in[nhwc(b, iy, ix, ic, g.in_h, g.in_w, g.in_c)] +=
                    go * weight[hwio(ky, kx, ic, oc, g.kernel, g.in_c, g.out_c)];
            }
        }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias) {
  std::fill(grad_weight.begin(), grad_weight.end(), T(0));
  std::fill(grad_bias.begin(), grad_bias.end(), T(0));
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox)
        for (int oc = 0; oc < g.out_c; ++oc) {
          const T go = grad_out[nhwc(b, oy, ox, oc, g.out_h, g.out_w, g.out_c)];
          grad_bias[oc] += go;
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = oy * g.stride + ky - g.padding;
              const int ix = ox * g.stride + kx - g.padding;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              for (int ic = 0; ic < g.in_c; ++ic)
                grad_weight[hwio(ky, kx, ic, oc, g.kernel, g.in_c, g.out_c)] +=
                    go * in[nhwc(b, iy, ix, ic, g.in_h, g.in_w, g.in_c)];
            }
        }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out) {
  for (int b = 0; b < g.batch; ++b)
    for (int o = 0; o < g.out; ++o) {
      T sum = bias[o];
      for (int i = 0; i < g.in; ++i) sum += in[std::size_t(b) * g.in + i] * weight[std::size_t(i) * g.out + o];
      out[std::size_t(b) * g.out + o] = sum;
    }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in) {
  for (int b = 0; b < g.batch; ++b)
    for (int i = 0; i < g.in; ++i) {
      T sum = 0;
      for (int o = 0; o < g.out; ++o) sum += grad_out[std::size_t(b) * g.out + o] * weight[std::size_t(i) * g.out + o];
      grad_in[std::size_t(b) * g.in + i] = sum;
    }
}

template <typename T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias) {
  for (int i = 0; i < g.in; ++i)
    for (int o = 0; o < g.out; ++o) {
      T sum = 0;
      for (int b = 0; b < g.batch; ++b) sum += in[std::size_t(b) * g.in + i] * grad_out[std::size_t(b) * g.out + o];
      grad_weight[std::size_t(i) * g.out + o] = sum;
    }
  for (int o = 0; o < g.out; ++o) {
    T sum = 0;
    for (int b = 0; b < g.batch; ++b) sum += grad_out[std::size_t(b) * g.out + o];
    grad_bias[o] = sum;
  }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::int32_t> argmax) {
  for (int b = 0; b < g.batch; ++b)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox)
        for (int c = 0; c < g.channels; ++c) {
          std::int32_t best = -1;
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const auto off = static_cast<std::int32_t>(((oy * g.stride + ky) * g.in_w + ox * g.stride + kx) * g.channels + c);
              const std::size_t base = std::size_t(b) * g.in_h * g.in_w * g.channels;
              if (best < 0 || in[base + off] > in[base + best]) best = off;
            }
          const std::size_t o = nhwc(b, oy, ox, c, g.out_h, g.out_w, g.channels);
          out[o] = in[std::size_t(b) * g.in_h * g.in_w * g.channels + best];
          argmax[o] = best;
        }
}

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::int32_t> argmax,
                      std::span<T> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), T(0));
  const std::size_t in_per = std::size_t(g.in_h) * g.in_w * g.channels;
  const std::size_t out_per = std::size_t(g.out_h) * g.out_w * g.channels;
  for (int b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < out_per; ++o) grad_in[b * in_per + argmax[b * out_per + o]] += grad_out[b * out_per + o];
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

}  // namespace twoview::kernels::reference
