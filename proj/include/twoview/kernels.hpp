#pragma once

// Numeric kernels for the network layers. Activations are NHWC; convolution
// weights are [k][k][in_c][out_c]; dense weights are [in][out].
//
// twoview::kernels holds the OpenMP versions. Every output element is
// produced by exactly one thread with a fixed summation order, so results do
// not depend on the thread count. twoview::kernels::reference holds plain
// serial loops used as the test oracle and benchmark baseline.

#include <cstdint>
#include <span>

namespace twoview::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_h = 0, in_w = 0, in_c = 0;
  int out_h = 0, out_w = 0, out_c = 0;
  int kernel = 1, stride = 1, padding = 0;

  static int output_extent(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
  }
  std::size_t input_size() const { return std::size_t(batch) * in_h * in_w * in_c; }
  std::size_t output_size() const { return std::size_t(batch) * out_h * out_w * out_c; }
  std::size_t weight_size() const { return std::size_t(out_c) * kernel * kernel * in_c; }
};

struct DenseGeometry {
  int batch = 1;
  int in = 0;
  int out = 0;
};

struct PoolGeometry {
  int batch = 1;
  int in_h = 0, in_w = 0, channels = 0;
  int out_h = 0, out_w = 0;
  int kernel = 2, stride = 2;

  std::size_t input_size() const { return std::size_t(batch) * in_h * in_w * channels; }
  std::size_t output_size() const { return std::size_t(batch) * out_h * out_w * channels; }
};

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
// Overwrites grad_weight and grad_bias.
template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out);
template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in);
template <typename T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias);

// argmax receives, per output element, the flat per-sample input offset of
// the window maximum (first maximum in scan order on ties).
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::int32_t> argmax);
template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::int32_t> argmax,
                      std::span<T> grad_in);

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                           std::span<T> grad_in);
template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_weight, std::span<T> grad_bias);
template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out);
template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> grad_out, std::span<const T> weight,
                          std::span<T> grad_in);
template <typename T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> grad_out,
                           std::span<T> grad_weight, std::span<T> grad_bias);
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::int32_t> argmax);
template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::int32_t> argmax,
                      std::span<T> grad_in);

}  // namespace reference
}  // namespace twoview::kernels
