#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/matrix.hpp"

namespace modaladapt {

enum class Activation { kLinear, kSigmoid };

// Numerically stable logistic. Outputs are kept inside the open interval
// (0,1) even where exp() saturates, so downstream code may rely on
// y*(1-y) never being evaluated at exactly 0 or 1.
inline double sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  if (s >= 1.0) s = std::nextafter(1.0, 0.0);
  if (s <= 0.0) s = std::nextafter(0.0, 1.0);
  return s;
}

// Fully connected layer, weight is in_dim x out_dim.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;
  Activation activation = Activation::kSigmoid;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

inline DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, Activation act) {
  DenseLayer layer;
  layer.weight = Matrix(in_dim, out_dim);
  layer.bias.assign(out_dim, 0.0);
  layer.activation = act;
  return layer;
}

// Y = act(X * W + b). Accumulation over the input dimension runs in
// ascending order so results are bit-reproducible.
inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw std::invalid_argument("dense_forward: input has " + std::to_string(x.cols()) +
                                " cols but layer expects " + std::to_string(layer.in_dim()));
  }
  if (layer.bias.size() != layer.out_dim()) {
    throw std::invalid_argument("dense_forward: bias size " + std::to_string(layer.bias.size()) +
                                " does not match out_dim " + std::to_string(layer.out_dim()));
  }
  const std::size_t n = x.rows(), in = layer.in_dim(), out = layer.out_dim();
  Matrix y(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.row(r);
    for (std::size_t j = 0; j < out; ++j) yr[j] = layer.bias[j];
    const double* xr = x.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      const double* wk = layer.weight.row(k);
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
    }
    if (layer.activation == Activation::kSigmoid) {
      for (std::size_t j = 0; j < out; ++j) yr[j] = sigmoid(yr[j]);
    }
  }
  return y;
}

struct DenseGradients {
  Matrix d_input;
  Matrix d_weight;
  std::vector<double> d_bias;
};

namespace detail {

// Maps the upstream gradient through the activation. For sigmoid the chain
// term is y*(1-y) using the recorded forward output.
inline Matrix activation_backward(const DenseLayer& layer, const Matrix& y, const Matrix& d_out) {
  require_same_shape(y, d_out, "dense_backward");
  Matrix dz = d_out;
  if (layer.activation == Activation::kSigmoid) {
    double* d = dz.data();
    const double* yv = y.data();
    for (std::size_t i = 0; i < dz.size(); ++i) d[i] *= yv[i] * (1.0 - yv[i]);
  }
  return dz;
}

inline Matrix dense_backward_input(const DenseLayer& layer, const Matrix& dz) {
  const std::size_t n = dz.rows(), in = layer.in_dim(), out = layer.out_dim();
  Matrix dx(n, in);
  for (std::size_t r = 0; r < n; ++r) {
    const double* dzr = dz.row(r);
    double* dxr = dx.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double* wk = layer.weight.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < out; ++j) acc += dzr[j] * wk[j];
      dxr[k] = acc;
    }
  }
  return dx;
}

}  // namespace detail

// Analytic gradients of dense_forward. `y` must be the recorded forward
// output for `x` (needed for the sigmoid chain term).
inline DenseGradients dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& y,
                                     const Matrix& d_out) {
  if (x.cols() != layer.in_dim()) {
    throw std::invalid_argument("dense_backward: input has " + std::to_string(x.cols()) +
                                " cols but layer expects " + std::to_string(layer.in_dim()));
  }
  if (d_out.rows() != x.rows() || d_out.cols() != layer.out_dim()) {
    throw std::invalid_argument("dense_backward: upstream gradient is " + shape_str(d_out) +
                                ", expected " + std::to_string(x.rows()) + "x" +
                                std::to_string(layer.out_dim()));
  }
  const Matrix dz = detail::activation_backward(layer, y, d_out);
  const std::size_t n = x.rows(), in = layer.in_dim(), out = layer.out_dim();

  DenseGradients g;
  g.d_weight = Matrix(in, out);
  g.d_bias.assign(out, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.row(r);
    const double* dzr = dz.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      double* dwk = g.d_weight.row(k);
      for (std::size_t j = 0; j < out; ++j) dwk[j] += xv * dzr[j];
    }
    for (std::size_t j = 0; j < out; ++j) g.d_bias[j] += dzr[j];
  }
  g.d_input = detail::dense_backward_input(layer, dz);
  return g;
}

// Convenience overload that recomputes the forward output.
inline DenseGradients dense_backward(const DenseLayer& layer, const Matrix& x,
                                     const Matrix& d_out) {
  return dense_backward(layer, x, dense_forward(layer, x), d_out);
}

// 1-D convolution over a raw sample vector. One output frame per stride,
// one column per filter; zero padding on either side. No activation: the
// feedforward layer that follows carries the nonlinearity.
struct Conv1DLayer {
  Matrix kernels;  // num_filters x width
  std::vector<double> bias;
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  std::size_t width() const { return kernels.cols(); }
  std::size_t num_filters() const { return kernels.rows(); }
};

inline Conv1DLayer make_conv1d(std::size_t num_filters, std::size_t width, std::size_t stride,
                               std::size_t pad_left, std::size_t pad_right) {
  if (stride < 1 || width < stride) {
    throw std::invalid_argument("conv1d: requires width >= stride >= 1, got width " +
                                std::to_string(width) + ", stride " + std::to_string(stride));
  }
  Conv1DLayer layer;
  layer.kernels = Matrix(num_filters, width);
  layer.bias.assign(num_filters, 0.0);
  layer.stride = stride;
  layer.pad_left = pad_left;
  layer.pad_right = pad_right;
  return layer;
}

inline std::size_t conv1d_output_frames(const Conv1DLayer& layer, std::size_t samples) {
  const std::size_t padded = samples + layer.pad_left + layer.pad_right;
  if (padded < layer.width()) {
    throw std::invalid_argument("conv1d: padded waveform of " + std::to_string(padded) +
                                " samples is shorter than the kernel width " +
                                std::to_string(layer.width()));
  }
  return (padded - layer.width()) / layer.stride + 1;
}

// Frame t, filter k: sum_i kernel[k,i] * padded[t*stride + i] + bias[k],
// with i ascending (fixed summation order).
inline Matrix conv1d_forward(const Conv1DLayer& layer, std::span<const double> wave) {
  if (layer.stride < 1 || layer.width() < layer.stride) {
    throw std::invalid_argument("conv1d: requires width >= stride >= 1");
  }
  const std::size_t frames = conv1d_output_frames(layer, wave.size());
  const std::size_t width = layer.width(), filters = layer.num_filters();
  Matrix y(frames, filters);
  for (std::size_t t = 0; t < frames; ++t) {
    double* yt = y.row(t);
    // window start in unpadded coordinates, may be negative near the edges;
    // padded positions contribute zero, so the kernel index range is
    // clamped to the in-bounds samples (still ascending i)
    const std::ptrdiff_t start =
        static_cast<std::ptrdiff_t>(t * layer.stride) - static_cast<std::ptrdiff_t>(layer.pad_left);
    const std::size_t i_lo = start < 0 ? static_cast<std::size_t>(-start) : 0;
    const std::ptrdiff_t remain = static_cast<std::ptrdiff_t>(wave.size()) - start;
    const std::size_t i_hi = remain <= 0 ? 0
                             : std::min(width, static_cast<std::size_t>(remain));
    const double* w = wave.data() + start;
    for (std::size_t k = 0; k < filters; ++k) {
      const double* kern = layer.kernels.row(k);
      double acc = layer.bias[k];
      for (std::size_t i = i_lo; i < i_hi; ++i) acc += kern[i] * w[i];
      yt[k] = acc;
    }
  }
  return y;
}

struct Conv1DGradients {
  Matrix d_kernels;
  std::vector<double> d_bias;
};

// Gradients w.r.t. kernels and bias only; the waveform is data and is
// never learned.
inline Conv1DGradients conv1d_backward(const Conv1DLayer& layer, std::span<const double> wave,
                                       const Matrix& d_out) {
  const std::size_t frames = conv1d_output_frames(layer, wave.size());
  if (d_out.rows() != frames || d_out.cols() != layer.num_filters()) {
    throw std::invalid_argument("conv1d_backward: upstream gradient is " + shape_str(d_out) +
                                ", expected " + std::to_string(frames) + "x" +
                                std::to_string(layer.num_filters()));
  }
  const std::size_t width = layer.width(), filters = layer.num_filters();
  Conv1DGradients g;
  g.d_kernels = Matrix(filters, width);
  g.d_bias.assign(filters, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* dt = d_out.row(t);
    const std::ptrdiff_t start =
        static_cast<std::ptrdiff_t>(t * layer.stride) - static_cast<std::ptrdiff_t>(layer.pad_left);
    const std::size_t i_lo = start < 0 ? static_cast<std::size_t>(-start) : 0;
    const std::ptrdiff_t remain = static_cast<std::ptrdiff_t>(wave.size()) - start;
    const std::size_t i_hi = remain <= 0 ? 0
                             : std::min(width, static_cast<std::size_t>(remain));
    const double* w = wave.data() + start;
    for (std::size_t k = 0; k < filters; ++k) {
      const double dv = dt[k];
      double* dk = g.d_kernels.row(k);
      for (std::size_t i = i_lo; i < i_hi; ++i) dk[i] += dv * w[i];
      g.d_bias[k] += dv;
    }
  }
  return g;
}

}  // namespace modaladapt
