#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kantize/grid.hpp"
#include "kantize/matrix.hpp"
#include "kantize/quant.hpp"

namespace kantize {

/// Fully connected KAN layer. Coefficient rows are grouped by input neuron,
/// then by basis index within the neuron: row i*(G+P)+k holds the weights of
/// basis k of input i across all outputs.
struct KanLinearLayer {
  int n_in = 0;
  int n_out = 0;
  GridSpec grid;
  Matrix coeffs;  // [n_in * (G+P), n_out]

  static KanLinearLayer zeros(int n_in, int n_out, const GridSpec& grid) {
    KanLinearLayer l;
    l.n_in = n_in;
    l.n_out = n_out;
    l.grid = grid;
    l.coeffs = Matrix(static_cast<std::size_t>(n_in) * grid.basis_count(), n_out, 0.0);
    return l;
  }

  std::size_t param_count() const { return coeffs.size(); }
};

/// Convolutional KAN layer, evaluated by unfolding patches (im2col) and
/// applying the linear KAN operation. Coefficient rows follow the patch
/// element order of im2col: channel-major, then kernel row, then column.
struct ConvKanLayer {
  int c_in = 0;
  int c_out = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  GridSpec grid;
  Matrix coeffs;  // [K*K*c_in*(G+P), c_out]

  static ConvKanLayer zeros(int c_in, int c_out, int kernel, int stride, int padding,
                            const GridSpec& grid) {
    ConvKanLayer l;
    l.c_in = c_in;
    l.c_out = c_out;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.grid = grid;
    l.coeffs = Matrix(static_cast<std::size_t>(kernel) * kernel * c_in * grid.basis_count(),
                      c_out, 0.0);
    return l;
  }

  int patch_size() const { return kernel * kernel * c_in; }
  std::size_t param_count() const { return coeffs.size(); }
};

struct MaxPoolLayer {
  int window = 2;
};

struct FlattenLayer {};

using Layer = std::variant<KanLinearLayer, ConvKanLayer, MaxPoolLayer, FlattenLayer>;

/// Evaluates the basis recursion at x directly.
struct RecursiveBasis {
  const GridSpec* grid = nullptr;
  OpCounter* ops = nullptr;

  void operator()(double x, std::span<double> out) const {
    basis_at_coord(grid->knot_coord(x), *grid, out, ops);
  }
};

/// Recursion followed by simulated quantization of the basis values.
template <class Inner>
struct FakeQuantBasis {
  Inner inner;
  QuantParams qp;

  void operator()(double x, std::span<double> out) const {
    inner(x, out);
    fake_quant(out, qp);
  }
};

/// out[m, j] = sum_i sum_k basis(A[m,i])[k] * W[i*(G+P)+k, j], computed as a
/// dense basis-matrix construction followed by one matrix multiply.
/// Activations are clamped to the grid domain before basis evaluation.
template <class BasisFn>
Matrix kan_linear_forward(const Matrix& acts, const KanLinearLayer& layer, BasisFn&& basis,
                          OpCounter* ops = nullptr) {
  if (static_cast<int>(acts.cols()) != layer.n_in)
    throw std::invalid_argument("kan_linear_forward: shape mismatch: got " +
                                std::to_string(acts.cols()) + " inputs, layer expects " +
                                std::to_string(layer.n_in));
  const int nb = layer.grid.basis_count();
  Matrix bmat(acts.rows(), static_cast<std::size_t>(layer.n_in) * nb, 0.0);
  for (std::size_t m = 0; m < acts.rows(); ++m) {
    auto row = bmat.row(m);
    for (int i = 0; i < layer.n_in; ++i) {
      const double x = layer.grid.clamp_to_domain(acts(m, i));
      basis(x, row.subspan(static_cast<std::size_t>(i) * nb, nb));
    }
  }
  return matmul(bmat, layer.coeffs, ops);
}

inline Matrix kan_linear_forward(const Matrix& acts, const KanLinearLayer& layer,
                                 OpCounter* ops = nullptr) {
  return kan_linear_forward(acts, layer, RecursiveBasis{&layer.grid, ops}, ops);
}

/// Unfolds [C, H, W] into a matrix with one row per output position holding
/// the zero-padded K x K patch of every channel (channel-major element
/// order, matching ConvKanLayer coefficient rows).
inline Matrix im2col(const Tensor3& in, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0)
    throw std::invalid_argument("im2col: bad kernel/stride/padding");
  const int span_h = in.height + 2 * padding - kernel;
  const int span_w = in.width + 2 * padding - kernel;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
    throw std::invalid_argument("im2col: output dimensions are not positive integers");
  const int h_out = span_h / stride + 1;
  const int w_out = span_w / stride + 1;

  Matrix out(static_cast<std::size_t>(h_out) * w_out,
             static_cast<std::size_t>(kernel) * kernel * in.channels, 0.0);
  for (int oy = 0; oy < h_out; ++oy) {
    for (int ox = 0; ox < w_out; ++ox) {
      auto row = out.row(static_cast<std::size_t>(oy) * w_out + ox);
      std::size_t col = 0;
      for (int c = 0; c < in.channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx, ++col) {
            const int y = oy * stride + ky - padding;
            const int x = ox * stride + kx - padding;
            if (y >= 0 && y < in.height && x >= 0 && x < in.width) row[col] = in.at(c, y, x);
          }
        }
      }
    }
  }
  return out;
}

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

/// Convolutional KAN forward: im2col followed by the linear KAN operation,
/// reshaped to [c_out, H_out, W_out].
template <class BasisFn>
Tensor3 convkan_forward(const Tensor3& in, const ConvKanLayer& layer, BasisFn&& basis,
                        OpCounter* ops = nullptr) {
  if (in.channels != layer.c_in)
    throw std::invalid_argument("convkan_forward: shape mismatch: got " +
                                std::to_string(in.channels) + " channels, layer expects " +
                                std::to_string(layer.c_in));
  const Matrix patches = im2col(in, layer.kernel, layer.stride, layer.padding);
  KanLinearLayer as_linear;
  as_linear.n_in = layer.patch_size();
  as_linear.n_out = layer.c_out;
  as_linear.grid = layer.grid;
  as_linear.coeffs = layer.coeffs;
  const Matrix out_rows = kan_linear_forward(patches, as_linear, basis, ops);

  const int h_out = conv_out_dim(in.height, layer.kernel, layer.stride, layer.padding);
  const int w_out = conv_out_dim(in.width, layer.kernel, layer.stride, layer.padding);
  Tensor3 out(layer.c_out, h_out, w_out);
  for (int c = 0; c < layer.c_out; ++c)
    for (int y = 0; y < h_out; ++y)
      for (int x = 0; x < w_out; ++x)
        out.at(c, y, x) = out_rows(static_cast<std::size_t>(y) * w_out + x, c);
  return out;
}

inline Tensor3 convkan_forward(const Tensor3& in, const ConvKanLayer& layer,
                               OpCounter* ops = nullptr) {
  return convkan_forward(in, layer, RecursiveBasis{&layer.grid, ops}, ops);
}

/// Window x window max pooling with stride equal to the window.
inline Tensor3 maxpool2(const Tensor3& in, int window = 2) {
  if (window < 1) throw std::invalid_argument("maxpool2: bad window");
  if (in.height < window || in.width < window)
    throw std::invalid_argument("maxpool2: input smaller than window");
  Tensor3 out(in.channels, in.height / window, in.width / window);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        double best = in.at(c, y * window, x * window);
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx)
            best = std::max(best, in.at(c, y * window + dy, x * window + dx));
        out.at(c, y, x) = best;
      }
  return out;
}

/// Channel-major flattening of a [C, H, W] tensor.
inline std::vector<double> flatten(const Tensor3& in) { return in.data; }

/// A KAN model: an ordered stack of layers sharing one grid configuration.
/// input_shape is [D] for flat inputs or [C, H, W] for image inputs.
struct Model {
  std::vector<Layer> layers;
  std::vector<int> input_shape;

  bool has_conv() const {
    for (const auto& l : layers)
      if (std::holds_alternative<ConvKanLayer>(l)) return true;
    return false;
  }

  const GridSpec& grid() const {
    for (const auto& l : layers) {
      if (const auto* lin = std::get_if<KanLinearLayer>(&l)) return lin->grid;
      if (const auto* conv = std::get_if<ConvKanLayer>(&l)) return conv->grid;
    }
    throw std::invalid_argument("Model::grid: model has no KAN layers");
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      if (const auto* lin = std::get_if<KanLinearLayer>(&l)) n += lin->param_count();
      if (const auto* conv = std::get_if<ConvKanLayer>(&l)) n += conv->param_count();
    }
    return n;
  }

  int output_count() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      if (const auto* lin = std::get_if<KanLinearLayer>(&*it)) return lin->n_out;
      if (const auto* conv = std::get_if<ConvKanLayer>(&*it)) return conv->c_out;
    }
    throw std::invalid_argument("Model::output_count: model has no KAN layers");
  }

  /// Checks that consecutive layer shapes compose, tracking [C, H, W] or a
  /// flat feature count through the stack. Throws on the first mismatch.
  void validate() const {
    bool flat = input_shape.size() == 1;
    int c = 0, h = 0, w = 0, d = 0;
    if (flat) {
      d = input_shape[0];
    } else if (input_shape.size() == 3) {
      c = input_shape[0];
      h = input_shape[1];
      w = input_shape[2];
    } else {
      throw std::invalid_argument("Model::validate: input_shape must be [D] or [C,H,W]");
    }

    int idx = 0;
    for (const auto& l : layers) {
      if (const auto* lin = std::get_if<KanLinearLayer>(&l)) {
        if (!flat)
          throw std::invalid_argument("Model::validate: linear layer " + std::to_string(idx) +
                                      " applied to unflattened tensor");
        if (d != lin->n_in)
          throw std::invalid_argument("Model::validate: layer " + std::to_string(idx) +
                                      " expects " + std::to_string(lin->n_in) + " inputs, got " +
                                      std::to_string(d));
        d = lin->n_out;
      } else if (const auto* conv = std::get_if<ConvKanLayer>(&l)) {
        if (flat)
          throw std::invalid_argument("Model::validate: conv layer " + std::to_string(idx) +
                                      " applied to flat input");
        if (c != conv->c_in)
          throw std::invalid_argument("Model::validate: layer " + std::to_string(idx) +
                                      " expects " + std::to_string(conv->c_in) +
                                      " channels, got " + std::to_string(c));
        const int span_h = h + 2 * conv->padding - conv->kernel;
        const int span_w = w + 2 * conv->padding - conv->kernel;
        if (span_h < 0 || span_w < 0 || span_h % conv->stride != 0 ||
            span_w % conv->stride != 0)
          throw std::invalid_argument("Model::validate: layer " + std::to_string(idx) +
                                      " output dimensions are not positive integers for " +
                                      std::to_string(h) + "x" + std::to_string(w) + " input");
        c = conv->c_out;
        h = span_h / conv->stride + 1;
        w = span_w / conv->stride + 1;
      } else if (const auto* pool = std::get_if<MaxPoolLayer>(&l)) {
        if (flat)
          throw std::invalid_argument("Model::validate: pool layer on flat input");
        h /= pool->window;
        w /= pool->window;
      } else {
        if (flat)
          throw std::invalid_argument("Model::validate: flatten on flat input");
        d = c * h * w;
        flat = true;
      }
      ++idx;
    }
  }
};

}  // namespace kantize
