#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kantize/dataset.hpp"
#include "kantize/grid.hpp"
#include "kantize/layers.hpp"
#include "kantize/matrix.hpp"

namespace kantize {

namespace detail {

/// Derivatives of all degree-P basis functions at knot-unit coordinate xi,
/// written to `out` (length G + P); shares the recursion triangle with
/// basis_at_coord but stops one degree early.
inline void basis_derivative_at_coord(double xi, const GridSpec& grid, std::span<double> out) {
  const int degree = grid.degree();
  const int n0 = grid.indicator_count();
  const int slots = n0 + 1;
  double stack[kStackSlots];
  std::vector<double> heap;
  std::span<double> buf;
  if (slots <= kStackSlots) {
    buf = {stack, static_cast<std::size_t>(slots)};
  } else {
    heap.resize(slots);
    buf = heap;
  }
  std::fill(buf.begin(), buf.begin() + n0 + 1, 0.0);
  const double jf = std::floor(xi);
  if (jf >= 0.0 && jf < static_cast<double>(n0)) buf[static_cast<int>(jf)] = 1.0;
  for (int d = 1; d <= degree - 1; ++d) {
    const double r = grid.recip(d);
    const int top = n0 - d;
    for (int i = 0; i <= top; ++i) {
      const double d1 = xi - i;
      const double d2 = (i + d + 1) - xi;
      buf[i] = (d1 * r) * buf[i] + (d2 * r) * buf[i + 1];
    }
  }
  const int nb = grid.basis_count();
  const double inv_delta = 1.0 / grid.delta();
  for (int i = 0; i < nb; ++i) out[i] = (buf[i] - buf[i + 1]) * inv_delta;
}

}  // namespace detail

/// Gradients of one linear KAN layer for a given upstream gradient.
struct LayerGrads {
  Matrix d_coeffs;  // same shape as layer.coeffs
  Matrix d_inputs;  // same shape as the activation matrix
};

/// Builds the dense basis matrix for `acts` (clamped to the domain) and also
/// reports which activations were clamped (their input gradient is zero).
inline Matrix build_basis_matrix(const Matrix& acts, const KanLinearLayer& layer,
                                 std::vector<std::uint8_t>* clamped = nullptr) {
  const int nb = layer.grid.basis_count();
  Matrix bmat(acts.rows(), static_cast<std::size_t>(layer.n_in) * nb, 0.0);
  if (clamped) clamped->assign(acts.size(), 0);
  for (std::size_t m = 0; m < acts.rows(); ++m) {
    auto row = bmat.row(m);
    for (int i = 0; i < layer.n_in; ++i) {
      const double x = acts(m, i);
      const double cx = layer.grid.clamp_to_domain(x);
      if (clamped && cx != x) (*clamped)[m * acts.cols() + i] = 1;
      basis_at_coord(layer.grid.knot_coord(cx), layer.grid,
                     row.subspan(static_cast<std::size_t>(i) * nb, nb));
    }
  }
  return bmat;
}

/// Backward pass given the cached basis matrix of the forward pass.
/// Input gradients are skipped when want_inputs is false (bottom layers).
inline LayerGrads kan_linear_backward_with(const Matrix& acts, const Matrix& bmat,
                                           const KanLinearLayer& layer, const Matrix& d_out,
                                           const std::vector<std::uint8_t>& clamped,
                                           bool want_inputs = true) {
  if (d_out.rows() != acts.rows() || static_cast<int>(d_out.cols()) != layer.n_out)
    throw std::invalid_argument("kan_linear_backward: gradient shape mismatch");
  const int nb = layer.grid.basis_count();

  LayerGrads g;
  g.d_coeffs = Matrix(layer.coeffs.rows(), layer.coeffs.cols(), 0.0);
  g.d_inputs = Matrix(acts.rows(), acts.cols(), 0.0);

  // d_coeffs = B^T * d_out
  for (std::size_t m = 0; m < acts.rows(); ++m) {
    auto brow = bmat.row(m);
    auto grow = d_out.row(m);
    for (std::size_t r = 0; r < bmat.cols(); ++r) {
      const double bv = brow[r];
      if (bv == 0.0) continue;
      auto drow = g.d_coeffs.row(r);
      for (std::size_t j = 0; j < d_out.cols(); ++j) drow[j] += bv * grow[j];
    }
  }
  if (!want_inputs) return g;

  // d_inputs[m, i] = sum_k (d_out[m] . W[i*nb+k]) * b'_k(a[m, i])
  std::vector<double> deriv(nb);
  for (std::size_t m = 0; m < acts.rows(); ++m) {
    auto grow = d_out.row(m);
    for (int i = 0; i < layer.n_in; ++i) {
      if (clamped[m * acts.cols() + i]) continue;  // clamp blocks the gradient
      const double cx = layer.grid.clamp_to_domain(acts(m, i));
      detail::basis_derivative_at_coord(layer.grid.knot_coord(cx), layer.grid, deriv);
      double acc = 0.0;
      for (int k = 0; k < nb; ++k) {
        if (deriv[k] == 0.0) continue;
        const auto wrow = layer.coeffs.row(static_cast<std::size_t>(i) * nb + k);
        double dot = 0.0;
        for (std::size_t j = 0; j < d_out.cols(); ++j) dot += wrow[j] * grow[j];
        acc += deriv[k] * dot;
      }
      g.d_inputs(m, i) = acc;
    }
  }
  return g;
}

inline LayerGrads kan_linear_backward(const Matrix& acts, const KanLinearLayer& layer,
                                      const Matrix& d_out) {
  std::vector<std::uint8_t> clamped;
  const Matrix bmat = build_basis_matrix(acts, layer, &clamped);
  return kan_linear_backward_with(acts, bmat, layer, d_out, clamped);
}

/// Mean softmax cross-entropy over the batch; writes dLoss/dLogits.
inline double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                    Matrix& d_logits) {
  d_logits = Matrix(logits.rows(), logits.cols(), 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t m = 0; m < logits.rows(); ++m) {
    auto row = logits.row(m);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    const double log_denom = std::log(denom);
    const int y = labels[m];
    loss += (log_denom - (row[y] - mx)) * inv_n;
    auto drow = d_logits.row(m);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double p = std::exp(row[j] - mx) / denom;
      drow[j] = (p - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv_n;
    }
  }
  return loss;
}

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  int epochs = 10;
  int batch = 64;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainResult {
  std::vector<double> epoch_losses;
};

/// Kaiming-style random initialization of every coefficient tensor.
inline void init_model(Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& layer : model.layers) {
    Matrix* coeffs = nullptr;
    double fan_in = 1.0;
    if (auto* lin = std::get_if<KanLinearLayer>(&layer)) {
      coeffs = &lin->coeffs;
      fan_in = static_cast<double>(lin->n_in);
    } else if (auto* conv = std::get_if<ConvKanLayer>(&layer)) {
      coeffs = &conv->coeffs;
      fan_in = static_cast<double>(conv->patch_size());
    }
    if (!coeffs) continue;
    const double scale = std::sqrt(2.0 / fan_in);
    for (double& v : coeffs->flat()) v = unit(rng) * scale;
  }
}

namespace detail {

struct ConvCache {
  Matrix patches;  // im2col of the (possibly clamped) input
  Matrix bmat;
  std::vector<std::uint8_t> clamped;
  Tensor3 input;
};

struct TrainState {
  // Per-sample caches for the image prefix, per-layer.
  std::vector<std::vector<ConvCache>> conv_caches;
  std::vector<std::vector<Tensor3>> pool_inputs;
  // Batched caches for the flat suffix.
  std::vector<Matrix> linear_inputs;
  std::vector<Matrix> linear_bmats;
  std::vector<std::vector<std::uint8_t>> linear_clamped;
};

inline Tensor3 tensor_from_row(std::span<const double> row, const std::vector<int>& shape) {
  Tensor3 t(shape[0], shape[1], shape[2]);
  std::copy(row.begin(), row.end(), t.data.begin());
  return t;
}

/// Scatter-add of patch-space gradients back onto the input tensor.
inline void col2im_add(const Matrix& d_patches, int c_in, int kernel, int stride, int padding,
                       Tensor3& d_input) {
  const int h_out = conv_out_dim(d_input.height, kernel, stride, padding);
  const int w_out = conv_out_dim(d_input.width, kernel, stride, padding);
  for (int oy = 0; oy < h_out; ++oy) {
    for (int ox = 0; ox < w_out; ++ox) {
      auto row = d_patches.row(static_cast<std::size_t>(oy) * w_out + ox);
      std::size_t col = 0;
      for (int c = 0; c < c_in; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx, ++col) {
            const int y = oy * stride + ky - padding;
            const int x = ox * stride + kx - padding;
            if (y >= 0 && y < d_input.height && x >= 0 && x < d_input.width)
              d_input.at(c, y, x) += row[col];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Minibatch gradient descent with momentum on softmax cross-entropy.
/// Deterministic for a fixed seed. Throws on NaN loss.
inline TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  model.validate();

  // Momentum buffers aligned with each KAN layer's coefficients.
  std::vector<Matrix> velocity;
  for (const auto& layer : model.layers) {
    if (const auto* lin = std::get_if<KanLinearLayer>(&layer))
      velocity.emplace_back(lin->coeffs.rows(), lin->coeffs.cols(), 0.0);
    else if (const auto* conv = std::get_if<ConvKanLayer>(&layer))
      velocity.emplace_back(conv->coeffs.rows(), conv->coeffs.cols(), 0.0);
    else
      velocity.emplace_back();
  }

  const bool image_input = model.input_shape.size() == 3;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < ds.size(); start += cfg.batch) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch, ds.size() - start);

      // ---- forward ----
      detail::TrainState st;
      Matrix flat;
      std::vector<Tensor3> tensors;
      std::vector<int> labels(bsz);
      if (!image_input) {
        flat = Matrix(bsz, ds.inputs.cols());
        for (std::size_t r = 0; r < bsz; ++r) {
          auto src = ds.inputs.row(order[start + r]);
          std::copy(src.begin(), src.end(), flat.row(r).begin());
          labels[r] = ds.labels[order[start + r]];
        }
      } else {
        for (std::size_t r = 0; r < bsz; ++r) {
          tensors.push_back(
              detail::tensor_from_row(ds.inputs.row(order[start + r]), model.input_shape));
          labels[r] = ds.labels[order[start + r]];
        }
      }

      for (const auto& layer : model.layers) {
        if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
          st.linear_inputs.push_back(flat);
          std::vector<std::uint8_t> clamped;
          Matrix bmat = build_basis_matrix(flat, *lin, &clamped);
          flat = matmul(bmat, lin->coeffs);
          st.linear_bmats.push_back(std::move(bmat));
          st.linear_clamped.push_back(std::move(clamped));
        } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
          std::vector<detail::ConvCache> caches(tensors.size());
          KanLinearLayer as_linear;
          as_linear.n_in = conv->patch_size();
          as_linear.n_out = conv->c_out;
          as_linear.grid = conv->grid;
          as_linear.coeffs = conv->coeffs;
          const int h_out = conv_out_dim(tensors.empty() ? 0 : tensors[0].height, conv->kernel,
                                         conv->stride, conv->padding);
          const int w_out = conv_out_dim(tensors.empty() ? 0 : tensors[0].width, conv->kernel,
                                         conv->stride, conv->padding);
          for (std::size_t s = 0; s < tensors.size(); ++s) {
            auto& cache = caches[s];
            cache.input = tensors[s];
            cache.patches = im2col(tensors[s], conv->kernel, conv->stride, conv->padding);
            cache.bmat = build_basis_matrix(cache.patches, as_linear, &cache.clamped);
            const Matrix rows = matmul(cache.bmat, conv->coeffs);
            Tensor3 out(conv->c_out, h_out, w_out);
            for (int c = 0; c < conv->c_out; ++c)
              for (int y = 0; y < h_out; ++y)
                for (int x = 0; x < w_out; ++x)
                  out.at(c, y, x) = rows(static_cast<std::size_t>(y) * w_out + x, c);
            tensors[s] = std::move(out);
          }
          st.conv_caches.push_back(std::move(caches));
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
          st.pool_inputs.push_back(tensors);
          for (auto& t : tensors) t = maxpool2(t, pool->window);
        } else {
          flat = Matrix(tensors.size(), tensors.empty() ? 0 : tensors.front().size());
          for (std::size_t s = 0; s < tensors.size(); ++s)
            std::copy(tensors[s].data.begin(), tensors[s].data.end(), flat.row(s).begin());
        }
      }

      Matrix d_flat;
      const double loss = softmax_cross_entropy(flat, labels, d_flat);
      if (std::isnan(loss))
        throw std::runtime_error("train: loss diverged to NaN at epoch " +
                                 std::to_string(epoch));
      epoch_loss += loss;
      ++batches;

      // ---- backward ----
      std::vector<Tensor3> d_tensors;
      std::size_t li = st.linear_inputs.size();
      std::size_t ci = st.conv_caches.size();
      std::size_t pi = st.pool_inputs.size();

      for (std::size_t rev = model.layers.size(); rev-- > 0;) {
        const auto& layer = model.layers[rev];
        if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
          --li;
          LayerGrads g = kan_linear_backward_with(st.linear_inputs[li], st.linear_bmats[li],
                                                  *lin, d_flat, st.linear_clamped[li],
                                                  /*want_inputs=*/rev > 0);
          auto& vel = velocity[rev];
          auto* mut = std::get_if<KanLinearLayer>(&model.layers[rev]);
          for (std::size_t idx = 0; idx < vel.size(); ++idx) {
            vel.flat()[idx] =
                cfg.momentum * vel.flat()[idx] - cfg.lr * g.d_coeffs.flat()[idx];
            mut->coeffs.flat()[idx] += vel.flat()[idx];
          }
          d_flat = std::move(g.d_inputs);
        } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
          --ci;
          auto& caches = st.conv_caches[ci];
          KanLinearLayer as_linear;
          as_linear.n_in = conv->patch_size();
          as_linear.n_out = conv->c_out;
          as_linear.grid = conv->grid;
          as_linear.coeffs = conv->coeffs;

          Matrix d_coeffs(conv->coeffs.rows(), conv->coeffs.cols(), 0.0);
          std::vector<Tensor3> new_d(caches.size());
          for (std::size_t s = 0; s < caches.size(); ++s) {
            const Tensor3& d_out_t = d_tensors[s];
            const int h_out = d_out_t.height, w_out = d_out_t.width;
            Matrix d_rows(static_cast<std::size_t>(h_out) * w_out, conv->c_out);
            for (int c = 0; c < conv->c_out; ++c)
              for (int y = 0; y < h_out; ++y)
                for (int x = 0; x < w_out; ++x)
                  d_rows(static_cast<std::size_t>(y) * w_out + x, c) = d_out_t.at(c, y, x);
            LayerGrads g = kan_linear_backward_with(caches[s].patches, caches[s].bmat,
                                                    as_linear, d_rows, caches[s].clamped,
                                                    /*want_inputs=*/rev > 0);
            for (std::size_t idx = 0; idx < d_coeffs.size(); ++idx)
              d_coeffs.flat()[idx] += g.d_coeffs.flat()[idx];
            Tensor3 d_in(caches[s].input.channels, caches[s].input.height,
                         caches[s].input.width);
            if (rev > 0)
              detail::col2im_add(g.d_inputs, conv->c_in, conv->kernel, conv->stride,
                                 conv->padding, d_in);
            new_d[s] = std::move(d_in);
          }
          auto& vel = velocity[rev];
          auto* mut = std::get_if<ConvKanLayer>(&model.layers[rev]);
          for (std::size_t idx = 0; idx < vel.size(); ++idx) {
            vel.flat()[idx] = cfg.momentum * vel.flat()[idx] - cfg.lr * d_coeffs.flat()[idx];
            mut->coeffs.flat()[idx] += vel.flat()[idx];
          }
          d_tensors = std::move(new_d);
        } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
          --pi;
          const auto& inputs = st.pool_inputs[pi];
          std::vector<Tensor3> new_d(inputs.size());
          for (std::size_t s = 0; s < inputs.size(); ++s) {
            const Tensor3& in_t = inputs[s];
            const Tensor3& d_out_t = d_tensors[s];
            Tensor3 d_in(in_t.channels, in_t.height, in_t.width);
            const int w = pool->window;
            for (int c = 0; c < d_out_t.channels; ++c)
              for (int y = 0; y < d_out_t.height; ++y)
                for (int x = 0; x < d_out_t.width; ++x) {
                  int by = y * w, bx = x * w;
                  double best = in_t.at(c, by, bx);
                  for (int dy = 0; dy < w; ++dy)
                    for (int dx = 0; dx < w; ++dx)
                      if (in_t.at(c, y * w + dy, x * w + dx) > best) {
                        best = in_t.at(c, y * w + dy, x * w + dx);
                        by = y * w + dy;
                        bx = x * w + dx;
                      }
                  d_in.at(c, by, bx) += d_out_t.at(c, y, x);
                }
            new_d[s] = std::move(d_in);
          }
          d_tensors = std::move(new_d);
        } else {
          // flatten: reshape the flat gradient back into per-sample tensors
          // with the shape the data had when it entered this layer.
          int c = model.input_shape[0], h = model.input_shape[1], w = model.input_shape[2];
          for (std::size_t k = 0; k < rev; ++k) {
            if (const auto* cv = std::get_if<ConvKanLayer>(&model.layers[k])) {
              h = conv_out_dim(h, cv->kernel, cv->stride, cv->padding);
              w = conv_out_dim(w, cv->kernel, cv->stride, cv->padding);
              c = cv->c_out;
            } else if (const auto* pl = std::get_if<MaxPoolLayer>(&model.layers[k])) {
              h /= pl->window;
              w /= pl->window;
            }
          }
          d_tensors.resize(d_flat.rows());
          for (std::size_t s = 0; s < d_flat.rows(); ++s) {
            Tensor3 t(c, h, w);
            auto row = d_flat.row(s);
            std::copy(row.begin(), row.end(), t.data.begin());
            d_tensors[s] = std::move(t);
          }
        }
      }
    }

    result.epoch_losses.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, result.epoch_losses.back());
  }
  return result;
}

}  // namespace kantize
