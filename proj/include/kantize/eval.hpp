#pragma once

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kantize/dataset.hpp"
#include "kantize/layers.hpp"
#include "kantize/lut.hpp"
#include "kantize/matrix.hpp"
#include "kantize/quant.hpp"
#include "kantize/spline_table.hpp"

namespace kantize {

enum class EvalMode { kFp32, kFakeQuant, kBsplineLut, kSplineTable };

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "fp32") return EvalMode::kFp32;
  if (s == "fake-quant") return EvalMode::kFakeQuant;
  if (s == "bspline-lut") return EvalMode::kBsplineLut;
  if (s == "spline-table") return EvalMode::kSplineTable;
  throw std::invalid_argument("unknown evaluation mode '" + s + "'");
}

inline std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kFp32: return "fp32";
    case EvalMode::kFakeQuant: return "fake-quant";
    case EvalMode::kBsplineLut: return "bspline-lut";
    case EvalMode::kSplineTable: return "spline-table";
  }
  return "?";
}

struct EvalOptions {
  EvalMode mode = EvalMode::kFp32;
  QuantConfig qcfg;  // fake-quant; bits_w is also honored in bspline-lut mode
  const BsplineLut* lut = nullptr;                       // bspline-lut mode
  const std::vector<SplineTableSet>* tables = nullptr;   // spline-table mode, KAN-layer order
  // Per-KAN-layer (lo, hi) activation ranges; required when the fake-quant
  // range policy is kCalibrated (see calibrate_activation_ranges).
  std::vector<std::pair<double, double>> a_ranges;
};

namespace detail {

/// Weight matrices and activation quantizers resolved once per evaluation.
struct PreparedKanLayer {
  Matrix coeffs;         // possibly fake-quantized
  QuantParams a_qp;      // identity unless fake-quant mode quantizes activations
  const SplineTableSet* tables = nullptr;
};

inline QuantParams a_params_for(const GridSpec& grid, const EvalOptions& opts,
                                std::size_t kan_index) {
  const QuantConfig& qcfg = opts.qcfg;
  if (qcfg.bits_a == kPassthroughBits) return QuantParams::identity();
  if (qcfg.a_range_policy == QuantConfig::ARangePolicy::kCalibrated) {
    if (kan_index >= opts.a_ranges.size())
      throw std::invalid_argument(
          "model_forward: calibrated activation policy needs a range per KAN layer");
    const auto [lo, hi] = opts.a_ranges[kan_index];
    return compute_quant_params(lo, hi, qcfg.bits_a);
  }
  return compute_quant_params(grid.domain_lo(), grid.domain_hi(), qcfg.bits_a);
}

inline Matrix maybe_fake_quant_weights(const Matrix& coeffs, int bits_w) {
  if (bits_w == kPassthroughBits || coeffs.empty()) return coeffs;
  RangeCalibrator cal;
  cal.observe(coeffs);
  const auto [lo, hi] = zero_spanning(cal.range(true));
  return fake_quant_tensor(coeffs, compute_quant_params(lo, hi, bits_w));
}

struct PreparedModel {
  const Model* model = nullptr;
  EvalOptions opts;
  std::vector<PreparedKanLayer> kan_layers;  // one per KAN layer, in order

  static PreparedModel make(const Model& model, const EvalOptions& opts) {
    PreparedModel pm;
    pm.model = &model;
    pm.opts = opts;

    if (opts.mode == EvalMode::kBsplineLut && !opts.lut)
      throw std::invalid_argument("model_forward: bspline-lut mode requires a table");

    std::size_t kan_index = 0;
    for (const auto& layer : model.layers) {
      const GridSpec* grid = nullptr;
      const Matrix* coeffs = nullptr;
      if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
        grid = &lin->grid;
        coeffs = &lin->coeffs;
      } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
        grid = &conv->grid;
        coeffs = &conv->coeffs;
      } else {
        continue;
      }

      PreparedKanLayer pl;
      switch (opts.mode) {
        case EvalMode::kFp32:
          pl.coeffs = *coeffs;
          pl.a_qp = QuantParams::identity();
          break;
        case EvalMode::kFakeQuant:
          pl.coeffs = maybe_fake_quant_weights(*coeffs, opts.qcfg.bits_w);
          pl.a_qp = a_params_for(*grid, opts, kan_index);
          break;
        case EvalMode::kBsplineLut:
          pl.coeffs = maybe_fake_quant_weights(*coeffs, opts.qcfg.bits_w);
          pl.a_qp = QuantParams::identity();  // lattice quantization happens per lookup
          break;
        case EvalMode::kSplineTable: {
          if (!opts.tables || kan_index >= opts.tables->size())
            throw std::invalid_argument(
                "model_forward: spline-table mode is missing tables for layer " +
                std::to_string(kan_index));
          pl.tables = &(*opts.tables)[kan_index];
          break;
        }
      }
      pm.kan_layers.push_back(std::move(pl));
      ++kan_index;
    }
    return pm;
  }
};

inline Matrix forward_linear(const Matrix& acts, const KanLinearLayer& layer,
                             const PreparedKanLayer& pl, const EvalOptions& opts) {
  KanLinearLayer staged = layer;
  if (opts.mode == EvalMode::kSplineTable) return spline_table_forward(acts, *pl.tables);
  staged.coeffs = pl.coeffs;

  Matrix in = acts;
  if (!pl.a_qp.passthrough()) fake_quant(in.flat(), pl.a_qp);

  switch (opts.mode) {
    case EvalMode::kFp32:
      return kan_linear_forward(in, staged, RecursiveBasis{&layer.grid});
    case EvalMode::kFakeQuant: {
      if (opts.qcfg.bits_b == kPassthroughBits)
        return kan_linear_forward(in, staged, RecursiveBasis{&layer.grid});
      FakeQuantBasis<RecursiveBasis> basis{RecursiveBasis{&layer.grid},
                                           compute_quant_params(0.0, 1.0, opts.qcfg.bits_b)};
      return kan_linear_forward(in, staged, basis);
    }
    case EvalMode::kBsplineLut: {
      LutBasis basis{&layer.grid, opts.lut,
                     ActivationLattice::of(layer.grid, opts.lut->bits_per_interval)};
      return kan_linear_forward(in, staged, basis);
    }
    default:
      throw std::logic_error("forward_linear: unreachable mode");
  }
}

inline Tensor3 forward_conv(const Tensor3& in, const ConvKanLayer& layer,
                            const PreparedKanLayer& pl, const EvalOptions& opts) {
  if (opts.mode == EvalMode::kSplineTable) return spline_table_forward(in, layer, *pl.tables);

  ConvKanLayer staged = layer;
  staged.coeffs = pl.coeffs;

  Tensor3 quantized = in;
  if (!pl.a_qp.passthrough())
    for (double& v : quantized.data) v = fake_quant_value(v, pl.a_qp);

  switch (opts.mode) {
    case EvalMode::kFp32:
      return convkan_forward(quantized, staged, RecursiveBasis{&layer.grid});
    case EvalMode::kFakeQuant: {
      if (opts.qcfg.bits_b == kPassthroughBits)
        return convkan_forward(quantized, staged, RecursiveBasis{&layer.grid});
      FakeQuantBasis<RecursiveBasis> basis{RecursiveBasis{&layer.grid},
                                           compute_quant_params(0.0, 1.0, opts.qcfg.bits_b)};
      return convkan_forward(quantized, staged, basis);
    }
    case EvalMode::kBsplineLut: {
      LutBasis basis{&layer.grid, opts.lut,
                     ActivationLattice::of(layer.grid, opts.lut->bits_per_interval)};
      return convkan_forward(quantized, staged, basis);
    }
    default:
      throw std::logic_error("forward_conv: unreachable mode");
  }
}

}  // namespace detail

/// Runs the model on a batch of flat input rows and returns the output
/// logits. Image models reshape each row to [C, H, W] for the convolutional
/// prefix and batch the flat suffix.
inline Matrix model_forward(const Model& model, const Matrix& inputs,
                            const EvalOptions& opts = {}) {
  const auto pm = detail::PreparedModel::make(model, opts);

  const bool image_input = model.input_shape.size() == 3;
  Matrix flat;       // valid when `is_flat`
  std::vector<Tensor3> tensors;
  bool is_flat = !image_input;

  if (is_flat) {
    flat = inputs;
  } else {
    const int c = model.input_shape[0], h = model.input_shape[1], w = model.input_shape[2];
    if (inputs.cols() != static_cast<std::size_t>(c) * h * w)
      throw std::invalid_argument("model_forward: input rows do not match input_shape");
    tensors.reserve(inputs.rows());
    for (std::size_t m = 0; m < inputs.rows(); ++m) {
      Tensor3 t(c, h, w);
      auto row = inputs.row(m);
      std::copy(row.begin(), row.end(), t.data.begin());
      tensors.push_back(std::move(t));
    }
  }

  std::size_t kan_index = 0;
  for (const auto& layer : model.layers) {
    if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
      if (!is_flat) throw std::invalid_argument("model_forward: linear layer on image data");
      flat = detail::forward_linear(flat, *lin, pm.kan_layers[kan_index], opts);
      ++kan_index;
    } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
      if (is_flat) throw std::invalid_argument("model_forward: conv layer on flat data");
      for (auto& t : tensors) t = detail::forward_conv(t, *conv, pm.kan_layers[kan_index], opts);
      ++kan_index;
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      for (auto& t : tensors) t = maxpool2(t, pool->window);
    } else {
      // flatten
      if (tensors.empty()) {
        flat = Matrix(0, 0);
      } else {
        flat = Matrix(tensors.size(), tensors.front().size());
        for (std::size_t m = 0; m < tensors.size(); ++m) {
          auto row = flat.row(m);
          std::copy(tensors[m].data.begin(), tensors[m].data.end(), row.begin());
        }
      }
      tensors.clear();
      is_flat = true;
    }
  }
  if (!is_flat) throw std::invalid_argument("model_forward: model does not end in flat output");
  return flat;
}

inline std::vector<int> predict(const Model& model, const Matrix& inputs,
                                const EvalOptions& opts = {}, std::size_t chunk = 256) {
  std::vector<int> out;
  out.reserve(inputs.rows());
  for (std::size_t start = 0; start < inputs.rows(); start += chunk) {
    const std::size_t rows = std::min(chunk, inputs.rows() - start);
    Matrix block(rows, inputs.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      auto src = inputs.row(start + r);
      auto dst = block.row(r);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    const Matrix logits = model_forward(model, block, opts);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      int best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(r, j) > logits(r, best)) best = static_cast<int>(j);
      out.push_back(best);
    }
  }
  return out;
}

/// Top-1 accuracy of the model on the dataset under the chosen forward path.
inline double evaluate_accuracy(const Model& model, const Dataset& ds,
                                const EvalOptions& opts = {}) {
  if (ds.size() == 0) return 0.0;
  const std::vector<int> preds = predict(model, ds.inputs, opts);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Observed (min, max) of the raw activations entering each KAN layer during
/// a plain forward pass over the calibration inputs, in KAN-layer order.
inline std::vector<std::pair<double, double>> calibrate_activation_ranges(
    const Model& model, const Matrix& inputs) {
  std::vector<RangeCalibrator> cals;
  for (const auto& layer : model.layers)
    if (std::holds_alternative<KanLinearLayer>(layer) ||
        std::holds_alternative<ConvKanLayer>(layer))
      cals.emplace_back();

  const bool image_input = model.input_shape.size() == 3;
  Matrix flat;
  std::vector<Tensor3> tensors;
  bool is_flat = !image_input;
  if (is_flat) {
    flat = inputs;
  } else {
    const int c = model.input_shape[0], h = model.input_shape[1], w = model.input_shape[2];
    for (std::size_t m = 0; m < inputs.rows(); ++m) {
      Tensor3 t(c, h, w);
      auto row = inputs.row(m);
      std::copy(row.begin(), row.end(), t.data.begin());
      tensors.push_back(std::move(t));
    }
  }

  std::size_t kan_index = 0;
  for (const auto& layer : model.layers) {
    if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
      cals[kan_index].observe(flat.flat());
      flat = kan_linear_forward(flat, *lin);
      ++kan_index;
    } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
      for (auto& t : tensors) {
        cals[kan_index].observe(std::span<const double>(t.data.data(), t.data.size()));
        t = convkan_forward(t, *conv);
      }
      ++kan_index;
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      for (auto& t : tensors) t = maxpool2(t, pool->window);
    } else {
      flat = Matrix(tensors.size(), tensors.empty() ? 0 : tensors.front().size());
      for (std::size_t m = 0; m < tensors.size(); ++m)
        std::copy(tensors[m].data.begin(), tensors[m].data.end(), flat.row(m).begin());
      tensors.clear();
      is_flat = true;
    }
  }

  std::vector<std::pair<double, double>> ranges;
  for (auto& cal : cals) ranges.push_back(zero_spanning(cal.range(true)));
  return ranges;
}

}  // namespace kantize
