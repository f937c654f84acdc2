#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kantize/layers.hpp"

namespace kantize {

/// Architecture description sufficient for analytic cost accounting. Conv
/// layers carry their output spatial size explicitly so models can be costed
/// without instantiating weights.
struct ArchLayer {
  enum class Kind { kLinear, kConv };
  Kind kind = Kind::kLinear;
  // linear
  std::int64_t n_in = 0, n_out = 0;
  // conv
  std::int64_t c_in = 0, c_out = 0, kernel = 0, h_out = 0, w_out = 0;
  std::int64_t stride = 1, padding = 0;

  /// Table-1 dimension substitution: a conv layer behaves like a linear layer
  /// with N_out = C_out and N_in = K^2 * C_in * H_out * W_out.
  std::int64_t eff_n_in() const {
    return kind == Kind::kLinear ? n_in : kernel * kernel * c_in * h_out * w_out;
  }
  std::int64_t eff_n_out() const { return kind == Kind::kLinear ? n_out : c_out; }

  /// Learned activation functions in this layer.
  std::int64_t connections() const {
    return kind == Kind::kLinear ? n_in * n_out : kernel * kernel * c_in * c_out;
  }
};

struct ArchDescriptor {
  std::string name;
  int intervals = 3;  // G
  int degree = 3;     // P
  std::vector<ArchLayer> layers;

  int basis_count() const { return intervals + degree; }

  std::int64_t connections() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.connections();
    return n;
  }
};

struct MulCounts {
  std::int64_t matmul = 0;
  std::int64_t bspline = 0;
  std::int64_t total() const { return matmul + bspline; }
};

/// Recursion nodes per scalar basis evaluation: P rows of the triangle, four
/// multiplications each.
inline std::int64_t recursion_mul_factor(int intervals, int degree) {
  const std::int64_t p = degree, g = intervals;
  return 4 * (p * (g + 2 * p) - p * (p - 1) / 2);
}

inline MulCounts mul_counts_layer(const ArchLayer& l, int intervals, int degree,
                                  std::int64_t batch) {
  MulCounts c;
  c.matmul = batch * l.eff_n_out() * l.eff_n_in() * (intervals + degree);
  c.bspline = batch * l.eff_n_in() * recursion_mul_factor(intervals, degree);
  return c;
}

inline MulCounts mul_counts(const ArchDescriptor& arch, std::int64_t batch = 1) {
  MulCounts total;
  for (const auto& l : arch.layers) {
    const MulCounts c = mul_counts_layer(l, arch.intervals, arch.degree, batch);
    total.matmul += c.matmul;
    total.bspline += c.bspline;
  }
  return total;
}

/// Multiplication BitOps of the KAN stack: the basis-times-weight matrix
/// multiply costs bits_b * bits_w per multiplication; the recursion term
/// costs bits_a^2 and disappears entirely when basis values come from a
/// precomputed table.
inline std::int64_t bitops_kan(const ArchDescriptor& arch, int bits_w, int bits_a, int bits_b,
                               std::int64_t batch = 1, bool tabulated = false) {
  std::int64_t total = 0;
  for (const auto& l : arch.layers) {
    const MulCounts c = mul_counts_layer(l, arch.intervals, arch.degree, batch);
    total += c.matmul * bits_b * bits_w;
    if (!tabulated) total += c.bspline * static_cast<std::int64_t>(bits_a) * bits_a;
  }
  return total;
}

/// Multiplication BitOps of an MLP with the same layer dimensions.
inline std::int64_t bitops_mlp(const ArchDescriptor& arch, int bits_w, int bits_a,
                               std::int64_t batch = 1) {
  std::int64_t total = 0;
  for (const auto& l : arch.layers)
    total += batch * l.eff_n_out() * l.eff_n_in() * bits_a * bits_w;
  return total;
}

/// Memory of the shared half-support basis table: 2^k entries per stored
/// knot interval, h bits each.
inline std::int64_t lut_memory_bits(int degree, int k, int h) {
  return (std::int64_t{1} << k) * ((degree + 2) / 2) * h;
}

/// Total stored bits when every learned activation is tabulated with
/// 2^bits_a entries of h bits.
inline std::int64_t spline_table_bits(const ArchDescriptor& arch, int bits_a, int h) {
  return arch.connections() * (std::int64_t{1} << bits_a) * h;
}

/// 32-bit coefficient storage of the plain model.
inline std::int64_t fp32_coeff_bits(const ArchDescriptor& arch) {
  return arch.connections() * arch.basis_count() * 32;
}

inline std::int64_t param_count(const ArchDescriptor& arch) {
  return arch.connections() * arch.basis_count();
}

/// Empirical device-resource estimate for per-connection spline tabulation:
/// about 9 FPGA LUTs per connection.
inline std::int64_t fpga_lut_estimate(const ArchDescriptor& arch) {
  return 9 * arch.connections();
}

struct CostReport {
  std::int64_t muls_matmul = 0;
  std::int64_t muls_bspline = 0;
  std::int64_t bitops = 0;
  std::int64_t lut_memory_bits = 0;
  std::int64_t spline_table_bits = 0;
  std::int64_t fp32_coeff_bits = 0;
  std::int64_t param_count = 0;
  std::int64_t fpga_lut_estimate = 0;
};

inline CostReport cost_report(const ArchDescriptor& arch, int bits_w, int bits_a, int bits_b,
                              std::int64_t batch = 1, bool tabulated = false) {
  CostReport r;
  const MulCounts c = mul_counts(arch, batch);
  r.muls_matmul = c.matmul;
  r.muls_bspline = tabulated ? 0 : c.bspline;
  r.bitops = bitops_kan(arch, bits_w, bits_a, bits_b, batch, tabulated);
  // Table sizes are only meaningful in the 8-bit-and-below regime; clamp the
  // sentinel widths so the report always carries comparable numbers.
  const int k = std::min(bits_a, 8);
  const int h = std::min(std::max(bits_b, 2), 8);
  r.lut_memory_bits = lut_memory_bits(arch.degree, std::max(k, 1), h);
  r.spline_table_bits = spline_table_bits(arch, std::max(k, 1), h);
  r.fp32_coeff_bits = fp32_coeff_bits(arch);
  r.param_count = param_count(arch);
  r.fpga_lut_estimate = fpga_lut_estimate(arch);
  return r;
}

/// Descriptor of an instantiated model (for cost checks on live layers).
inline ArchDescriptor arch_of(const Model& model, const std::string& name = "model") {
  ArchDescriptor arch;
  arch.name = name;
  bool have_grid = false;
  std::vector<int> shape = model.input_shape;
  int h = shape.size() == 3 ? shape[1] : 0;
  int w = shape.size() == 3 ? shape[2] : 0;
  for (const auto& layer : model.layers) {
    if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
      if (!have_grid) {
        arch.intervals = lin->grid.intervals();
        arch.degree = lin->grid.degree();
        have_grid = true;
      }
      ArchLayer al;
      al.kind = ArchLayer::Kind::kLinear;
      al.n_in = lin->n_in;
      al.n_out = lin->n_out;
      arch.layers.push_back(al);
    } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
      if (!have_grid) {
        arch.intervals = conv->grid.intervals();
        arch.degree = conv->grid.degree();
        have_grid = true;
      }
      ArchLayer al;
      al.kind = ArchLayer::Kind::kConv;
      al.c_in = conv->c_in;
      al.c_out = conv->c_out;
      al.kernel = conv->kernel;
      al.stride = conv->stride;
      al.padding = conv->padding;
      al.h_out = conv_out_dim(h, conv->kernel, conv->stride, conv->padding);
      al.w_out = conv_out_dim(w, conv->kernel, conv->stride, conv->padding);
      h = static_cast<int>(al.h_out);
      w = static_cast<int>(al.w_out);
      arch.layers.push_back(al);
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      h /= pool->window;
      w /= pool->window;
    }
  }
  return arch;
}

/// Loads an architecture descriptor from its JSON file form.
inline ArchDescriptor arch_from_json(const nlohmann::json& j) {
  ArchDescriptor arch;
  arch.name = j.value("name", "arch");
  const auto& grid = j.at("grid");
  arch.intervals = grid.at("intervals").get<int>();
  arch.degree = grid.at("degree").get<int>();
  for (const auto& jl : j.at("layers")) {
    const std::string type = jl.at("type").get<std::string>();
    ArchLayer al;
    if (type == "linear") {
      al.kind = ArchLayer::Kind::kLinear;
      al.n_in = jl.at("n_in").get<std::int64_t>();
      al.n_out = jl.at("n_out").get<std::int64_t>();
    } else if (type == "conv") {
      al.kind = ArchLayer::Kind::kConv;
      al.c_in = jl.at("c_in").get<std::int64_t>();
      al.c_out = jl.at("c_out").get<std::int64_t>();
      al.kernel = jl.at("kernel").get<std::int64_t>();
      al.h_out = jl.at("h_out").get<std::int64_t>();
      al.w_out = jl.at("w_out").get<std::int64_t>();
      al.stride = jl.value("stride", std::int64_t{1});
      al.padding = jl.value("padding", std::int64_t{0});
    } else if (type == "maxpool" || type == "flatten") {
      continue;  // no cost contribution
    } else {
      throw std::invalid_argument("arch_from_json: unknown layer type '" + type + "'");
    }
    if (al.eff_n_in() <= 0 || al.eff_n_out() <= 0)
      throw std::invalid_argument("arch_from_json: non-positive layer dimensions");
    arch.layers.push_back(al);
  }
  return arch;
}

inline ArchDescriptor load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_arch: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return arch_from_json(j);
}

}  // namespace kantize
