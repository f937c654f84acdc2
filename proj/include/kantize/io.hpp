#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kantize/layers.hpp"
#include "kantize/lut.hpp"
#include "kantize/spline_table.hpp"

namespace kantize {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct checksum_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit) c = (c >> 1) ^ ((c & 1) ? 0xEDB88320u : 0u);
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = ~seed;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return ~c;
}

namespace detail {

constexpr char kMagic[4] = {'K', 'A', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

inline nlohmann::ordered_json grid_json(const GridSpec& g) {
  return {{"intervals", g.intervals()},
          {"degree", g.degree()},
          {"lo", g.domain_lo()},
          {"hi", g.domain_hi()}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  return build_grid(j.at("intervals").get<int>(), j.at("degree").get<int>(),
                    j.at("lo").get<double>(), j.at("hi").get<double>());
}

inline nlohmann::ordered_json quant_json(const QuantParams& qp) {
  return {{"scale", qp.scale}, {"zero_point", qp.zero_point}, {"bits", qp.bits}};
}

inline QuantParams quant_from_json(const nlohmann::json& j) {
  QuantParams qp;
  qp.scale = j.at("scale").get<double>();
  qp.zero_point = j.at("zero_point").get<std::int64_t>();
  qp.bits = j.at("bits").get<int>();
  qp.q_lo = 0;
  qp.q_hi = qp.bits >= 1 && qp.bits <= 8 ? (std::int64_t{1} << qp.bits) - 1 : 0;
  return qp;
}

}  // namespace detail

/// A model plus any tables that were serialized alongside it.
struct LoadedContainer {
  Model model;
  std::optional<BsplineLut> lut;
  std::vector<SplineTableSet> spline_tables;  // one per KAN layer when present
};

/// Container layout: "KANT" magic, u32 LE version, u32 LE metadata length,
/// UTF-8 JSON metadata, raw payload (f32 LE coefficients and u8 table blobs
/// in declared order), u32 LE CRC-32 of the payload.
inline void save_container(const Model& model, const std::string& path,
                           const BsplineLut* lut = nullptr,
                           const std::vector<SplineTableSet>* spline_tables = nullptr) {
  nlohmann::ordered_json meta;
  meta["input_shape"] = model.input_shape;
  meta["layers"] = nlohmann::ordered_json::array();

  std::vector<std::uint8_t> payload;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();

  auto add_f32_tensor = [&](const std::string& name, const Matrix& m) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["dtype"] = "f32";
    t["shape"] = {m.rows(), m.cols()};
    t["offset"] = payload.size();
    t["bytes"] = m.size() * 4;
    for (double v : m.flat()) detail::put_f32(payload, static_cast<float>(v));
    tensors.push_back(std::move(t));
  };
  auto add_u8_tensor = [&](const std::string& name, const std::vector<std::uint8_t>& data,
                           const QuantParams& qp, nlohmann::ordered_json attrs) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["dtype"] = "u8";
    t["shape"] = {data.size()};
    t["offset"] = payload.size();
    t["bytes"] = data.size();
    t["quant"] = detail::quant_json(qp);
    t["attrs"] = std::move(attrs);
    payload.insert(payload.end(), data.begin(), data.end());
    tensors.push_back(std::move(t));
  };

  int idx = 0;
  for (const auto& layer : model.layers) {
    nlohmann::ordered_json jl;
    if (const auto* lin = std::get_if<KanLinearLayer>(&layer)) {
      jl["type"] = "kan_linear";
      jl["n_in"] = lin->n_in;
      jl["n_out"] = lin->n_out;
      jl["grid"] = detail::grid_json(lin->grid);
      add_f32_tensor("layer" + std::to_string(idx) + ".coeffs", lin->coeffs);
    } else if (const auto* conv = std::get_if<ConvKanLayer>(&layer)) {
      jl["type"] = "kan_conv";
      jl["c_in"] = conv->c_in;
      jl["c_out"] = conv->c_out;
      jl["kernel"] = conv->kernel;
      jl["stride"] = conv->stride;
      jl["padding"] = conv->padding;
      jl["grid"] = detail::grid_json(conv->grid);
      add_f32_tensor("layer" + std::to_string(idx) + ".coeffs", conv->coeffs);
    } else if (const auto* pool = std::get_if<MaxPoolLayer>(&layer)) {
      jl["type"] = "maxpool";
      jl["window"] = pool->window;
    } else {
      jl["type"] = "flatten";
    }
    meta["layers"].push_back(std::move(jl));
    ++idx;
  }

  if (lut) {
    nlohmann::ordered_json attrs;
    attrs["kind"] = "bspline_lut";
    attrs["degree"] = lut->degree;
    attrs["bits_per_interval"] = lut->bits_per_interval;
    attrs["value_bits"] = lut->value_bits;
    add_u8_tensor("bspline_lut.entries", lut->entries, lut->value_qp, std::move(attrs));
  }
  if (spline_tables) {
    int t = 0;
    for (const auto& set : *spline_tables) {
      nlohmann::ordered_json attrs;
      attrs["kind"] = "spline_tables";
      attrs["layer"] = t;
      attrs["n_in"] = set.n_in;
      attrs["n_out"] = set.n_out;
      attrs["bits_a"] = set.bits_a;
      attrs["value_bits"] = set.value_bits;
      attrs["in_quant"] = detail::quant_json(set.in_qp);
      add_u8_tensor("spline_tables." + std::to_string(t), set.values, set.out_qp,
                    std::move(attrs));
      ++t;
    }
  }

  meta["tensors"] = std::move(tensors);
  const std::string meta_str = meta.dump();

  std::vector<std::uint8_t> file;
  file.insert(file.end(), detail::kMagic, detail::kMagic + 4);
  detail::put_u32(file, detail::kVersion);
  detail::put_u32(file, static_cast<std::uint32_t>(meta_str.size()));
  file.insert(file.end(), meta_str.begin(), meta_str.end());
  file.insert(file.end(), payload.begin(), payload.end());
  detail::put_u32(file, crc32(payload.data(), payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("save_container: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(file.data()),
            static_cast<std::streamsize>(file.size()));
  if (!out) throw io_error("save_container: write failed for " + path);
}

inline void save_model(const Model& model, const std::string& path) {
  save_container(model, path);
}

inline LoadedContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_container: cannot open " + path);
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

  if (file.size() < 12 || std::memcmp(file.data(), detail::kMagic, 4) != 0)
    throw format_error("load_container: bad magic bytes");
  const std::uint32_t version = detail::get_u32(file.data() + 4);
  if (version != detail::kVersion)
    throw format_error("load_container: unsupported version " + std::to_string(version));
  const std::uint32_t meta_len = detail::get_u32(file.data() + 8);
  if (file.size() < 12ull + meta_len + 4)
    throw format_error("load_container: truncated file");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(file.begin() + 12, file.begin() + 12 + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("load_container: bad metadata: ") + e.what());
  }

  const std::uint8_t* payload = file.data() + 12 + meta_len;
  const std::size_t payload_len = file.size() - 12 - meta_len - 4;

  LoadedContainer result;
  result.model.input_shape = meta.at("input_shape").get<std::vector<int>>();

  struct TensorRef {
    std::string dtype;
    std::size_t offset = 0, bytes = 0;
    const nlohmann::json* j = nullptr;
  };
  std::vector<std::pair<std::string, TensorRef>> tensor_list;
  std::size_t declared_payload = 0;
  for (const auto& t : meta.at("tensors")) {
    TensorRef ref;
    ref.dtype = t.at("dtype").get<std::string>();
    ref.offset = t.at("offset").get<std::size_t>();
    ref.bytes = t.at("bytes").get<std::size_t>();
    ref.j = &t;
    declared_payload = std::max(declared_payload, ref.offset + ref.bytes);
    tensor_list.emplace_back(t.at("name").get<std::string>(), ref);
  }
  // Length first (truncation is a format problem), checksum second.
  if (payload_len < declared_payload)
    throw format_error("load_container: truncated file (payload has " +
                       std::to_string(payload_len) + " of " +
                       std::to_string(declared_payload) + " bytes)");
  const std::uint32_t stored_crc = detail::get_u32(payload + payload_len);
  if (crc32(payload, payload_len) != stored_crc)
    throw checksum_error("load_container: payload checksum mismatch");
  auto find_tensor = [&](const std::string& name) -> const TensorRef* {
    for (const auto& [n, ref] : tensor_list)
      if (n == name) return &ref;
    return nullptr;
  };
  auto read_matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const TensorRef* ref = find_tensor(name);
    if (!ref) throw format_error("load_container: missing tensor '" + name + "'");
    if (ref->bytes != rows * cols * 4)
      throw format_error("load_container: tensor '" + name + "' has unexpected size");
    Matrix m(rows, cols);
    auto flat = m.flat();
    for (std::size_t i = 0; i < flat.size(); ++i)
      flat[i] = detail::get_f32(payload + ref->offset + i * 4);
    return m;
  };

  int idx = 0;
  for (const auto& jl : meta.at("layers")) {
    const std::string type = jl.at("type").get<std::string>();
    if (type == "kan_linear") {
      KanLinearLayer lin;
      lin.n_in = jl.at("n_in").get<int>();
      lin.n_out = jl.at("n_out").get<int>();
      lin.grid = detail::grid_from_json(jl.at("grid"));
      lin.coeffs = read_matrix("layer" + std::to_string(idx) + ".coeffs",
                               static_cast<std::size_t>(lin.n_in) * lin.grid.basis_count(),
                               static_cast<std::size_t>(lin.n_out));
      result.model.layers.emplace_back(std::move(lin));
    } else if (type == "kan_conv") {
      ConvKanLayer conv;
      conv.c_in = jl.at("c_in").get<int>();
      conv.c_out = jl.at("c_out").get<int>();
      conv.kernel = jl.at("kernel").get<int>();
      conv.stride = jl.at("stride").get<int>();
      conv.padding = jl.at("padding").get<int>();
      conv.grid = detail::grid_from_json(jl.at("grid"));
      conv.coeffs = read_matrix(
          "layer" + std::to_string(idx) + ".coeffs",
          static_cast<std::size_t>(conv.patch_size()) * conv.grid.basis_count(),
          static_cast<std::size_t>(conv.c_out));
      result.model.layers.emplace_back(std::move(conv));
    } else if (type == "maxpool") {
      result.model.layers.emplace_back(MaxPoolLayer{jl.value("window", 2)});
    } else if (type == "flatten") {
      result.model.layers.emplace_back(FlattenLayer{});
    } else {
      throw format_error("load_container: unknown layer type '" + type + "'");
    }
    ++idx;
  }

  for (const auto& [name, ref] : tensor_list) {
    if (ref.dtype != "u8") continue;
    const auto& t = *ref.j;
    const auto& attrs = t.at("attrs");
    const std::string kind = attrs.at("kind").get<std::string>();
    std::vector<std::uint8_t> data(payload + ref.offset, payload + ref.offset + ref.bytes);
    if (kind == "bspline_lut") {
      BsplineLut lut;
      lut.degree = attrs.at("degree").get<int>();
      lut.bits_per_interval = attrs.at("bits_per_interval").get<int>();
      lut.value_bits = attrs.at("value_bits").get<int>();
      lut.value_qp = detail::quant_from_json(t.at("quant"));
      lut.entries = std::move(data);
      result.lut = std::move(lut);
    } else if (kind == "spline_tables") {
      SplineTableSet set;
      set.n_in = attrs.at("n_in").get<int>();
      set.n_out = attrs.at("n_out").get<int>();
      set.bits_a = attrs.at("bits_a").get<int>();
      set.value_bits = attrs.at("value_bits").get<int>();
      set.in_qp = detail::quant_from_json(attrs.at("in_quant"));
      set.out_qp = detail::quant_from_json(t.at("quant"));
      set.values = std::move(data);
      result.spline_tables.push_back(std::move(set));
    }
  }

  result.model.validate();
  return result;
}

inline Model load_model(const std::string& path) { return load_container(path).model; }

/// Builds an uninitialized model (zero coefficients) from the JSON
/// architecture descriptor form used by the cost tooling. The grid domain
/// defaults to [-1, 1] unless the descriptor carries a "domain" field.
inline Model model_from_descriptor(const nlohmann::json& j) {
  double lo = -1.0, hi = 1.0;
  if (j.contains("domain")) {
    lo = j.at("domain").at(0).get<double>();
    hi = j.at("domain").at(1).get<double>();
  }
  const GridSpec grid = build_grid(j.at("grid").at("intervals").get<int>(),
                                   j.at("grid").at("degree").get<int>(), lo, hi);
  Model model;
  model.input_shape = j.at("input").get<std::vector<int>>();
  for (const auto& jl : j.at("layers")) {
    const std::string type = jl.at("type").get<std::string>();
    if (type == "linear") {
      model.layers.emplace_back(KanLinearLayer::zeros(jl.at("n_in").get<int>(),
                                                      jl.at("n_out").get<int>(), grid));
    } else if (type == "conv") {
      model.layers.emplace_back(ConvKanLayer::zeros(
          jl.at("c_in").get<int>(), jl.at("c_out").get<int>(), jl.at("kernel").get<int>(),
          jl.value("stride", 1), jl.value("padding", 0), grid));
    } else if (type == "maxpool") {
      model.layers.emplace_back(MaxPoolLayer{jl.value("window", 2)});
    } else if (type == "flatten") {
      model.layers.emplace_back(FlattenLayer{});
    } else {
      throw format_error("model_from_descriptor: unknown layer type '" + type + "'");
    }
  }
  model.validate();
  return model;
}

inline Model model_from_descriptor_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("model_from_descriptor: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_descriptor(j);
}

}  // namespace kantize
