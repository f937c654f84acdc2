#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kantize/matrix.hpp"

namespace kantize {

/// Inputs scaled into the grid domain, one row per sample.
struct Dataset {
  Matrix inputs;            // [N, D]
  std::vector<int> labels;  // [N]
  int n_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("load_idx: unexpected end of file in " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace detail

/// Parses big-endian IDX image/label files and scales pixel bytes linearly
/// from [0, 255] onto [domain_lo, domain_hi].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        double domain_lo = -1.0, double domain_hi = 1.0) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, images_path);
  if (img_magic != 0x00000803u)
    throw std::runtime_error("load_idx: bad magic in " + images_path +
                             " (expected 0x00000803)");
  const std::uint32_t n_images = detail::read_be32(img, images_path);
  const std::uint32_t rows = detail::read_be32(img, images_path);
  const std::uint32_t cols = detail::read_be32(img, images_path);

  const std::uint32_t lab_magic = detail::read_be32(lab, labels_path);
  if (lab_magic != 0x00000801u)
    throw std::runtime_error("load_idx: bad magic in " + labels_path +
                             " (expected 0x00000801)");
  const std::uint32_t n_labels = detail::read_be32(lab, labels_path);
  if (n_images != n_labels)
    throw std::runtime_error("load_idx: image/label count mismatch (" +
                             std::to_string(n_images) + " vs " + std::to_string(n_labels) +
                             ")");

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  Dataset ds;
  ds.inputs = Matrix(n_images, dim);
  ds.labels.resize(n_images);
  ds.name = images_path;

  const double span = (domain_hi - domain_lo) / 255.0;
  std::vector<std::uint8_t> buf(dim);
  int max_label = 0;
  for (std::uint32_t n = 0; n < n_images; ++n) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!img) throw std::runtime_error("load_idx: truncated image data in " + images_path);
    auto row = ds.inputs.row(n);
    for (std::size_t i = 0; i < dim; ++i)
      row[i] = buf[i] == 255 ? domain_hi : domain_lo + buf[i] * span;
    std::uint8_t label;
    lab.read(reinterpret_cast<char*>(&label), 1);
    if (!lab) throw std::runtime_error("load_idx: truncated label data in " + labels_path);
    ds.labels[n] = label;
    max_label = std::max(max_label, static_cast<int>(label));
  }
  ds.n_classes = max_label + 1;
  return ds;
}

/// Deterministic synthetic datasets in [-1, 1]^D.
///   "moons"  - two interleaved half circles, D = 2, 2 classes
///   "blobs"  - Gaussian clusters clipped to the domain, D = dims
///   "linsep" - linearly separable classes from random hyperplanes
/// The seed fixes the problem (cluster centers, hyperplanes) and the sample
/// stream; `skip` discards leading samples, so disjoint train/test splits of
/// one problem come from the same seed with different skips.
inline Dataset synthetic_dataset(const std::string& kind, std::size_t n, std::uint64_t seed,
                                 int dims = 2, int classes = 2, std::size_t skip = 0) {
  if (n != 0 && (dims < 1 || classes < 2))
    throw std::invalid_argument("synthetic_dataset: bad dims/classes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.name = kind;
  const std::size_t total = skip + n;
  if (kind == "moons") {
    dims = 2;
    classes = 2;
    ds.inputs = Matrix(n, 2);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < total; ++i) {
      const int label = static_cast<int>(rng() & 1);
      const double t = unit(rng) * std::numbers::pi;
      const double noise_x = (unit(rng) - 0.5) * 0.2;
      const double noise_y = (unit(rng) - 0.5) * 0.2;
      if (i < skip) continue;
      double x, y;
      if (label == 0) {
        x = std::cos(t) * 0.7;
        y = std::sin(t) * 0.7 - 0.25;
      } else {
        x = 0.35 - std::cos(t) * 0.7;
        y = 0.1 - std::sin(t) * 0.7 + 0.25;
      }
      ds.inputs(i - skip, 0) = std::clamp(x + noise_x, -1.0, 1.0);
      ds.inputs(i - skip, 1) = std::clamp(y + noise_y, -1.0, 1.0);
      ds.labels[i - skip] = label;
    }
  } else if (kind == "blobs") {
    ds.inputs = Matrix(n, dims);
    ds.labels.resize(n);
    Matrix centers(classes, dims);
    for (int c = 0; c < classes; ++c)
      for (int d = 0; d < dims; ++d) centers(c, d) = unit(rng) * 1.4 - 0.7;
    for (std::size_t i = 0; i < total; ++i) {
      const int label = static_cast<int>(rng() % classes);
      for (int d = 0; d < dims; ++d) {
        // Box-Muller keeps the generator self-contained and reproducible.
        const double u1 = std::max(unit(rng), 1e-12);
        const double u2 = unit(rng);
        const double g = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(2.0 * std::numbers::pi * u2);
        if (i >= skip)
          ds.inputs(i - skip, d) = std::clamp(centers(label, d) + 0.12 * g, -1.0, 1.0);
      }
      if (i >= skip) ds.labels[i - skip] = label;
    }
  } else if (kind == "linsep") {
    ds.inputs = Matrix(n, dims);
    ds.labels.resize(n);
    Matrix planes(classes, dims);
    for (int c = 0; c < classes; ++c) {
      double norm = 0.0;
      for (int d = 0; d < dims; ++d) {
        planes(c, d) = unit(rng) * 2.0 - 1.0;
        norm += planes(c, d) * planes(c, d);
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      for (int d = 0; d < dims; ++d) planes(c, d) /= norm;
    }
    std::vector<double> point(dims);
    for (std::size_t i = 0; i < total; ++i) {
      for (int d = 0; d < dims; ++d) point[d] = unit(rng) * 2.0 - 1.0;
      if (i < skip) continue;
      int best = 0;
      double best_score = -1e300;
      for (int c = 0; c < classes; ++c) {
        double score = 0.0;
        for (int d = 0; d < dims; ++d) score += planes(c, d) * point[d];
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
      for (int d = 0; d < dims; ++d) ds.inputs(i - skip, d) = point[d];
      ds.labels[i - skip] = best;
    }
  } else {
    throw std::invalid_argument("synthetic_dataset: unknown kind '" + kind + "'");
  }
  ds.n_classes = classes;
  return ds;
}

/// Copies the selected rows into a new dataset.
inline Dataset take_subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.inputs = Matrix(indices.size(), ds.inputs.cols());
  out.labels.resize(indices.size());
  out.n_classes = ds.n_classes;
  out.name = ds.name;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = ds.inputs.row(indices[i]);
    auto dst = out.inputs.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    out.labels[i] = ds.labels[indices[i]];
  }
  return out;
}

/// First `count` indices of a seeded shuffle of [0, n) — the reproducible
/// evaluation subset used by sweeps.
inline std::vector<std::size_t> subset_indices(std::size_t n, std::size_t count,
                                               std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, n));
  return idx;
}

}  // namespace kantize
