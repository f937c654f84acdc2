#pragma once

#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kantize/cost.hpp"
#include "kantize/dataset.hpp"
#include "kantize/eval.hpp"
#include "kantize/io.hpp"
#include "kantize/plot.hpp"

namespace kantize {

/// Parses a dataset specification string:
///   synthetic:<kind>:<n>:<seed>[:<dims>[:<classes>[:<skip>]]]
///   idx:<images_path>:<labels_path>
///   mnist-train:<dir>   (standard IDX file names inside <dir>)
///   mnist-test:<dir>
inline Dataset load_dataset_spec(const std::string& spec, double domain_lo, double domain_hi) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty()) throw std::invalid_argument("dataset spec is empty");

  if (parts[0] == "synthetic") {
    if (parts.size() < 4) throw std::invalid_argument("synthetic spec needs kind:n:seed");
    const int dims = parts.size() > 4 ? std::stoi(parts[4]) : 2;
    const int classes = parts.size() > 5 ? std::stoi(parts[5]) : 2;
    const std::size_t skip = parts.size() > 6 ? std::stoull(parts[6]) : 0;
    return synthetic_dataset(parts[1], std::stoull(parts[2]), std::stoull(parts[3]), dims,
                             classes, skip);
  }
  if (parts[0] == "idx") {
    if (parts.size() != 3) throw std::invalid_argument("idx spec needs images:labels");
    return load_idx(parts[1], parts[2], domain_lo, domain_hi);
  }
  if (parts[0] == "mnist-train" || parts[0] == "mnist-test") {
    if (parts.size() != 2) throw std::invalid_argument(parts[0] + " spec needs a directory");
    const std::string dir = parts[1];
    const bool test = parts[0] == "mnist-test";
    const std::string img = dir + (test ? "/t10k-images-idx3-ubyte" : "/train-images-idx3-ubyte");
    const std::string lab = dir + (test ? "/t10k-labels-idx1-ubyte" : "/train-labels-idx1-ubyte");
    return load_idx(img, lab, domain_lo, domain_hi);
  }
  throw std::invalid_argument("unknown dataset spec '" + spec + "'");
}

struct SweepSpec {
  std::string model_path;
  std::string dataset;
  std::vector<int> bits_w_set{kPassthroughBits};
  std::vector<int> bits_a_set{kPassthroughBits};
  std::vector<int> bits_b_set{kPassthroughBits};
  std::vector<std::string> modes{"fake-quant"};
  std::size_t subset = 2000;
  std::uint64_t seed = 0;
  std::string out_prefix = "sweep";
  std::string format = "csv";  // csv | json (json adds a combined report file)
  int jobs = 0;                // 0 = hardware concurrency
};

inline SweepSpec sweep_from_json(const nlohmann::json& j) {
  SweepSpec s;
  s.model_path = j.at("model").get<std::string>();
  s.dataset = j.at("dataset").get<std::string>();
  if (j.contains("bw_w")) s.bits_w_set = j.at("bw_w").get<std::vector<int>>();
  if (j.contains("bw_a")) s.bits_a_set = j.at("bw_a").get<std::vector<int>>();
  if (j.contains("bw_b")) s.bits_b_set = j.at("bw_b").get<std::vector<int>>();
  if (j.contains("modes")) s.modes = j.at("modes").get<std::vector<std::string>>();
  if (j.contains("subset")) s.subset = j.at("subset").get<std::size_t>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out")) s.out_prefix = j.at("out").get<std::string>();
  if (j.contains("format")) s.format = j.at("format").get<std::string>();
  if (j.contains("jobs")) s.jobs = j.at("jobs").get<int>();
  return s;
}

struct SweepConfig {
  std::string mode;
  int bits_w = kPassthroughBits;
  int bits_a = kPassthroughBits;  // k (bits per knot interval) in bspline-lut mode
  int bits_b = kPassthroughBits;  // h (stored value bits) in tabulated modes
};

/// Cartesian product of the bit-width sets and modes, in a stable order.
/// Combinations a mode cannot realize are dropped: table modes need
/// sub-9-bit addressing and value widths, and spline-table mode reads only
/// (bw_a, h), so its weight width is pinned to the passthrough sentinel.
inline std::vector<SweepConfig> enumerate_configs(const SweepSpec& spec) {
  if (spec.bits_w_set.empty() || spec.bits_a_set.empty() || spec.bits_b_set.empty() ||
      spec.modes.empty())
    throw std::invalid_argument("enumerate_configs: empty bit-width or mode set");

  std::vector<SweepConfig> out;
  for (const auto& mode : spec.modes) {
    if (mode == "fake-quant") {
      for (int w : spec.bits_w_set)
        for (int a : spec.bits_a_set)
          for (int b : spec.bits_b_set) out.push_back({mode, w, a, b});
    } else if (mode == "bspline-lut") {
      for (int w : spec.bits_w_set)
        for (int a : spec.bits_a_set) {
          if (a < 1 || a > 8) continue;
          for (int b : spec.bits_b_set) {
            if (b < 2 || b > 8) continue;
            out.push_back({mode, w, a, b});
          }
        }
    } else if (mode == "spline-table") {
      for (int a : spec.bits_a_set) {
        if (a < 1 || a > 8) continue;
        for (int b : spec.bits_b_set) {
          if (b < 2 || b > 8) continue;
          out.push_back({mode, kPassthroughBits, a, b});
        }
      }
    } else {
      throw std::invalid_argument("enumerate_configs: unknown mode '" + mode + "'");
    }
  }
  return out;
}

/// One swept configuration with its measured accuracy and analytic costs.
struct ParetoPoint {
  SweepConfig config;
  double accuracy = 0.0;
  std::int64_t bitops = 0;
  std::int64_t lut_mem_bits = 0;
  std::int64_t spline_mem_bits = 0;
  std::int64_t fp32_coeff_bits = 0;
};

/// Indices of the non-dominated subset when maximizing `score` and
/// minimizing `cost`. A point survives unless some other point is at least
/// as good on both axes and strictly better on one; exact ties are all kept.
inline std::vector<std::size_t> pareto_front(std::span<const double> score,
                                             std::span<const double> cost) {
  if (score.size() != cost.size()) throw std::invalid_argument("pareto_front: length mismatch");
  if (score.empty()) throw std::invalid_argument("pareto_front: empty input");
  std::vector<std::size_t> keep;
  for (std::size_t p = 0; p < score.size(); ++p) {
    bool dominated = false;
    for (std::size_t q = 0; q < score.size() && !dominated; ++q) {
      if (q == p) continue;
      if (score[q] >= score[p] && cost[q] <= cost[p] &&
          (score[q] > score[p] || cost[q] < cost[p]))
        dominated = true;
    }
    if (!dominated) keep.push_back(p);
  }
  return keep;
}

enum class ParetoObjective { kBitops, kTableMemory };

inline std::vector<std::size_t> pareto_front(std::span<const ParetoPoint> points,
                                             ParetoObjective objective) {
  std::vector<double> acc(points.size()), cost(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    acc[i] = points[i].accuracy;
    cost[i] = objective == ParetoObjective::kBitops
                  ? static_cast<double>(points[i].bitops)
                  : static_cast<double>(points[i].lut_mem_bits + points[i].spline_mem_bits);
  }
  return pareto_front(acc, cost);
}

namespace detail {

inline void fill_costs(ParetoPoint& p, const ArchDescriptor& arch) {
  const auto& c = p.config;
  p.fp32_coeff_bits = fp32_coeff_bits(arch);
  if (c.mode == "fake-quant") {
    p.bitops = bitops_kan(arch, c.bits_w, c.bits_a, c.bits_b, 1, false);
    p.lut_mem_bits = 0;
    p.spline_mem_bits = 0;
  } else if (c.mode == "bspline-lut") {
    p.bitops = bitops_kan(arch, c.bits_w, c.bits_a, c.bits_b, 1, true);
    p.lut_mem_bits = lut_memory_bits(arch.degree, c.bits_a, c.bits_b);
    p.spline_mem_bits = 0;
  } else {  // spline-table: lookups and additions only
    p.bitops = 0;
    p.lut_mem_bits = 0;
    p.spline_mem_bits = spline_table_bits(arch, c.bits_a, c.bits_b);
  }
}

inline std::string csv_header() {
  return "model,mode,bw_w,bw_a,bw_b,accuracy,bitops,lut_mem_bits,spline_mem_bits,"
         "fp32_coeff_bits";
}

inline std::string csv_row(const std::string& model_name, const ParetoPoint& p) {
  char acc[40];
  std::snprintf(acc, sizeof acc, "%.17g", p.accuracy);
  std::string row = model_name + "," + p.config.mode + "," + std::to_string(p.config.bits_w) +
                    "," + std::to_string(p.config.bits_a) + "," +
                    std::to_string(p.config.bits_b) + "," + acc + "," +
                    std::to_string(p.bitops) + "," + std::to_string(p.lut_mem_bits) + "," +
                    std::to_string(p.spline_mem_bits) + "," + std::to_string(p.fp32_coeff_bits);
  return row;
}

}  // namespace detail

struct SweepReport {
  std::string model_name;
  std::vector<ParetoPoint> points;
  std::vector<std::size_t> pareto_bitops;
  std::vector<std::size_t> pareto_memory;  // only over rows with table memory
  std::vector<std::string> written_files;
};

/// Evaluates every configuration (accuracy on a fixed seeded subset plus
/// analytic costs), extracts Pareto subsets, and writes the report files.
/// Rerunning with the same spec reproduces the outputs byte for byte.
inline SweepReport run_sweep(const SweepSpec& spec, const Model& model, const Dataset& full_ds,
                             const std::string& model_name) {
  const auto configs = enumerate_configs(spec);
  if (configs.empty()) throw std::invalid_argument("run_sweep: no valid configurations");
  const ArchDescriptor arch = arch_of(model, model_name);

  const auto indices = subset_indices(full_ds.size(), spec.subset, spec.seed);
  const Dataset ds = take_subset(full_ds, indices);

  // Tables shared by every configuration that needs them, built up front so
  // the parallel evaluation phase is read-only.
  std::map<std::pair<int, int>, BsplineLut> luts;
  std::map<std::pair<int, int>, std::vector<SplineTableSet>> table_sets;
  for (const auto& c : configs) {
    const std::pair<int, int> key{c.bits_a, c.bits_b};
    if (c.mode == "bspline-lut" && !luts.count(key))
      luts.emplace(key, build_bspline_lut(model.grid().degree(), c.bits_a, c.bits_b));
    if (c.mode == "spline-table" && !table_sets.count(key)) {
      std::vector<SplineTableSet> sets;
      for (const auto& layer : model.layers) {
        if (const auto* lin = std::get_if<KanLinearLayer>(&layer))
          sets.push_back(build_spline_tables(*lin, c.bits_a, c.bits_b));
        else if (const auto* conv = std::get_if<ConvKanLayer>(&layer))
          sets.push_back(build_spline_tables(*conv, c.bits_a, c.bits_b));
      }
      table_sets.emplace(key, std::move(sets));
    }
  }

  auto eval_one = [&](const SweepConfig& c) {
    ParetoPoint p;
    p.config = c;
    try {
      EvalOptions opts;
      if (c.mode == "fake-quant") {
        opts.mode = EvalMode::kFakeQuant;
        opts.qcfg.bits_w = c.bits_w;
        opts.qcfg.bits_a = c.bits_a;
        opts.qcfg.bits_b = c.bits_b;
      } else if (c.mode == "bspline-lut") {
        opts.mode = EvalMode::kBsplineLut;
        opts.qcfg.bits_w = c.bits_w;
        opts.lut = &luts.at({c.bits_a, c.bits_b});
      } else {
        opts.mode = EvalMode::kSplineTable;
        opts.tables = &table_sets.at({c.bits_a, c.bits_b});
      }
      p.accuracy = evaluate_accuracy(model, ds, opts);
    } catch (const std::exception& e) {
      throw std::runtime_error("config (" + c.mode + ", w=" + std::to_string(c.bits_w) +
                               ", a=" + std::to_string(c.bits_a) + ", b=" +
                               std::to_string(c.bits_b) + "): " + e.what());
    }
    detail::fill_costs(p, arch);
    return p;
  };

  SweepReport report;
  report.model_name = model_name;
  report.points.resize(configs.size());

  const int jobs = spec.jobs > 0
                       ? spec.jobs
                       : std::max(1u, std::thread::hardware_concurrency());
  if (jobs <= 1 || configs.size() <= 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) report.points[i] = eval_one(configs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (int t = 0; t < jobs; ++t)
      workers.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= configs.size()) return;
          try {
            report.points[i] = eval_one(configs[i]);
          } catch (...) {
            const std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  report.pareto_bitops = pareto_front(report.points, ParetoObjective::kBitops);

  std::vector<std::size_t> with_tables;
  for (std::size_t i = 0; i < report.points.size(); ++i)
    if (report.points[i].lut_mem_bits + report.points[i].spline_mem_bits > 0)
      with_tables.push_back(i);
  if (!with_tables.empty()) {
    std::vector<double> acc, mem;
    for (auto i : with_tables) {
      acc.push_back(report.points[i].accuracy);
      mem.push_back(static_cast<double>(report.points[i].lut_mem_bits +
                                        report.points[i].spline_mem_bits));
    }
    for (auto local : pareto_front(acc, mem))
      report.pareto_memory.push_back(with_tables[local]);
  }

  // ---- report files ----
  auto write_csv = [&](const std::string& path, const std::vector<std::size_t>* subset_idx) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("run_sweep: cannot open " + path);
    out << detail::csv_header() << "\n";
    if (subset_idx) {
      for (auto i : *subset_idx) out << detail::csv_row(model_name, report.points[i]) << "\n";
    } else {
      for (const auto& p : report.points) out << detail::csv_row(model_name, p) << "\n";
    }
    report.written_files.push_back(path);
  };
  write_csv(spec.out_prefix + "_points.csv", nullptr);
  write_csv(spec.out_prefix + "_pareto.csv", &report.pareto_bitops);
  if (!report.pareto_memory.empty())
    write_csv(spec.out_prefix + "_pareto_mem.csv", &report.pareto_memory);

  if (spec.format == "json") {
    nlohmann::ordered_json j;
    j["model"] = model_name;
    j["dataset"] = spec.dataset;
    j["subset"] = ds.size();
    j["seed"] = spec.seed;
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : report.points) {
      nlohmann::ordered_json jp;
      jp["mode"] = p.config.mode;
      jp["bw_w"] = p.config.bits_w;
      jp["bw_a"] = p.config.bits_a;
      jp["bw_b"] = p.config.bits_b;
      jp["accuracy"] = p.accuracy;
      jp["bitops"] = p.bitops;
      jp["lut_mem_bits"] = p.lut_mem_bits;
      jp["spline_mem_bits"] = p.spline_mem_bits;
      jp["fp32_coeff_bits"] = p.fp32_coeff_bits;
      j["points"].push_back(std::move(jp));
    }
    j["pareto_bitops"] = report.pareto_bitops;
    j["pareto_memory"] = report.pareto_memory;
    const std::string path = spec.out_prefix + "_report.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("run_sweep: cannot open " + path);
    out << j.dump(2) << "\n";
    report.written_files.push_back(path);
  }

  // Plots are a convenience on top of the CSV; failures are reported but do
  // not fail the sweep.
  try {
    std::vector<PlotPoint> pts;
    for (const auto& p : report.points)
      pts.push_back({static_cast<double>(p.bitops), p.accuracy, p.config.bits_w,
                     p.config.bits_a, p.config.bits_b});
    write_svg_scatter(spec.out_prefix + "_acc_vs_bitops.svg", pts,
                      model_name + ": accuracy vs BitOps", "BitOps", "accuracy");
    report.written_files.push_back(spec.out_prefix + "_acc_vs_bitops.svg");

    if (!with_tables.empty()) {
      std::vector<PlotPoint> mem_pts;
      for (auto i : with_tables) {
        const auto& p = report.points[i];
        mem_pts.push_back({static_cast<double>(p.lut_mem_bits + p.spline_mem_bits), p.accuracy,
                           p.config.bits_w, p.config.bits_a, p.config.bits_b});
      }
      write_svg_scatter(spec.out_prefix + "_acc_vs_memory.svg", mem_pts,
                        model_name + ": accuracy vs table memory", "table bits", "accuracy");
      report.written_files.push_back(spec.out_prefix + "_acc_vs_memory.svg");
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "plot generation failed (sweep results unaffected): %s\n", e.what());
  }

  return report;
}

/// Convenience entry: loads the model and dataset named by the spec.
inline SweepReport run_sweep(const SweepSpec& spec) {
  Model model = load_model(spec.model_path);
  const GridSpec& grid = model.grid();
  Dataset ds;
  try {
    ds = load_dataset_spec(spec.dataset, grid.domain_lo(), grid.domain_hi());
  } catch (const std::exception& e) {
    throw std::runtime_error("run_sweep: dataset '" + spec.dataset + "': " + e.what());
  }
  std::string name = spec.model_path;
  const auto slash = name.find_last_of('/');
  if (slash != std::string::npos) name = name.substr(slash + 1);
  const auto dot = name.find_last_of('.');
  if (dot != std::string::npos) name = name.substr(0, dot);
  return run_sweep(spec, model, ds, name);
}

}  // namespace kantize
