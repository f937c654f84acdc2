// Command-line front end: training, evaluation, cost reports, tabulation,
// bit-width sweeps, Pareto extraction and plotting.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kantize/kantize.hpp"

namespace {

using namespace kantize;

std::vector<int> parse_bit_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  if (out.empty()) throw CLI::ValidationError("bit list is empty");
  return out;
}

std::string resolve_dataset_spec(std::string spec) {
  // Bare "mnist-train"/"mnist-test" pull the directory from KANTIZE_DATA_DIR.
  if (spec == "mnist-train" || spec == "mnist-test") {
    const char* dir = std::getenv("KANTIZE_DATA_DIR");
    if (!dir)
      throw CLI::ValidationError("--data " + spec +
                                 " requires KANTIZE_DATA_DIR or an explicit directory");
    spec += ":" + std::string(dir);
  }
  return spec;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

std::size_t column_of(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw std::runtime_error("CSV has no '" + name + "' column");
}

int run_train(const std::string& arch_path, const std::string& data_spec,
              const std::string& test_spec, const TrainConfig& cfg, const std::string& out,
              const std::string& loss_csv) {
  Model model = model_from_descriptor_file(arch_path);
  init_model(model, cfg.seed);
  const GridSpec& grid = model.grid();
  Dataset train_ds =
      load_dataset_spec(resolve_dataset_spec(data_spec), grid.domain_lo(), grid.domain_hi());
  std::printf("training on %zu samples (%zu features, %d classes)\n", train_ds.size(),
              train_ds.inputs.cols(), train_ds.n_classes);

  const TrainResult result = train(model, train_ds, cfg);
  std::printf("final training loss %.6f\n", result.epoch_losses.back());

  if (!loss_csv.empty()) {
    std::ofstream lc(loss_csv, std::ios::trunc);
    lc << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", result.epoch_losses[e]);
      lc << e << "," << buf << "\n";
    }
    std::printf("wrote %s\n", loss_csv.c_str());
  }

  if (!test_spec.empty()) {
    Dataset test_ds =
        load_dataset_spec(resolve_dataset_spec(test_spec), grid.domain_lo(), grid.domain_hi());
    const double acc = evaluate_accuracy(model, test_ds);
    std::printf("test accuracy %.4f\n", acc);
  }

  save_model(model, out);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_spec,
             const std::string& mode_str, int bw_w, int bw_a, int bw_b,
             std::size_t subset, std::uint64_t seed, const std::string& a_range,
             bool table_bits_given) {
  const LoadedContainer container = load_container(model_path);
  const Model& model = container.model;
  const GridSpec& grid = model.grid();
  Dataset ds =
      load_dataset_spec(resolve_dataset_spec(data_spec), grid.domain_lo(), grid.domain_hi());
  if (subset > 0 && subset < ds.size()) {
    const auto idx = subset_indices(ds.size(), subset, seed);
    ds = take_subset(ds, idx);
  }

  EvalOptions opts;
  opts.mode = eval_mode_from_string(mode_str);
  opts.qcfg.bits_w = bw_w;
  opts.qcfg.bits_a = bw_a;
  opts.qcfg.bits_b = bw_b;
  if (a_range == "calibrated") {
    opts.qcfg.a_range_policy = QuantConfig::ARangePolicy::kCalibrated;
    opts.a_ranges = calibrate_activation_ranges(model, ds.inputs);
  } else if (a_range != "grid") {
    throw CLI::ValidationError("--a-range must be grid or calibrated");
  }

  // Tables stored in the container are used as-is; explicit --bw-a/--bw-b
  // flags request freshly built tables at those widths instead.
  BsplineLut lut;
  std::vector<SplineTableSet> tables;
  if (opts.mode == EvalMode::kBsplineLut) {
    if (container.lut && !table_bits_given) {
      lut = *container.lut;
    } else {
      lut = build_bspline_lut(grid.degree(), bw_a, bw_b);
    }
    opts.lut = &lut;
  } else if (opts.mode == EvalMode::kSplineTable) {
    if (!container.spline_tables.empty() && !table_bits_given) {
      tables = container.spline_tables;
    } else {
      for (const auto& layer : model.layers) {
        if (const auto* lin = std::get_if<KanLinearLayer>(&layer))
          tables.push_back(build_spline_tables(*lin, bw_a, bw_b));
        else if (const auto* conv = std::get_if<ConvKanLayer>(&layer))
          tables.push_back(build_spline_tables(*conv, bw_a, bw_b));
      }
    }
    opts.tables = &tables;
  }

  const double acc = evaluate_accuracy(model, ds, opts);
  std::printf("%s accuracy on %zu samples: %.6f\n", mode_str.c_str(), ds.size(), acc);
  return 0;
}

int run_cost(const std::string& arch_path, int bw_w, int bw_a, int bw_b, std::int64_t batch,
             bool tabulated, const std::string& format) {
  const ArchDescriptor arch = load_arch(arch_path);
  const CostReport r = cost_report(arch, bw_w, bw_a, bw_b, batch, tabulated);
  if (format == "json") {
    nlohmann::ordered_json j;
    j["name"] = arch.name;
    j["muls_matmul"] = r.muls_matmul;
    j["muls_bspline"] = r.muls_bspline;
    j["bitops"] = r.bitops;
    j["lut_memory_bits"] = r.lut_memory_bits;
    j["spline_table_bits"] = r.spline_table_bits;
    j["fp32_coeff_bits"] = r.fp32_coeff_bits;
    j["param_count"] = r.param_count;
    j["fpga_lut_estimate"] = r.fpga_lut_estimate;
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("arch:               %s\n", arch.name.c_str());
    std::printf("param_count:        %lld\n", static_cast<long long>(r.param_count));
    std::printf("muls_matmul:        %lld\n", static_cast<long long>(r.muls_matmul));
    std::printf("muls_bspline:       %lld\n", static_cast<long long>(r.muls_bspline));
    std::printf("bitops:             %lld\n", static_cast<long long>(r.bitops));
    std::printf("lut_memory_bits:    %lld\n", static_cast<long long>(r.lut_memory_bits));
    std::printf("spline_table_bits:  %lld\n", static_cast<long long>(r.spline_table_bits));
    std::printf("fp32_coeff_bits:    %lld\n", static_cast<long long>(r.fp32_coeff_bits));
    std::printf("fpga_lut_estimate:  %lld\n", static_cast<long long>(r.fpga_lut_estimate));
  }
  return 0;
}

int run_tabulate(const std::string& model_path, const std::string& out,
                 const std::string& mode, int bw_a, int bw_b) {
  Model model = load_model(model_path);
  if (mode == "bspline-lut") {
    const BsplineLut lut = build_bspline_lut(model.grid().degree(), bw_a, bw_b);
    save_container(model, out, &lut, nullptr);
    std::printf("wrote %s with a %dx%d basis table (%lld accounted bits)\n", out.c_str(), bw_a,
                bw_b, static_cast<long long>(lut.memory_bits()));
  } else if (mode == "spline-table") {
    std::vector<SplineTableSet> tables;
    std::int64_t bits = 0;
    for (const auto& layer : model.layers) {
      if (const auto* lin = std::get_if<KanLinearLayer>(&layer))
        tables.push_back(build_spline_tables(*lin, bw_a, bw_b));
      else if (const auto* conv = std::get_if<ConvKanLayer>(&layer))
        tables.push_back(build_spline_tables(*conv, bw_a, bw_b));
    }
    for (const auto& t : tables) bits += t.stored_bits();
    save_container(model, out, nullptr, &tables);
    std::printf("wrote %s with %zu spline table sets (%lld stored bits)\n", out.c_str(),
                tables.size(), static_cast<long long>(bits));
  } else {
    throw CLI::ValidationError("tabulate mode must be bspline-lut or spline-table");
  }
  return 0;
}

int run_pareto(const std::string& in, const std::string& objective, const std::string& out) {
  const CsvTable t = read_csv(in);
  const std::size_t acc_col = column_of(t, "accuracy");
  std::vector<double> acc, cost;
  for (const auto& row : t.rows) acc.push_back(std::stod(row[acc_col]));
  if (objective == "bitops") {
    const std::size_t c = column_of(t, "bitops");
    for (const auto& row : t.rows) cost.push_back(std::stod(row[c]));
  } else if (objective == "memory") {
    const std::size_t lc = column_of(t, "lut_mem_bits");
    const std::size_t sc = column_of(t, "spline_mem_bits");
    for (const auto& row : t.rows) cost.push_back(std::stod(row[lc]) + std::stod(row[sc]));
  } else {
    throw CLI::ValidationError("objective must be bitops or memory");
  }
  const auto keep = pareto_front(acc, cost);
  std::ofstream of(out, std::ios::trunc);
  if (!of) throw std::runtime_error("cannot open " + out);
  for (std::size_t i = 0; i < t.header.size(); ++i)
    of << t.header[i] << (i + 1 < t.header.size() ? "," : "\n");
  for (auto i : keep) {
    const auto& row = t.rows[i];
    for (std::size_t c = 0; c < row.size(); ++c) of << row[c] << (c + 1 < row.size() ? "," : "\n");
  }
  std::printf("kept %zu of %zu points -> %s\n", keep.size(), t.rows.size(), out.c_str());
  return 0;
}

int run_plot(const std::string& in, const std::string& x_axis, const std::string& out) {
  const CsvTable t = read_csv(in);
  const std::size_t acc_col = column_of(t, "accuracy");
  const std::size_t w_col = column_of(t, "bw_w");
  const std::size_t a_col = column_of(t, "bw_a");
  const std::size_t b_col = column_of(t, "bw_b");

  std::vector<PlotPoint> pts;
  std::string label = x_axis;
  for (const auto& row : t.rows) {
    double x = 0.0;
    if (x_axis == "bitops") {
      x = std::stod(row[column_of(t, "bitops")]);
    } else if (x_axis == "memory") {
      x = std::stod(row[column_of(t, "lut_mem_bits")]) +
          std::stod(row[column_of(t, "spline_mem_bits")]);
    } else {
      x = std::stod(row[column_of(t, x_axis)]);
    }
    if (x <= 0) continue;
    pts.push_back({x, std::stod(row[acc_col]), std::stoi(row[w_col]), std::stoi(row[a_col]),
                   std::stoi(row[b_col])});
  }
  write_svg_scatter(out, pts, "accuracy vs " + label, label, "accuracy");
  std::printf("wrote %s (%zu points)\n", out.c_str(), pts.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KAN inference, quantization, tabulation and design-space exploration"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model from an architecture descriptor");
  std::string tr_arch, tr_data, tr_test, tr_out = "model.kant", tr_loss;
  TrainConfig tr_cfg;
  train_cmd->add_option("--arch", tr_arch, "architecture descriptor JSON")->required();
  train_cmd->add_option("--data", tr_data, "training dataset spec")->required();
  train_cmd->add_option("--test-data", tr_test, "held-out dataset spec for a final report");
  train_cmd->add_option("--out", tr_out, "output model file");
  train_cmd->add_option("--loss-csv", tr_loss, "write per-epoch losses to this CSV");
  train_cmd->add_option("--lr", tr_cfg.lr, "learning rate");
  train_cmd->add_option("--momentum", tr_cfg.momentum, "momentum");
  train_cmd->add_option("--epochs", tr_cfg.epochs, "epochs");
  train_cmd->add_option("--batch", tr_cfg.batch, "minibatch size");
  train_cmd->add_option("--seed", tr_cfg.seed, "RNG seed");
  train_cmd->add_flag("--verbose", tr_cfg.verbose, "print per-epoch losses");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate accuracy under a forward mode");
  std::string ev_model, ev_data, ev_mode = "fp32";
  int ev_w = kPassthroughBits, ev_a = kPassthroughBits, ev_b = kPassthroughBits;
  std::size_t ev_subset = 0;
  std::uint64_t ev_seed = 0;
  eval_cmd->add_option("--model", ev_model, "model file")->required();
  eval_cmd->add_option("--data", ev_data, "dataset spec")->required();
  eval_cmd->add_option("--mode", ev_mode, "fp32|fake-quant|bspline-lut|spline-table");
  eval_cmd->add_option("--bw-w", ev_w, "weight bits (32 = off)");
  auto* ev_a_opt =
      eval_cmd->add_option("--bw-a", ev_a, "activation bits (table modes: addressing bits)");
  auto* ev_b_opt =
      eval_cmd->add_option("--bw-b", ev_b, "basis-value bits (table modes: stored bits)");
  eval_cmd->add_option("--subset", ev_subset, "evaluate on a seeded subset of this size");
  eval_cmd->add_option("--seed", ev_seed, "subset seed");
  std::string ev_a_range = "grid";
  eval_cmd->add_option("--a-range", ev_a_range,
                       "activation range policy: grid|calibrated");

  // ---- cost ----
  auto* cost_cmd = app.add_subcommand("cost", "analytic cost report for an architecture");
  std::string co_arch, co_format = "text";
  int co_w = kPassthroughBits, co_a = kPassthroughBits, co_b = kPassthroughBits;
  std::int64_t co_batch = 1;
  bool co_tab = false;
  cost_cmd->add_option("--arch", co_arch, "architecture descriptor JSON")->required();
  cost_cmd->add_option("--bw-w", co_w, "weight bits");
  cost_cmd->add_option("--bw-a", co_a, "activation bits");
  cost_cmd->add_option("--bw-b", co_b, "basis bits");
  cost_cmd->add_option("--batch", co_batch, "batch size M");
  cost_cmd->add_flag("--tabulated", co_tab, "basis values come from a table");
  cost_cmd->add_option("--format", co_format, "text|json");

  // ---- tabulate ----
  auto* tab_cmd = app.add_subcommand("tabulate", "attach quantized tables to a model file");
  std::string ta_model, ta_out = "tabulated.kant", ta_mode = "bspline-lut";
  int ta_a = 4, ta_b = 8;
  tab_cmd->add_option("--model", ta_model, "model file")->required();
  tab_cmd->add_option("--out", ta_out, "output model file");
  tab_cmd->add_option("--mode", ta_mode, "bspline-lut|spline-table");
  tab_cmd->add_option("--bw-a", ta_a, "addressing bits");
  tab_cmd->add_option("--bw-b", ta_b, "stored value bits");

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "evaluate a grid of bit-width configurations");
  std::string sw_spec, sw_model, sw_data, sw_out = "sweep", sw_format = "csv";
  std::string sw_modes = "fake-quant", sw_w = "32", sw_a = "32", sw_b = "32";
  std::size_t sw_subset = 2000;
  std::uint64_t sw_seed = 0;
  int sw_jobs = 0;
  sweep_cmd->add_option("--spec", sw_spec, "sweep spec JSON (overrides other flags)");
  sweep_cmd->add_option("--model", sw_model, "model file");
  sweep_cmd->add_option("--data", sw_data, "dataset spec");
  sweep_cmd->add_option("--mode", sw_modes, "comma list of modes");
  sweep_cmd->add_option("--bw-w", sw_w, "comma list of weight bits");
  sweep_cmd->add_option("--bw-a", sw_a, "comma list of activation bits");
  sweep_cmd->add_option("--bw-b", sw_b, "comma list of basis bits");
  sweep_cmd->add_option("--subset", sw_subset, "evaluation subset size");
  sweep_cmd->add_option("--seed", sw_seed, "subset seed");
  sweep_cmd->add_option("--out", sw_out, "output file prefix");
  sweep_cmd->add_option("--format", sw_format, "csv|json");
  sweep_cmd->add_option("--jobs", sw_jobs, "parallel evaluations (0 = all cores)");

  // ---- pareto ----
  auto* par_cmd = app.add_subcommand("pareto", "extract the Pareto front from a points CSV");
  std::string pa_in, pa_obj = "bitops", pa_out = "pareto.csv";
  par_cmd->add_option("--in", pa_in, "points CSV")->required();
  par_cmd->add_option("--objective", pa_obj, "bitops|memory");
  par_cmd->add_option("--out", pa_out, "output CSV");

  // ---- plot ----
  auto* plot_cmd = app.add_subcommand("plot", "render a points CSV as an SVG scatter");
  std::string pl_in, pl_x = "bitops", pl_out = "plot.svg";
  plot_cmd->add_option("--in", pl_in, "points CSV")->required();
  plot_cmd->add_option("--x", pl_x, "bitops|memory|<column>");
  plot_cmd->add_option("--out", pl_out, "output SVG");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(tr_arch, tr_data, tr_test, tr_cfg, tr_out, tr_loss);
    if (*eval_cmd)
      return run_eval(ev_model, ev_data, ev_mode, ev_w, ev_a, ev_b, ev_subset, ev_seed,
                      ev_a_range, ev_a_opt->count() > 0 || ev_b_opt->count() > 0);
    if (*cost_cmd) return run_cost(co_arch, co_w, co_a, co_b, co_batch, co_tab, co_format);
    if (*tab_cmd) return run_tabulate(ta_model, ta_out, ta_mode, ta_a, ta_b);
    if (*sweep_cmd) {
      SweepSpec spec;
      if (!sw_spec.empty()) {
        std::ifstream in(sw_spec);
        if (!in) throw std::runtime_error("cannot open " + sw_spec);
        nlohmann::json j;
        in >> j;
        spec = sweep_from_json(j);
      } else {
        if (sw_model.empty() || sw_data.empty())
          throw CLI::ValidationError("sweep needs --spec or both --model and --data");
        spec.model_path = sw_model;
        spec.dataset = resolve_dataset_spec(sw_data);
        std::stringstream ss(sw_modes);
        spec.modes.clear();
        std::string m;
        while (std::getline(ss, m, ',')) spec.modes.push_back(m);
        spec.bits_w_set = parse_bit_list(sw_w);
        spec.bits_a_set = parse_bit_list(sw_a);
        spec.bits_b_set = parse_bit_list(sw_b);
        spec.subset = sw_subset;
        spec.seed = sw_seed;
        spec.out_prefix = sw_out;
        spec.format = sw_format;
        spec.jobs = sw_jobs;
      }
      const SweepReport report = run_sweep(spec);
      std::printf("evaluated %zu configurations; Pareto front (BitOps) has %zu points\n",
                  report.points.size(), report.pareto_bitops.size());
      for (const auto& f : report.written_files) std::printf("wrote %s\n", f.c_str());
      return 0;
    }
    if (*par_cmd) return run_pareto(pa_in, pa_obj, pa_out);
    if (*plot_cmd) return run_plot(pl_in, pl_x, pl_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
