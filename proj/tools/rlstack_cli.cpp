#include <CLI11.hpp>

#include <cerrno>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rlstack/experiment.hpp"
#include "rlstack/launch.hpp"
#include "rlstack/plot.hpp"

namespace fs = std::filesystem;
using namespace rlstack;

namespace {

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config c = default_experiment();
  if (!path.empty()) c.parse_file(path);
  for (const auto& o : overrides) c.apply_override(o);
  return c;
}

std::string self_exe() {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  if (ec) throw LaunchError("cannot resolve own executable path");
  return p.string();
}

/// Last non-blank value of `col` in a run's log, or "".
std::string last_value(const fs::path& log, const std::string& col) {
  try {
    auto t = read_csv(log);
    auto i = t.column(col);
    for (auto it = t.rows.rbegin(); it != t.rows.rend(); ++it)
      if (!(*it)[i].empty()) return (*it)[i];
  } catch (const PlotError&) {
  }
  return "";
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets, const std::string& out, bool quiet) {
  auto c = load_config(config, sets);
  auto r = run_experiment(c, out, quiet ? nullptr : &std::cout);
  if (!quiet) {
    std::cout << "done: " << r.env_steps << " env steps, " << r.updates << " updates";
    if (r.final_eval) std::cout << ", eval return " << r.final_eval->mean_return;
    std::cout << "\n";
  }
  return 0;
}

int cmd_launch(const std::string& grid_path, const std::vector<std::string>& sets, const std::string& out,
               const ResourcePlan& plan) {
  VariantGrid grid(experiment_schema());
  grid.parse_file(grid_path);
  for (const auto& s : sets) grid.base().apply_override(s);
  auto variants = grid.expand();
  std::size_t conc = plan.concurrency();
  fs::create_directories(out);
  {
    std::ofstream probe(fs::path(out) / "launch_trace.csv");
    if (!probe) throw LaunchError("output directory " + out + " is not writable");
  }
  std::string exe = self_exe();
  std::vector<Job> jobs;
  for (const auto& v : variants) {
    auto dir = fs::path(out) / v.path;
    fs::create_directories(dir);
    std::ofstream(dir / "config.cfg") << v.config.serialize();
    jobs.push_back({v.path, {exe, "run", "--config", (dir / "config.cfg").string(), "--out", dir.string(), "--quiet"}, dir / "stdout.txt"});
  }
  std::cout << "launching " << jobs.size() << " variants, " << conc << " at a time\n";
  auto trace = run_queue(jobs, conc);

  std::ofstream tr(fs::path(out) / "launch_trace.csv");
  tr << "time_s,running\n";
  for (auto [t, n] : trace.events) tr << t << ',' << n << '\n';

  std::ofstream sum(fs::path(out) / "launch_summary.csv");
  sum << "variant,exit_code,start_s,end_s,final_online_return,final_eval_return\n";
  std::size_t failed = 0, width = 9;
  for (const auto& v : variants) width = std::max(width, v.path.size() + 2);
  std::cout << std::left << std::setw(static_cast<int>(width)) << "variant" << std::setw(8) << "exit" << std::setw(10) << "seconds"
            << "final return\n";
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto& r = trace.results[i];
    auto log = fs::path(out) / variants[i].path / "log.csv";
    auto online = last_value(log, "online_return_mean"), ev = last_value(log, "eval_return_mean");
    sum << r.name << ',' << r.exit_code << ',' << r.start_s << ',' << r.end_s << ',' << online << ',' << ev << '\n';
    failed += !r.ok();
    auto shown = ev.empty() ? online : ev;
    std::ostringstream ret;
    if (!shown.empty()) ret << std::setprecision(4) << std::stod(shown);
    std::cout << std::left << std::setw(static_cast<int>(width)) << r.name << std::setw(8) << r.exit_code
              << std::setw(10) << std::setprecision(3) << (r.end_s - r.start_s) << ret.str() << "\n";
  }
  std::cout << "max concurrent: " << trace.max_running << ", failed: " << failed << "/" << variants.size() << "\n";
  return failed ? 1 : 0;
}

int cmd_plot(const std::vector<std::string>& runs, const std::string& metric, const std::string& x_axis,
             const std::string& out, bool band) {
  if (runs.empty()) throw PlotError("no run directories given");
  auto axis = parse_x_axis(x_axis);
  std::vector<Series> series;
  for (const auto& r : runs) {
    fs::path p(r);
    auto log = fs::is_directory(p) ? p / "log.csv" : p;
    auto label = fs::is_directory(p) ? p.lexically_normal().string() : p.parent_path().string();
    series.push_back(extract_series(read_csv(log), metric, axis, label));
  }
  Band b;
  if (band) b = mean_band(series);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "plot.svg") << render_svg(series, band ? &b : nullptr, metric, x_column(axis));
  std::ofstream(fs::path(out) / "summary.csv") << summary_csv(series, metric);
  std::cout << "wrote " << (fs::path(out) / "plot.svg").string() << " and summary.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rlstack: reinforcement learning experiments"};
  app.require_subcommand(1);

  std::string config, out = "runs/latest";
  std::vector<std::string> sets;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("--config", config, "Config file (key = value lines)");
  run->add_option("--set", sets, "Override, key=value (repeatable)");
  run->add_option("--out", out, "Output directory");
  run->add_flag("--quiet", quiet, "No progress output");

  std::string grid;
  std::string launch_out = "runs/grid";
  std::vector<std::string> launch_sets;
  ResourcePlan plan;
  auto* launch = app.add_subcommand("launch", "Run every variant of a grid on local slots");
  launch->add_option("--config", grid, "Grid file (base / set / vary lines)")->required();
  launch->add_option("--set", launch_sets, "Override applied to every variant");
  launch->add_option("--slots-total", plan.slots_total, "Worker slots available");
  launch->add_option("--slots-per", plan.slots_per, "Slots per experiment");
  launch->add_option("--out", launch_out, "Root directory for the variant tree");

  std::vector<std::string> plot_runs;
  std::string metric = "online_return_mean", x_axis = "steps", plot_out = ".";
  bool band = false;
  auto* plot = app.add_subcommand("plot", "Plot a metric from run logs");
  plot->add_option("runs", plot_runs, "Run directories or log.csv files")->required();
  plot->add_option("--metric", metric, "Log column to plot");
  plot->add_option("--x-axis", x_axis, "steps | updates | time");
  plot->add_option("--out", plot_out, "Directory for plot.svg and summary.csv");
  plot->add_flag("--band", band, "Add mean and min/max band across runs");

  std::string show_cfg;
  std::vector<std::string> show_sets;
  auto* show = app.add_subcommand("show-config", "Print the fully resolved config");
  show->add_option("--config", show_cfg, "Config file");
  show->add_option("--set", show_sets, "Override, key=value (repeatable)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, sets, out, quiet);
    if (*launch) return cmd_launch(grid, launch_sets, launch_out, plan);
    if (*plot) return cmd_plot(plot_runs, metric, x_axis, plot_out, band);
    if (*show) {
      std::cout << load_config(show_cfg, show_sets).serialize();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
