// Command-line front end for sweeps, curve extraction and ML oracle caching.
//
//   xresq run --config <path> [--override key=value]...
//   xresq curves --input <results.json> --axis snr|lp|time --out <csv>
//   xresq oracle --config <path> [--override key=value]...
//
// Worker threads come from XRESQ_WORKERS (default: hardware concurrency).
// Exit status: 0 success, 2 some grid rows failed, 1 usage or setup error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "xresq/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPartial = 2;

xresq::ExperimentConfig config_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  auto cfg = xresq::load_config(path);
  for (const auto& kv : overrides) xresq::apply_override(cfg, kv);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIMO detection lab: Ising conversion, seeded parallel tempering and ensemble detectors"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run a detection sweep and write results.csv, results.json, manifest.json");
  run->add_option("--config", config_path, "Config file or a previous run's manifest.json")->required();
  run->add_option("--override", overrides, "key=value, applied after the file (repeatable)");

  std::string input, axis, out_path;
  auto* curves = app.add_subcommand("curves", "Extract long-format curve data from results.json");
  curves->add_option("--input", input, "results.json from a run")->required();
  curves->add_option("--axis", axis, "snr, lp or time")->required();
  curves->add_option("--out", out_path, "Output CSV path")->required();

  auto* oracle = app.add_subcommand("oracle", "Cache exhaustive ML objectives for every grid instance");
  oracle->add_option("--config", config_path, "Config file")->required();
  oracle->add_option("--override", overrides, "key=value, applied after the file (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) {
      const auto cfg = config_with_overrides(config_path, overrides);
      const auto outcome = xresq::run_experiment(cfg);
      std::cout << "wrote " << outcome.rows.size() << " rows to " << cfg.output_dir << " (" << outcome.workers
                << " workers, " << outcome.wall_s << " s)\n";
      if (outcome.partial_failure()) {
        std::cerr << outcome.failed_rows << " row(s) failed:\n";
        for (const auto& r : outcome.rows)
          if (r.status != "ok")
            std::cerr << "  " << xresq::to_string(r.detector) << " l_p=" << r.l_p << " n_t=" << r.point.n_t
                      << " snr=" << r.point.snr_db << ": " << r.error << "\n";
        return kExitPartial;
      }
      return kExitOk;
    }
    if (*curves) {
      const auto loaded = xresq::load_results_json(input);
      const auto ax = xresq::parse_axis(axis);
      std::map<std::tuple<std::size_t, std::size_t, std::string, double, std::string, std::size_t>, double> wall;
      if (ax == xresq::CurveAxis::Time)
        wall = xresq::load_wall_times((std::filesystem::path(input).parent_path() / "manifest.json").string());
      const std::string csv = xresq::emit_curve_data(loaded.rows, ax, loaded.config.n_sweeps, &wall);
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      if (!out || !(out << csv)) throw xresq::ConfigError("cannot write '" + out_path + "'");
      return kExitOk;
    }
    if (*oracle) {
      const auto cfg = config_with_overrides(config_path, overrides);
      const auto outcome = xresq::run_oracle(cfg);
      std::cout << "oracle: " << outcome.solved << " solved, " << outcome.skipped << " over budget, " << outcome.failed
                << " failed -> " << outcome.path << "\n";
      return outcome.failed ? kExitPartial : kExitOk;
    }
  } catch (const xresq::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
