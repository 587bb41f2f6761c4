// irpm: data generation, filtering, reward computation, training,
// evaluation and reporting for the toy intergroup preference model.

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irpm/commands.hpp"
#include "irpm/config.hpp"

namespace {

irpm::RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  irpm::RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw irpm::ConfigError("cannot read config '" + path + "'");
    cfg = irpm::parse_config(in);
  }
  if (seed) cfg.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intergroup preference modelling toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> report_inputs;

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", config_path, "key = value run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override the configured seed");
    if (with_out) cmd->add_option("--out", out_dir, "output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic preference dataset");
  auto* filter = app.add_subcommand("filter", "drop low-strength and over-length pairs");
  auto* train = app.add_subcommand("train", "run the IRPM training loop");
  auto* eval = app.add_subcommand("eval", "pairwise accuracy with ties and voting@n");
  auto* reward = app.add_subcommand("reward", "stream reward records from stdin to stdout");
  auto* report = app.add_subcommand("report", "CSV curves and eval comparison tables");
  for (auto* cmd : {gen, filter, train, eval}) add_common(cmd, true);
  add_common(reward, false);
  add_common(report, false);
  std::string report_out;
  report->add_option("--out", report_out, "write report.csv into this directory instead of stdout");
  report->add_option("inputs", report_inputs, "diagnostics or eval summary files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const irpm::RunConfig cfg = load_config(config_path, seed);
    if (*gen) return irpm::cli::cmd_gen_data(cfg, out_dir, std::cout);
    if (*filter) return irpm::cli::cmd_filter(cfg, out_dir, std::cout);
    if (*train) return irpm::cli::cmd_train(cfg, out_dir, std::cout);
    if (*eval) return irpm::cli::cmd_eval(cfg, out_dir, std::cout);
    if (*reward) {
      const auto counts = irpm::cli::cmd_reward(cfg, std::cin, std::cout);
      if (counts.failed > 0) std::cerr << counts.failed << " record(s) failed\n";
      return counts.ok == 0 && counts.failed > 0 ? 1 : 0;
    }
    if (*report) {
      std::vector<std::filesystem::path> paths(report_inputs.begin(), report_inputs.end());
      if (report_out.empty()) return irpm::cli::cmd_report(paths, std::cout);
      std::filesystem::create_directories(report_out);
      std::ofstream out(std::filesystem::path(report_out) / "report.csv", std::ios::binary);
      if (!out) throw std::runtime_error("cannot write report.csv");
      return irpm::cli::cmd_report(paths, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
