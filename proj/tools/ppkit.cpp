#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ppkit/cli.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration JSON")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--out", args.out, "Override the output directory");
}

int run(const std::string& name, const CommonArgs& args) {
  ppkit::RunConfig cfg;
  try {
    cfg = ppkit::RunConfig::load(args.config_path, args.out, args.seed);
    if (name == "diagnose") ppkit::cmd_diagnose(cfg);
    else if (name == "simulate") ppkit::cmd_simulate(cfg);
    else if (name == "fit") ppkit::cmd_fit(cfg);
    else ppkit::cmd_report(cfg);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["command"] = name;
    err["error"] = e.what();
    std::cerr << err.dump(2) << std::endl;
    if (!cfg.out_dir.empty()) {
      try {
        ppkit::write_text_file(cfg.out_path("error.json"), err.dump(2) + "\n");
      } catch (...) {
      }
    }
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ppkit: spatial point process toolkit"};
  app.require_subcommand(1);

  CommonArgs diagnose_args, simulate_args, fit_args, report_args;
  add_common(app.add_subcommand("diagnose",
                                "Inhomogeneous K / cross-K with CSR envelopes"),
             diagnose_args);
  add_common(app.add_subcommand("simulate", "LGCP / Poisson pattern simulation"),
             simulate_args);
  add_common(app.add_subcommand("fit", "Minimum contrast + Bayesian MCMC fit"),
             fit_args);
  add_common(app.add_subcommand("report",
                                "Posterior products: curves, ratio maps, fitted cross-K"),
             report_args);

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name == "diagnose") return run(name, diagnose_args);
  if (name == "simulate") return run(name, simulate_args);
  if (name == "fit") return run(name, fit_args);
  return run(name, report_args);
}
