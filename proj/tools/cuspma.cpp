#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cuspma/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cuspma: Monge-Ampere experiments on a model cusp"};
  app.require_subcommand(1);
  std::string config, out, eps;
  int grid = 0;
  const std::map<std::string, std::string> about = {
      {"solve", "Newton solve at the first epsilon of the schedule"},
      {"sweep", "epsilon continuation with the norm table and audits"},
      {"geometry-report", "curvature, |grad rho|/rho and volume checks"},
      {"verify-charts", "quasi-coordinate identities, covering and bracket constant"},
      {"verify-sobolev", "weighted Sobolev ratios and sup-norm ladders"},
      {"estimates-report", "pointwise inequalities, ladders, flux probe and cutoff"}};
  for (const auto& name : cuspma::cli::commands()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", config, "JSON configuration")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--grid", grid, "intervals per axis");
    sub->add_option("--eps-schedule", eps, "comma separated epsilon values");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cuspma::cli::kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  cuspma::cli::Overrides ov;
  if (!out.empty()) ov.out = out;
  if (grid != 0) ov.grid = grid;
  if (!eps.empty()) {
    std::vector<double> sched;
    std::stringstream ss(eps);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        sched.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        std::cerr << "config error: eps-schedule: cannot parse \"" << item << "\"\n";
        return cuspma::cli::kConfigError;
      }
    }
    ov.eps_schedule = sched;
  }
  return cuspma::cli::run_file(command, config, ov, std::cerr);
}
