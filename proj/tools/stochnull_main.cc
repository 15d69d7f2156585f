#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stochnull/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stochnull: null controls and Carleman checks for stochastic parabolic equations"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config, out_dir;
  app.add_option("-o,--output", out_dir, "output directory (overrides [experiment] output_dir)");
  for (const std::string& name : stochnull::subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return stochnull::kExitValidation;
  }
  return stochnull::run_file(app.get_subcommands().front()->get_name(), config, std::cerr, out_dir);
}
