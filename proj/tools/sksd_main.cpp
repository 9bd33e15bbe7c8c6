#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Sliced kernelized Stein discrepancy experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;

  for (const auto& [name, prepare] : sksd::cli::registry()) {
    (void)prepare;
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--workers", workers, "worker threads (overrides the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  sksd::cli::RunOptions opts{seed, workers, out};
  nlohmann::json config;
  try {
    config = sksd::cli::load_config(config_path);
  } catch (const sksd::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  return sksd::cli::run_command(command, config, opts, std::cout, std::cerr);
}
