#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "levy/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Green-Kubo estimation, construction and homogenisation experiments"};
  app.require_subcommand(1, 1);

  std::string config;
  levy::RunContext ctx;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::string presets = "config file or preset (";
  for (const auto& p : levy::preset_names()) presets += (presets.back() == '(' ? "" : ", ") + p;
  presets += ")";

  for (const auto& name : levy::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, presets)->required(name != "report");
    sub->add_option("--threads", ctx.threads, "worker threads")->check(CLI::Range(1, 256));
    sub->add_option("--out", ctx.out_dir, "output directory");
    sub->add_option("--seed", seed, "base seed");
    sub->add_flag("--quiet", quiet, "no progress lines");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : levy::kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed")) ctx.seed = seed;
  if (!quiet) ctx.log = &std::cerr;

  levy::Config cfg;
  try {
    cfg = config.empty() ? levy::Config::from_text("", "<none>") : levy::Config::load(config);
  } catch (const levy::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return levy::kExitConfig;
  }
  return levy::run_command(name, cfg, ctx, std::cerr);
}
