#include <iostream>

#include <CLI11.hpp>

#include "blitzeval/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"blitzeval: place-based policing evaluation on hexagonal space-time panels"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  int threads = 0;
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "More log output on stderr (repeatable)");
  app.add_option("--threads", threads, "Worker threads (default: config, else BLITZEVAL_THREADS, else 1)");

  const std::vector<std::pair<const char*, const char*>> commands{
      {"grid", "Tessellate the boundary and write the cell table"},
      {"ingest", "Assign crime and blitz records to cells and periods"},
      {"panel", "Assemble the cell x day x period panel"},
      {"weights", "Build the configured spatial weight matrices"},
      {"fit", "Fit one FE Poisson model per weight matrix"},
      {"effects", "Effect sizes, counterfactual and cost-benefit"},
      {"simulate", "Write a synthetic dataset with known truth"},
      {"pipeline", "All stages from boundary to effects"},
      {"report", "Summarize the fits and effects in an output directory"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "Run configuration (JSON)");
    sub->add_option("-o,--out", out, "Output directory (overrides paths.output_dir)");
    sub->add_option("--threads", threads, "Worker threads");
    sub->add_flag("-v,--verbose", verbosity, "More log output on stderr");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  blitzeval::CommandOptions opt;
  opt.command = app.get_subcommands().front()->get_name();
  opt.config_path = config;
  if (!out.empty()) opt.out_override = out;
  if (threads > 0) opt.threads = threads;
  opt.verbosity = verbosity;
  return blitzeval::Runner(opt).run();
}
