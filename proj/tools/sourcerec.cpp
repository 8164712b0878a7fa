#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sourcerec/app.hpp"

int main(int argc, char** argv) {
  CLI::App app{"sourcerec: reconstruct latent source terms of "
               "advection-diffusion-reaction models from noisy point "
               "observations of the solution"};
  app.require_subcommand(1);

  sourcerec::CliOptions opts;
  std::string config;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string out;

  const struct {
    const char* name;
    const char* desc;
  } commands[] = {
      {"simulate", "draw a synthetic source/solution/observation set"},
      {"krige", "posterior mean and sd of the solution and source fields"},
      {"mcmc", "hyperparameter posterior by Metropolis-within-Gibbs"},
      {"accuracy", "error-vs-sample-size sweep with analytic rates"},
      {"st-demo", "sample and render a space-time source field"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.desc);
    sub->add_option("--config", config, "key = value configuration file")
        ->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--workers", workers, "override the worker thread count");
    sub->add_option("--out", out, "override the output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2; /* bad invocation is a configuration error */
  }

  CLI::App* sub = app.get_subcommands().front();
  opts.command = sub->get_name();
  opts.config_path = config;
  if (sub->count("--seed") > 0) opts.seed = seed;
  if (sub->count("--workers") > 0) opts.workers = workers;
  if (sub->count("--out") > 0) opts.out_dir = out;
  return sourcerec::run_command(opts);
}
