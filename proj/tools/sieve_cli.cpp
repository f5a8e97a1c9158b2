#include <sieve/runner.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Neumann sieve experiment runner"};
  std::string config;
  std::string out;
  int workers = 0;
  std::uint64_t seed = 0;
  bool no_cache = false;
  app.add_option("--config", config, "experiment config (JSON)")->required();
  auto* out_opt = app.add_option("--out", out, "output directory (default: output.directory)");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "seed for sampled jumps (overrides the config)");
  app.add_flag("--no-cache", no_cache, "ignore and do not write the result cache");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  sieve::RunOptions opts;
  if (*out_opt) opts.out_dir = out;
  if (*workers_opt) opts.workers = workers;
  if (*seed_opt) opts.seed = seed;
  opts.use_cache = !no_cache;
  return sieve::run(config, opts, std::cerr);
}
