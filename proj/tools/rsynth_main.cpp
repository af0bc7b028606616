#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "rsynth/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Robust controller synthesis for scLTL specifications on linear stochastic systems"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;

  const std::vector<std::string> names = {"translate", "abstract",  "certify",       "synthesize",
                                          "simulate",  "bounds-compare", "all"};
  const std::vector<std::string> descs = {
      "formula to DFA (writes dfa.dot)",
      "grid abstraction (writes abstraction.meta.json)",
      "(eps,delta)-simulation certificate (writes certificate.json)",
      "robust + optimistic value iteration (writes values.csv, policy.csv)",
      "coupled Monte-Carlo validation (writes mc_report.json)",
      "bound comparison over the horizon (writes bounds_compare.csv)",
      "run every stage in order"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->add_option("--config", config_path, "problem configuration (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (default: config output_dir)");
    sub->add_option("--seed", seed, "override the simulation master seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--threads", threads, "worker threads (default: RSYNTH_THREADS or 1)");
  }

  CLI11_PARSE(app, argc, argv);

  if (threads <= 0) {
    if (const char* env = std::getenv("RSYNTH_THREADS")) threads = std::atoi(env);
  }
  rsynth::robust_dp::set_num_threads(threads > 0 ? threads : 1);

  try {
    rsynth::config::ProblemConfig cfg = rsynth::config::load_config(config_path);
    auto stage = rsynth::pipeline::stage_from_name(app.get_subcommands()[0]->get_name());
    std::optional<std::uint64_t> seed_opt;
    if (seed_set) seed_opt = seed;
    return rsynth::pipeline::run_pipeline(cfg, stage, out_dir, seed_opt);
  } catch (const rsynth::config::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return rsynth::pipeline::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rsynth::pipeline::kExitError;
  }
}
