// refmaps command-line tool: generate synthetic datasets, estimate
// reflectance maps and lighting, evaluate against ground truth and
// re-render images from estimates.
#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "refmaps/cli.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("REFMAPS_THREADS")) {
    const int t = std::atoi(env);
    if (t >= 1) return t;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view reflectance map and SH lighting estimation"};
  app.require_subcommand(1);

  refmaps::cli::GenerateOptions gen;
  CLI::App* cmd_generate = app.add_subcommand("generate", "Render a synthetic dataset with ground truth");
  cmd_generate->add_option("spec", gen.spec_path, "Scene spec file")->required();
  cmd_generate->add_option("out_dir", gen.out_dir, "Output dataset directory")->required();
  cmd_generate->add_option("--seed", gen.seed, "RNG seed")->default_val(0);

  refmaps::cli::EstimateOptions est;
  est.config.threads = default_threads();
  CLI::App* cmd_estimate = app.add_subcommand("estimate", "Estimate reflectance maps and lighting");
  cmd_estimate->add_option("dataset_dir", est.dataset_dir, "Input dataset directory")->required();
  cmd_estimate->add_option("out_dir", est.out_dir, "Output directory")->required();
  cmd_estimate->add_option("--lambda", est.config.lambda, "Reflectance smoothness weight")->required();
  cmd_estimate->add_option("--mu", est.config.mu, "Multi-view consistency weight")->required();
  cmd_estimate->add_option("--delta", est.config.delta, "Huber threshold")->default_val(1e-4);
  cmd_estimate->add_option("--tol", est.config.rel_energy_tol, "Relative energy stopping tolerance")
      ->default_val(1e-3);
  cmd_estimate->add_option("--max-iters", est.config.max_outer_iters, "Outer iteration budget")
      ->default_val(50);
  cmd_estimate->add_option("--cg-tol", est.config.cg_tol, "CG relative residual tolerance")
      ->default_val(1e-6);
  cmd_estimate->add_option("--cg-max-iters", est.config.cg_max_iters,
                           "CG iteration budget (0 = 10*sqrt(#unknowns))")
      ->default_val(0);
  cmd_estimate->add_flag_callback("--no-normalize",
                                  [&est]() { est.config.normalize_output = false; },
                                  "Skip the final max-to-1 reflectance normalization");
  cmd_estimate->add_option("--threads", est.config.threads, "Worker threads (default REFMAPS_THREADS or 1)");
  cmd_estimate->add_option("--trace", est.trace_path, "Write the convergence trace CSV here");
  cmd_estimate->add_flag("--preview", est.preview, "Also write 8-bit PNG previews");

  refmaps::cli::EvaluateOptions eva;
  CLI::App* cmd_evaluate = app.add_subcommand("evaluate", "Compare an estimate against ground truth");
  cmd_evaluate->add_option("estimate_dir", eva.estimate_dir, "Estimate directory")->required();
  cmd_evaluate->add_option("dataset_dir", eva.dataset_dir, "Dataset directory with ground truth")->required();
  cmd_evaluate->add_option("--csv", eva.csv_path, "Write the machine-readable report here");

  refmaps::cli::RenderOptions ren;
  CLI::App* cmd_render = app.add_subcommand("render", "Forward-render images from reflectance + lighting");
  cmd_render->add_option("reflectance_dir", ren.reflectance_dir, "Estimate-layout directory")->required();
  cmd_render->add_option("dataset_dir", ren.dataset_dir, "Dataset directory (geometry and masks)")->required();
  cmd_render->add_option("lighting", ren.lighting_path, "Estimate-layout directory or lighting text file")
      ->required();
  cmd_render->add_option("out_dir", ren.out_dir, "Output directory")->required();
  cmd_render->add_flag("--preview", ren.preview, "Also write 8-bit PNG previews");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cmd_generate->parsed()) {
      refmaps::cli::run_generate(gen);
      std::cout << "dataset written to " << gen.out_dir << "\n";
    } else if (cmd_estimate->parsed()) {
      const refmaps::Solution sol = refmaps::cli::run_estimate(est);
      std::cout << "estimate written to " << est.out_dir << " ("
                << (sol.converged ? "converged" : "iteration budget reached") << " after "
                << sol.trace.records.back().iteration << " iterations, final energy "
                << sol.trace.records.back().energy.total << ")\n";
    } else if (cmd_evaluate->parsed()) {
      refmaps::cli::run_evaluate(eva, std::cout);
    } else if (cmd_render->parsed()) {
      refmaps::cli::run_render(ren);
      std::cout << "renders written to " << ren.out_dir << "\n";
    }
  } catch (const refmaps::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const refmaps::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
