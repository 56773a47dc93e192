#include "dips/cli/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", overrides, "override a key, e.g. --set K=4 (repeatable)");
  }
  dips::cli::ExperimentConfig load() const {
    return dips::cli::ExperimentConfig::load(config, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  using namespace dips::cli;
  CLI::App app{"Learned history sketching for sequential recommendation"};
  app.footer("Threads: DIPS_THREADS (default: hardware concurrency).\n"
             "Exit codes: 0 ok, 1 other failure, 2 config, 3 data, 4 numerical.");
  app.require_subcommand(1);

  ConfigArgs train_args, eval_args, diag_args, trace_args;
  int jobs = 1;
  std::string eval_ckpt, trace_ckpt, trace_cell;
  dips::ad::Index trace_user = 0;
  dips::diag::GradcheckOptions gc;

  auto* train = app.add_subcommand("train", "train every cell of the grid");
  train_args.attach(train);
  train->add_option("-j,--jobs", jobs, "grid cells trained concurrently")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "evaluate trained cells on the test split");
  eval_args.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "directory written by train (default: out)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", gc.seed, "random seed")->capture_default_str();
  gradcheck->add_option("--trials", gc.trials, "random points per check")->capture_default_str();

  auto* diagnose = app.add_subcommand("diagnose", "compare approximate and replayed policy gradients");
  diag_args.attach(diagnose);

  auto* trace = app.add_subcommand("dump-trace", "print one user's sketch trajectory");
  trace_args.attach(trace);
  trace->add_option("--checkpoint", trace_ckpt, "directory written by train (default: out)");
  trace->add_option("--cell", trace_cell, "grid cell name (default: the first)");
  trace->add_option("--user", trace_user, "dense user index")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args.load(), std::cout, jobs);
    if (*eval) {
      const auto cfg = eval_args.load();
      return cmd_eval(cfg, eval_ckpt.empty() ? cfg.out : eval_ckpt, std::cout);
    }
    if (*gradcheck) return cmd_gradcheck(std::cout, gc);
    if (*diagnose) return cmd_diagnose(diag_args.load(), std::cout);
    if (*trace) {
      const auto cfg = trace_args.load();
      return cmd_dump_trace(cfg, trace_ckpt.empty() ? cfg.out : trace_ckpt, trace_cell, trace_user,
                            std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return kExitFailure;
}
