// SPDX-License-Identifier: Apache-2.0
//
// Command-line orchestration of the CAPS lifecycle: surrogate public pool,
// M1 pre-training, per-cycle SPSSL training of M2 with privacy accounting,
// generative-replay updates of M1, evaluation, and report aggregation.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "caps/errors.hpp"
#include "caps/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool force = false;
  bool resume = false;
};

struct RunArgs {
  int order = 0;
  uint64_t seed = 0;
  std::string epsilon = "inf";
  int cycle = 0;
};

double parse_eps(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw caps::config_error("bad --epsilon value: " + s);
  }
}

caps::cli::RunConfig load_config(const GlobalArgs& g) {
  if (g.config_path.empty())
    throw caps::config_error("--config is required for this subcommand");
  return caps::cli::RunConfig::load(g.config_path, g.seed, g.out_dir);
}

void add_run_options(CLI::App* cmd, RunArgs& r, bool with_cycle) {
  cmd->add_option("--order", r.order, "cycle-order index from the config");
  cmd->add_option("--run-seed", r.seed, "seed of the run (defaults to config seed)");
  cmd->add_option("--epsilon", r.epsilon, "privacy target, a number or 'inf'")
      ->required();
  if (with_cycle)
    cmd->add_option("--cycle", r.cycle, "0-based cycle index")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caps: cyclic adaptive private synthesis pipeline"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "run configuration JSON");
  app.add_option("--seed", g.seed, "override the config root seed");
  app.add_option("--out", g.out_dir, "override the output directory");
  app.add_flag("--force", g.force, "overwrite existing stage outputs");
  app.add_flag("--resume", g.resume, "skip hash-matching completed stages");

  auto* sim = app.add_subcommand("simulate-public",
                                 "write the surrogate public pool CSV");
  auto* pre = app.add_subcommand("pretrain", "pre-train M1 on the public pool");
  RunArgs cycle_args;
  auto* cyc = app.add_subcommand(
      "cycle", "train M2 for one cycle and emit synthetic data + reports");
  add_run_options(cyc, cycle_args, /*with_cycle=*/true);
  RunArgs update_args;
  auto* upd = app.add_subcommand(
      "update-m1", "generative-replay update of M1 after a cycle");
  add_run_options(upd, update_args, /*with_cycle=*/true);
  RunArgs eval_args;
  auto* eva = app.add_subcommand(
      "evaluate", "recompute a cycle's eval rows from its checkpoints");
  add_run_options(eva, eval_args, /*with_cycle=*/true);
  auto* acc = app.add_subcommand(
      "account", "privacy accounting rows for the configured targets");
  auto* rep = app.add_subcommand("report",
                                 "aggregate eval rows into mean/CI tables");

  CLI11_PARSE(app, argc, argv);

  const caps::cli::StageOptions opt{g.force, g.resume};
  try {
    if (sim->parsed()) {
      cmd_simulate_public(load_config(g), opt);
    } else if (pre->parsed()) {
      cmd_pretrain(load_config(g), opt);
    } else if (cyc->parsed()) {
      auto cfg = load_config(g);
      const uint64_t s = cycle_args.seed ? cycle_args.seed : cfg.seed;
      cmd_cycle(cfg, cycle_args.order, s, parse_eps(cycle_args.epsilon),
                cycle_args.cycle, opt);
    } else if (upd->parsed()) {
      auto cfg = load_config(g);
      const uint64_t s = update_args.seed ? update_args.seed : cfg.seed;
      cmd_update_m1(cfg, update_args.order, s, parse_eps(update_args.epsilon),
                    update_args.cycle, opt);
    } else if (eva->parsed()) {
      auto cfg = load_config(g);
      const uint64_t s = eval_args.seed ? eval_args.seed : cfg.seed;
      cmd_evaluate(cfg, eval_args.order, s, parse_eps(eval_args.epsilon),
                   eval_args.cycle, opt);
    } else if (acc->parsed()) {
      cmd_account(load_config(g), opt);
    } else if (rep->parsed()) {
      cmd_report(load_config(g));
    }
  } catch (const caps::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const caps::privacy_error& e) {
    std::fprintf(stderr, "privacy infeasible: %s\n", e.what());
    return 3;
  } catch (const caps::numerical_error& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
