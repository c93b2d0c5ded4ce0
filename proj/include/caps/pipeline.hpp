// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caps/data.hpp"
#include "caps/models.hpp"
#include "caps/train.hpp"

namespace caps::cli {

struct StageOptions {
  bool force = false;
  bool resume = false;
};

// Single JSON run configuration driving the whole CAPS lifecycle. All
// randomness flows from one root seed (or the seeds list for the run grid),
// split per stage.
struct RunConfig {
  std::string out_dir = "out";
  uint64_t seed = 1;
  std::vector<uint64_t> seeds;  // run grid; defaults to {seed}
  double delta = 1e-3;
  std::vector<double> epsilons;  // +inf selects the non-DP baseline
  double clipping_norm = 1.0;
  int eval_bins = 10;

  std::string pool_file = "public_pool.csv";  // written under out_dir
  data::PoolSpec pool;

  struct Cohort {
    std::string tag;
    std::string path;  // resolved against the config file's directory
  };
  std::vector<Cohort> cohorts;
  std::vector<std::vector<int>> cycle_orders;  // permutations of cohort indices

  models::M1Config m1;
  train::TrainConfig m1_train;
  models::M2Config m2;
  train::TrainConfig m2_train;
  int unlabelled_count = 10000;
  int replay_samples_each = 10000;
  train::TrainConfig replay_train;

  // mechanism for the standalone `account` subcommand (it must not read
  // private cohort files, so q and K are stated explicitly)
  double account_q = 0;
  long account_steps = 0;

  std::string config_hash;  // effective-config hash, set on load

  static RunConfig load(const std::string& path, uint64_t seed_override = 0,
                        const std::string& out_override = "");
  void validate() const;

  std::string pool_path() const;
  std::string pretrained_m1_path() const;
  std::string run_dir(int order_idx, uint64_t seed, double eps) const;
  // M1 checkpoint consumed by cycle t of a run (pretrained for t = 0)
  std::string m1_for_cycle_path(int order_idx, uint64_t seed, double eps,
                                int t) const;
};

std::string epsilon_label(double eps);  // "inf" or the shortest decimal

// ---- stages -----------------------------------------------------------------

// Step 0a: write the surrogate public pool CSV (unlabelled, label -1).
void cmd_simulate_public(const RunConfig& cfg, const StageOptions& opt);

// Step 0b: pre-train M1 on the pool; writes checkpoint + loss trace.
void cmd_pretrain(const RunConfig& cfg, const StageOptions& opt);

// Step 1 for cycle t of run (order, seed, eps): SPSSL-train M2, emit the M2
// checkpoint, the shared synthetic cohort, eval rows for both AJS modes with
// classifier metrics on the other cohorts, and the accounting row.
void cmd_cycle(const RunConfig& cfg, int order_idx, uint64_t seed, double eps,
               int t, const StageOptions& opt);

// Step 2: generative-replay update of M1 for cycle t+1. Reads only
// checkpoints (never private cohort files).
void cmd_update_m1(const RunConfig& cfg, int order_idx, uint64_t seed,
                   double eps, int t, const StageOptions& opt);

// Recomputes cycle t's eval rows from existing checkpoints (idempotent:
// the same seeds derive the same synthetic draws).
void cmd_evaluate(const RunConfig& cfg, int order_idx, uint64_t seed,
                  double eps, int t, const StageOptions& opt);

// Accounting rows for every finite epsilon in the config, using q and K
// derived from the first cohort and the M2 train config.
void cmd_account(const RunConfig& cfg, const StageOptions& opt);

// Aggregates all eval rows under out_dir into mean +/- 95% CI tables per
// (metric, cycle, epsilon).
void cmd_report(const RunConfig& cfg);

// Full grid driver used by tests and scripts: simulate-public, pretrain,
// then for every (order, seed, epsilon) the cycle/update chain.
void run_full(const RunConfig& cfg, const StageOptions& opt);

// ---- report rows ------------------------------------------------------------

struct EvalRow {
  int order_idx = 0;
  uint64_t seed = 0;
  double epsilon = 0;
  int cycle_index = 0;
  std::string cycle_tag;
  std::string mode;  // "reconstruction" | "generation"
  double ajs = 0;
  int ajs_bins = 0;
  double balanced_accuracy = 0;
  double mae = 0;
  int n_real = 0;
  int count_low = 0, count_mid = 0, count_high = 0;
  bool classifier_metrics_omitted = false;
};

std::vector<EvalRow> collect_eval_rows(const std::string& out_dir);

struct ReportRow {
  std::string metric;  // ajs_reconstruction, ajs_generation, balanced_accuracy, mae
  int cycle_index = 0;
  double epsilon = 0;
  int n = 0;
  double mean = 0, ci_low = 0, ci_high = 0;
  bool degenerate = false;  // single run: CI collapses to the point estimate
};

std::vector<ReportRow> aggregate_report(const std::vector<EvalRow>& rows);

}  // namespace caps::cli
