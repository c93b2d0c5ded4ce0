// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "caps/accountant.hpp"
#include "caps/autodiff.hpp"
#include "caps/data.hpp"
#include "caps/models.hpp"
#include "caps/rng.hpp"

namespace caps::train {

struct TrainConfig {
  double learning_rate = 1e-3;  // gamma
  double rho1 = 0.9;
  double rho2 = 0.999;
  double eps_stable = 1e-8;
  int epochs = 50;
  int batch_public = 128;   // B_pub
  int batch_private = 32;   // B_priv; K = epochs * ceil(N_priv/B_priv)
  double clipping_norm = 1.0;     // C
  double noise_multiplier = 0.0;  // sigma
  int anneal_cycles = 4;          // M
  uint64_t seed = 0;

  void validate() const;
};

struct OptimizerState {
  ad::GradSet m;  // first moment
  ad::GradSet v;  // second moment
  long k = 0;     // step counter

  static OptimizerState init(const ad::ParamSet& params);
};

struct AnnealSchedule {
  long total_steps = 1;
  int cycles = 4;  // M
};

// Within each of M equal cycles: linear ramp 0 -> 1 over the first half,
// constant 1 over the second half.
double beta_multiplier(long step, const AnnealSchedule& schedule);

// Standard bias-corrected Adam update, in place.
void adam_step(ad::ParamSet& params, const ad::GradSet& grad,
               OptimizerState& state, const TrainConfig& cfg);

struct DpStepResult {
  int realized_private_batch = 0;
  double private_loss_sum = 0;  // pre-clip objective values of the batch
  double public_loss = 0;
};

// One semi-private semi-supervised Adam step:
// Poisson-sample a private mini-batch at rate B_priv/N_priv, compute
// per-example gradients, clip each to norm <= C, add N(0, sigma^2 C^2 I),
// divide by B_priv, add the clean public-batch gradient, and apply Adam.
//
// rng consumption order (the line-by-line oracle replays it):
//   1. one uniform per private example for the Poisson mask,
//   2. private_loss(i, rng) for each included index in ascending order,
//   3. one gauss per flat parameter coordinate when sigma > 0,
//   4. public_loss(rng), which samples its own mini-batch.
DpStepResult dp_adam_step(
    ad::ParamSet& params, OptimizerState& state, const TrainConfig& cfg,
    int n_private, const std::function<ad::Var(int, Rng&)>& private_loss,
    const std::function<ad::Var(Rng&)>& public_loss, Rng& rng);

// ---- M1 --------------------------------------------------------------------

struct EpochStat {
  int epoch = 0;
  double loss = 0;
  double recon = 0;
  double kl = 0;
};

struct M1TrainResult {
  models::M1Model model;
  std::vector<EpochStat> trace;
};

// Non-private beta-VAE training with cyclical beta-annealing on top of
// beta1. Aborts with numerical_error on a non-finite loss.
M1TrainResult train_m1(const std::vector<data::EngagementSeries>& public_data,
                       const models::M1Config& mcfg, const TrainConfig& cfg);

// Continues training an existing model on the given data (used by the
// generative-replay update); consumes the caller's rng stream.
std::vector<EpochStat> train_m1_on(models::M1Model& model,
                                   const std::vector<data::EngagementSeries>& data,
                                   const TrainConfig& cfg, Rng& rng);

// ---- M2 (SPSSL) ------------------------------------------------------------

struct SpsslResult {
  models::M2Model model;
  std::vector<EpochStat> trace;  // loss = private part + public part
  privacy::AccountingReport accounting;
  bool non_private = false;
  double sigma = 0;
  double q = 0;
  long steps = 0;
};

// CAPS Step 1: generates unlabelled_count unconditional M1 samples as the
// public dataset, freezes M1, calibrates the noise multiplier for the
// privacy target (aborting before training when infeasible), and runs
// dp_adam_step for K = epochs * ceil(N_priv/B_priv) steps on the M2
// objective. privacy.epsilon_target = inf selects the non-private path
// (sigma = 0, no clipping) through the same code.
SpsslResult train_m2_spssl(const data::LabelledDataset& private_data,
                           const models::M1Model& m1,
                           const models::M2Config& mcfg,
                           const TrainConfig& cfg,
                           const privacy::PrivacySpec& privacy,
                           int unlabelled_count = 10000);

// ---- generative replay (CAPS Step 2) ----------------------------------------

struct ReplayConfig {
  int samples_each = 10000;  // from the stacked M1+M2 and from pretrained M1
  TrainConfig train;
};

// Pool of replay samples: samples_each unconditional draws from the stacked
// current M1+M2 plus samples_each from the pre-trained M1, shuffled.
std::vector<data::EngagementSeries> build_replay_pool(
    const models::M1Model& m1_current, const models::M1Model& m1_pretrained,
    const models::M2Model& m2, const ReplayConfig& cfg, Rng& rng);

struct ReplayResult {
  models::M1Model model;
  std::vector<EpochStat> trace;
};

// Trains a copy of the current M1 on the replay pool with non-private Adam.
ReplayResult replay_update_m1(const models::M1Model& m1_current,
                              const models::M1Model& m1_pretrained,
                              const models::M2Model& m2,
                              const ReplayConfig& cfg);

// ---- hyperparameter search --------------------------------------------------

struct HyperRanges {
  double lr_min = 1e-5, lr_max = 1e-2;  // log-uniform
  int batch_pub_min = 16, batch_pub_max = 512, batch_pub_step = 8;
  int batch_priv_min = 1, batch_priv_max = 1;  // caller sets max to N-1
  int epochs_min = 1, epochs_max = 100;
  double clip_min = 0.1, clip_max = 5.0, clip_step = 0.1;
};

// Seeded uniform/log-uniform draws within the ranges; returns the config
// minimizing the holdout objective.
TrainConfig random_search(const HyperRanges& ranges, int trials,
                          const std::function<double(const TrainConfig&)>& objective,
                          const TrainConfig& base, Rng& rng);

}  // namespace caps::train
