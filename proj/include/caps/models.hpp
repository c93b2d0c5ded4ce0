// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "caps/autodiff.hpp"
#include "caps/data.hpp"
#include "caps/rng.hpp"

namespace caps::models {

// ---- M1: unconditional beta-VAE over engagement series ---------------------

struct M1Config {
  int latent_dim = 16;
  int conv1_channels = 32;
  int conv2_channels = 64;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  double dropout_encoder = 0.2;
  double dropout_decoder = 0.5;
  double beta1 = 1e-3;

  bool operator==(const M1Config&) const = default;
};

// Encoder: one-hot series as 12 conv channels -> two conv layers -> dense
// heads for the posterior mean and log-std. Decoder mirrors it with
// transposed convolutions ending in per-cell 3-way class logits.
struct M1Model {
  M1Config cfg;
  ad::ParamSet params;
  int t1 = 0, t2 = 0, flat = 0;  // conv time extents and flattened width

  static M1Model init(const M1Config& cfg, Rng& rng);
  M1Model clone() const;
};

struct M2Config {
  int latent_dim = 4;  // z2
  int z1_dim = 16;
  int num_classes = 3;
  double alpha = 1.0;
  double beta2 = 1e-3;
  double dropout_encoder = 0.2;
  double dropout_decoder = 0.5;

  bool operator==(const M2Config&) const = default;
};

// Conditional VAE on M1's latents with a separate linear classifier head;
// no hidden layers. The decoder likelihood over z1 is Gaussian with unit
// variance, so the reconstruction NLL is a scaled squared error.
struct M2Model {
  M2Config cfg;
  ad::ParamSet params;

  static M2Model init(const M2Config& cfg, Rng& rng);
  M2Model clone() const;
};

struct LatentCode {
  std::vector<double> mean;
  std::vector<double> log_std;
  std::vector<double> sample;  // mean + exp(log_std) * recorded noise
};

// ---- input encodings -------------------------------------------------------

// one-hot (frames*classes, weeks) conv channel layout; channel = f*3 + class
ad::Tensor series_to_channels(const data::EngagementSeries& s);
ad::Tensor batch_to_channels(const std::vector<data::EngagementSeries>& xs);
// one-hot (cells, classes) target layout
ad::Tensor series_to_cells(const data::EngagementSeries& s);
ad::Tensor batch_to_cells(const std::vector<data::EngagementSeries>& xs);
// validated one-hot (4,17,3) -> channels; rejects malformed one-hot input
ad::Tensor onehot_to_channels(const ad::Tensor& onehot);

// ---- graph builders (shared by losses, training, and inference) ------------

struct M1Encoded {
  ad::Var mu, logsig;
};
M1Encoded m1_encode_graph(const M1Model& m, const ad::Var& x_channels,
                          Rng& rng, bool training);
// -> per-cell class logits, (cells,classes) or (batch,cells,classes)
ad::Var m1_decode_graph(const M1Model& m, const ad::Var& z, Rng& rng,
                        bool training);

struct M1ElboParts {
  ad::Var loss;        // recon NLL + beta_effective * KL (batch mean)
  double recon = 0;    // batch-mean reconstruction NLL
  double kl = 0;       // batch-mean KL
};
// x_channels (B,12,17) with matching one-hot targets (B,68,3)
M1ElboParts m1_batch_elbo(const M1Model& m, const ad::Tensor& x_channels,
                          const ad::Tensor& x_cells, double beta_effective,
                          Rng& rng, bool training);

// ---- M1 operations ---------------------------------------------------------

// Posterior parameters plus one reparameterized sample (inference mode).
LatentCode m1_encode(const M1Model& m, const ad::Tensor& x_onehot, Rng& rng);
LatentCode m1_encode(const M1Model& m, const data::EngagementSeries& x,
                     Rng& rng);

// 68 categorical distributions, each summing to 1; (4,17,3) layout.
ad::Tensor m1_decode(const M1Model& m, const std::vector<double>& z1);

// Single-example beta-VAE loss with its parts.
M1ElboParts m1_elbo(const M1Model& m, const data::EngagementSeries& x,
                    double beta_effective, Rng& rng);

// Deterministic reconstruction: posterior mean -> per-cell argmax.
data::EngagementSeries reconstruct(const M1Model& m,
                                   const data::EngagementSeries& x);

// Posterior means for a whole dataset (chunked batch encode).
std::vector<std::vector<double>> encode_means(
    const M1Model& m, const std::vector<data::EngagementSeries>& xs);

// ---- M2 losses -------------------------------------------------------------

// Batched labelled loss L(z1,y): z1 (B,16) with labels ys (size B); returns
// the per-example loss vector (B,) as a graph node.
ad::Var m2_labelled_loss_graph(const M2Model& m, const ad::Var& z1,
                               const std::vector<int>& ys,
                               double beta_effective, Rng& rng, bool training);

// Batched unlabelled loss U(z1): sum_y q(y|z1) L(z1,y) + H(q(y|z1)),
// uniform label prior; returns the per-example loss vector (B,).
ad::Var m2_unlabelled_loss_graph(const M2Model& m, const ad::Var& z1,
                                 double beta_effective, Rng& rng,
                                 bool training);

// Classifier cross-entropy -log q(y|z1), per example (B,).
ad::Var m2_class_ce_graph(const M2Model& m, const ad::Var& z1,
                          const std::vector<int>& ys, Rng& rng, bool training);

// Scalar convenience wrappers over the graph builders (single example,
// inference-mode dropout, seeded reparameterization noise).
double m2_labelled_loss(const M2Model& m, const std::vector<double>& z1, int y,
                        double beta_effective, Rng& rng);
double m2_unlabelled_loss(const M2Model& m, const std::vector<double>& z1,
                          double beta_effective, Rng& rng);

// Full objective: sum of labelled losses + sum of unlabelled losses +
// alpha * mean classifier cross-entropy on the labelled pairs. Rejects two
// empty batches.
double m2_objective(const M2Model& m,
                    const std::vector<std::vector<double>>& z1_labelled,
                    const std::vector<int>& ys,
                    const std::vector<std::vector<double>>& z1_unlabelled,
                    double alpha, double beta_effective, Rng& rng);

// ---- inference & generation ------------------------------------------------

// pi_phi2(M1 posterior mean of x); deterministic, no sampling.
std::vector<double> classify(const data::EngagementSeries& x,
                             const M1Model& m1, const M2Model& m2);
std::vector<double> classify_z1(const std::vector<double>& z1,
                                const M2Model& m2);

// z2 ~ N(0,I) -> z1 via the M2 decoder -> per-cell categoricals -> sampled
// cells; the label y is attached by the caller.
std::vector<data::EngagementSeries> generate_conditional(const M1Model& m1,
                                                         const M2Model& m2,
                                                         int y, int count,
                                                         Rng& rng);

// z1 ~ N(0,I) decoded and cell-sampled; no labels.
std::vector<data::EngagementSeries> generate_unconditional(const M1Model& m1,
                                                           int count,
                                                           Rng& rng);

// Unconditional draws from the stacked M1+M2 generative model
// (y ~ uniform, z2 ~ N(0,I)); labels discarded. Used for generative replay.
std::vector<data::EngagementSeries> generate_stacked(const M1Model& m1,
                                                     const M2Model& m2,
                                                     int count, Rng& rng);

// ---- checkpoints -----------------------------------------------------------

// Versioned JSON container with config + named parameter tensors; a fixed
// model saves to identical bytes and loads back bit-exactly.
void save_m1(const M1Model& m, const std::string& path);
M1Model load_m1(const std::string& path);
void save_m2(const M2Model& m, const std::string& path);
M2Model load_m2(const std::string& path);

}  // namespace caps::models
