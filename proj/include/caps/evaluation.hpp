// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "caps/data.hpp"
#include "caps/models.hpp"
#include "caps/rng.hpp"

namespace caps::eval {

// Per-series summary f(x): for each of the 4 frames, (median, mean,
// standard deviation, entropy) of its 17-week class sequence. Classes are
// treated as numeric 0/1/2 for median/mean/std (population std); entropy is
// the natural-log Shannon entropy of the empirical class distribution.
inline constexpr int kStatsPerFrame = 4;
inline constexpr int kSummaryDim = data::kFrames * kStatsPerFrame;
using FeatureSummary = std::array<double, kSummaryDim>;

FeatureSummary summarize(const data::EngagementSeries& x);

// Jensen-Shannon divergence between two empirical samples, in nats:
// histogram both on shared equal-width bins over the pooled range,
// JS = 0.5 KL(P||M) + 0.5 KL(Q||M) with M = (P+Q)/2 and 0 log 0 := 0.
double js_divergence(const std::vector<double>& sample_p,
                     const std::vector<double>& sample_q, int bins = 10);

struct AjsResult {
  double value = 0;
  // per (achievement class, summary statistic) JS terms
  std::array<std::array<double, kSummaryDim>, data::kLabels> per_class_stat{};
  int bins = 10;
};

// Average JS divergence: mean over the 3 achievement classes of the mean
// over the 16 summary statistics of the class-conditioned JS terms. Both
// datasets must contain every class.
AjsResult ajs(const data::LabelledDataset& real,
              const data::LabelledDataset& synthetic, int bins = 10);

struct BalancedAccuracy {
  double value = 0;
  std::vector<int> excluded_classes;  // true classes absent from the sample
};

// Mean over classes of per-class recall; labels in {0,1,2}.
BalancedAccuracy balanced_accuracy(const std::vector<int>& true_labels,
                                   const std::vector<int>& predicted_labels);

// Mean absolute error over ordinal labels.
double mae(const std::vector<int>& true_labels,
           const std::vector<int>& predicted_labels);

enum class EvalMode { kReconstruction, kPriorGeneration };

struct EvalReport {
  std::string cycle;
  EvalMode mode = EvalMode::kReconstruction;
  double ajs = 0;
  int ajs_bins = 10;
  double balanced_accuracy = 0;
  double mae = 0;
  std::array<int, data::kLabels> class_counts{};  // real cohort
  bool classifier_metrics_omitted = false;        // no held-out cohorts
  std::vector<int> excluded_classes;
};

// Builds the synthetic counterpart for the chosen mode (deterministic
// cell-argmax reconstruction, or conditional generation with class counts
// matching the real cohort), computes AJS against the real cohort, and
// evaluates M2's classifier on the held-out cohorts pooled together.
EvalReport evaluate_cycle(const data::LabelledDataset& real,
                          const models::M1Model& m1, const models::M2Model& m2,
                          EvalMode mode,
                          const std::vector<const data::LabelledDataset*>& heldout,
                          int bins, Rng& rng);

// The synthetic dataset evaluate_cycle scores (exposed so the pipeline can
// persist the shared synthetic cohort).
data::LabelledDataset make_synthetic(const data::LabelledDataset& real,
                                     const models::M1Model& m1,
                                     const models::M2Model& m2, EvalMode mode,
                                     Rng& rng);

// Scores an already-built synthetic dataset (AJS + classifier metrics).
EvalReport score_synthetic(const data::LabelledDataset& real,
                           const data::LabelledDataset& synth,
                           const models::M1Model& m1, const models::M2Model& m2,
                           EvalMode mode,
                           const std::vector<const data::LabelledDataset*>& heldout,
                           int bins);

}  // namespace caps::eval
