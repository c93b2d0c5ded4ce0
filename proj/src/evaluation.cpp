// SPDX-License-Identifier: Apache-2.0
#include "caps/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "caps/errors.hpp"

namespace caps::eval {

FeatureSummary summarize(const data::EngagementSeries& x) {
  FeatureSummary f{};
  for (int frame = 0; frame < data::kFrames; ++frame) {
    std::array<double, data::kWeeks> vals;
    std::array<int, data::kClasses> counts{};
    double sum = 0;
    for (int w = 0; w < data::kWeeks; ++w) {
      const int c = x.get(frame, w);
      vals[static_cast<size_t>(w)] = c;
      counts[static_cast<size_t>(c)]++;
      sum += c;
    }
    std::sort(vals.begin(), vals.end());
    const double median = vals[data::kWeeks / 2];  // 17 values: exact middle
    const double mean = sum / data::kWeeks;
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= data::kWeeks;  // population variance keeps std within [0,1]
    double entropy = 0;
    for (int c = 0; c < data::kClasses; ++c) {
      const double p = static_cast<double>(counts[static_cast<size_t>(c)]) /
                       data::kWeeks;
      if (p > 0) entropy -= p * std::log(p);
    }
    f[static_cast<size_t>(frame * kStatsPerFrame + 0)] = median;
    f[static_cast<size_t>(frame * kStatsPerFrame + 1)] = mean;
    f[static_cast<size_t>(frame * kStatsPerFrame + 2)] = std::sqrt(var);
    f[static_cast<size_t>(frame * kStatsPerFrame + 3)] = entropy;
  }
  return f;
}

double js_divergence(const std::vector<double>& sample_p,
                     const std::vector<double>& sample_q, int bins) {
  if (sample_p.empty() || sample_q.empty())
    throw std::invalid_argument("js_divergence: empty sample");
  if (bins < 1) throw std::invalid_argument("js_divergence: bins < 1");

  double lo = sample_p[0], hi = sample_p[0];
  for (double v : sample_p) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : sample_q) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) return 0.0;  // all mass in one degenerate bin

  // bin b covers [lo + (hi-lo)*b/bins, lo + (hi-lo)*(b+1)/bins), with the
  // top edge joining the last bin; the fix-up loops pin edge values to the
  // explicit edge formula regardless of rounding in the division
  auto edge = [&](int b) { return lo + (hi - lo) * b / bins; };
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(static_cast<size_t>(bins), 0.0);
    for (double v : xs) {
      int b = static_cast<int>((v - lo) / (hi - lo) * bins);
      b = std::min(std::max(b, 0), bins - 1);
      while (b > 0 && v < edge(b)) --b;
      while (b < bins - 1 && v >= edge(b + 1)) ++b;
      h[static_cast<size_t>(b)] += 1.0;
    }
    for (double& e : h) e /= static_cast<double>(xs.size());
    return h;
  };
  const auto p = histogram(sample_p);
  const auto q = histogram(sample_q);

  double js = 0;
  for (int b = 0; b < bins; ++b) {
    const double m = 0.5 * (p[static_cast<size_t>(b)] + q[static_cast<size_t>(b)]);
    if (p[static_cast<size_t>(b)] > 0)
      js += 0.5 * p[static_cast<size_t>(b)] *
            std::log(p[static_cast<size_t>(b)] / m);
    if (q[static_cast<size_t>(b)] > 0)
      js += 0.5 * q[static_cast<size_t>(b)] *
            std::log(q[static_cast<size_t>(b)] / m);
  }
  return js;
}

AjsResult ajs(const data::LabelledDataset& real,
              const data::LabelledDataset& synthetic, int bins) {
  AjsResult res;
  res.bins = bins;
  double class_sum = 0;
  for (int c = 0; c < data::kLabels; ++c) {
    std::vector<FeatureSummary> fr, fs;
    for (const auto& r : real.records)
      if (r.label == c) fr.push_back(summarize(r.x));
    for (const auto& r : synthetic.records)
      if (r.label == c) fs.push_back(summarize(r.x));
    if (fr.empty() || fs.empty())
      throw std::invalid_argument(
          "ajs: class " + std::to_string(c) + " absent from the " +
          (fr.empty() ? "real" : "synthetic") + " dataset");
    double stat_sum = 0;
    for (int h = 0; h < kSummaryDim; ++h) {
      std::vector<double> vp, vq;
      vp.reserve(fr.size());
      vq.reserve(fs.size());
      for (const auto& f : fr) vp.push_back(f[static_cast<size_t>(h)]);
      for (const auto& f : fs) vq.push_back(f[static_cast<size_t>(h)]);
      const double js = js_divergence(vp, vq, bins);
      res.per_class_stat[static_cast<size_t>(c)][static_cast<size_t>(h)] = js;
      stat_sum += js;
    }
    class_sum += stat_sum / kSummaryDim;
  }
  res.value = class_sum / data::kLabels;
  return res;
}

BalancedAccuracy balanced_accuracy(const std::vector<int>& true_labels,
                                   const std::vector<int>& predicted_labels) {
  if (true_labels.size() != predicted_labels.size())
    throw std::invalid_argument("balanced_accuracy: length mismatch");
  if (true_labels.empty())
    throw std::invalid_argument("balanced_accuracy: empty labels");
  std::array<int, data::kLabels> total{}, correct{};
  for (size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i];
    if (t < 0 || t >= data::kLabels || predicted_labels[i] < 0 ||
        predicted_labels[i] >= data::kLabels)
      throw std::invalid_argument("balanced_accuracy: label out of range");
    total[static_cast<size_t>(t)]++;
    if (predicted_labels[i] == t) correct[static_cast<size_t>(t)]++;
  }
  BalancedAccuracy res;
  double sum = 0;
  int present = 0;
  for (int c = 0; c < data::kLabels; ++c) {
    if (total[static_cast<size_t>(c)] == 0) {
      res.excluded_classes.push_back(c);
      continue;
    }
    sum += static_cast<double>(correct[static_cast<size_t>(c)]) /
           total[static_cast<size_t>(c)];
    present++;
  }
  res.value = present > 0 ? sum / present : 0.0;
  return res;
}

double mae(const std::vector<int>& true_labels,
           const std::vector<int>& predicted_labels) {
  if (true_labels.size() != predicted_labels.size())
    throw std::invalid_argument("mae: length mismatch");
  if (true_labels.empty()) throw std::invalid_argument("mae: empty labels");
  double s = 0;
  for (size_t i = 0; i < true_labels.size(); ++i)
    s += std::abs(true_labels[i] - predicted_labels[i]);
  return s / static_cast<double>(true_labels.size());
}

data::LabelledDataset make_synthetic(const data::LabelledDataset& real,
                                     const models::M1Model& m1,
                                     const models::M2Model& m2, EvalMode mode,
                                     Rng& rng) {
  data::LabelledDataset synth;
  synth.cycle_tag = real.cycle_tag;
  if (mode == EvalMode::kReconstruction) {
    for (const auto& r : real.records)
      synth.records.push_back(
          {"recon-" + r.student_id, models::reconstruct(m1, r.x), r.label});
  } else {
    const auto counts = real.label_counts();
    int id = 0;
    for (int c = 0; c < data::kLabels; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      const auto xs = models::generate_conditional(
          m1, m2, c, counts[static_cast<size_t>(c)], rng);
      for (const auto& x : xs)
        synth.records.push_back({"syn-" + std::to_string(id++), x, c});
    }
  }
  return synth;
}

EvalReport score_synthetic(const data::LabelledDataset& real,
                           const data::LabelledDataset& synth,
                           const models::M1Model& m1, const models::M2Model& m2,
                           EvalMode mode,
                           const std::vector<const data::LabelledDataset*>& heldout,
                           int bins) {
  if (real.records.empty())
    throw std::invalid_argument("evaluate_cycle: empty cohort");
  EvalReport rep;
  rep.cycle = real.cycle_tag;
  rep.mode = mode;
  rep.ajs_bins = bins;
  rep.class_counts = real.label_counts();
  rep.ajs = ajs(real, synth, bins).value;

  std::vector<int> yt, yp;
  for (const auto* ds : heldout)
    for (const auto& r : ds->records) {
      if (r.label < 0) continue;
      const auto probs = models::classify(r.x, m1, m2);
      yt.push_back(r.label);
      yp.push_back(static_cast<int>(
          std::max_element(probs.begin(), probs.end()) - probs.begin()));
    }
  if (yt.empty()) {
    rep.classifier_metrics_omitted = true;
  } else {
    const auto ba = balanced_accuracy(yt, yp);
    rep.balanced_accuracy = ba.value;
    rep.excluded_classes = ba.excluded_classes;
    rep.mae = mae(yt, yp);
  }
  return rep;
}

EvalReport evaluate_cycle(const data::LabelledDataset& real,
                          const models::M1Model& m1, const models::M2Model& m2,
                          EvalMode mode,
                          const std::vector<const data::LabelledDataset*>& heldout,
                          int bins, Rng& rng) {
  const auto synth = make_synthetic(real, m1, m2, mode, rng);
  return score_synthetic(real, synth, m1, m2, mode, heldout, bins);
}

}  // namespace caps::eval
