// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion. Exits nonzero if any
// criterion fails. Criterion 8 drives the full pipeline at desk scale and
// dominates the runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "caps/accountant.hpp"
#include "caps/autodiff.hpp"
#include "caps/data.hpp"
#include "caps/errors.hpp"
#include "caps/evaluation.hpp"
#include "caps/io.hpp"
#include "caps/models.hpp"
#include "caps/pipeline.hpp"
#include "caps/train.hpp"

using namespace caps;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Criterion {
 public:
  explicit Criterion(std::string name) : name_(std::move(name)) {
    start_ = std::chrono::steady_clock::now();
  }

  void check(bool ok, const std::string& detail) {
    if (!ok) {
      failed_ = true;
      details_ += (details_.empty() ? "" : "; ") + detail;
    }
  }

  void note(const std::string& text) {
    details_ += (details_.empty() ? "" : "; ") + text;
  }

  ~Criterion() {
    const auto secs =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start_)
            .count() /
        1000.0;
    std::printf("[%s] %-28s (%.1fs)%s%s\n", failed_ ? "FAIL" : "PASS",
                name_.c_str(), secs, details_.empty() ? "" : " ",
                details_.c_str());
    std::fflush(stdout);
    if (failed_) ++g_failures;
  }

 private:
  std::string name_;
  std::string details_;
  bool failed_ = false;
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double x) { return io::format_double(x); }

// ---------------------------------------------------------------------------

void criterion_accountant_closed_forms() {
  Criterion c("accountant-closed-forms");
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const double sigma = 0.5 + 3 * rng.uniform();
    const double alpha = 1.5 + 60 * rng.uniform();
    c.check(privacy::rdp_gaussian(sigma, alpha) == alpha / (2 * sigma * sigma),
            "rdp_gaussian mismatch at sigma=" + fmt(sigma));
  }
  privacy::MechanismSpec mech{1.7, 1.0, 430};
  const auto curve =
      privacy::rdp_subsampled_gaussian(mech, privacy::default_orders());
  for (const auto& [a, v] : curve) {
    const double expect = 430 * a / (2 * 1.7 * 1.7);
    c.check(std::fabs(v - expect) <= 1e-12 * std::max(1.0, expect),
            "q=1 composition off at alpha=" + fmt(a));
  }
}

void criterion_table1_mapping() {
  Criterion c("table1-mu-to-epsilon");
  const double got1 = privacy::gdp_epsilon(0.35, 1e-3);
  const double got2 = privacy::gdp_epsilon(0.63, 1e-3);
  const double got3 = privacy::gdp_epsilon(1.12, 1e-3);
  c.check(std::fabs(got1 - 0.83) <= 0.02,
          "gdp_epsilon(0.35)=" + fmt(got1) + " want 0.83+-0.02");
  c.check(std::fabs(got2 - 1.75) <= 0.02,
          "gdp_epsilon(0.63)=" + fmt(got2) + " want 1.75+-0.02");
  c.check(std::fabs(got3 - 3.49) <= 0.02,
          "gdp_epsilon(1.12)=" + fmt(got3) + " want 3.49+-0.02");
}

void criterion_accounting_direction() {
  Criterion c("accounting-direction");
  const double delta = 1e-3, q = 0.3;
  const long k = 1000;
  for (double target : {1.0, 2.0, 4.0}) {
    const double sigma = privacy::calibrate_noise(target, delta, q, k);
    privacy::MechanismSpec mech{sigma, q, k};
    const auto rep = privacy::account(mech, delta);
    c.check(rep.epsilon_gdp < rep.epsilon_rdp,
            "eps_gdp >= eps_rdp at target " + fmt(target));
    c.check(rep.regret < 1e-2, "regret " + fmt(rep.regret) + " >= 1e-2 at target " +
                                   fmt(target));
  }
}

void criterion_algorithm1_fidelity() {
  Criterion c("algorithm1-fidelity");

  // shared fixture: a tiny linear model with 2 private and 2 public points
  auto build = [](ad::ParamSet& p, std::vector<ad::Tensor>& priv,
                  std::vector<ad::Tensor>& pub) {
    Rng rng(8);
    ad::Tensor w({2, 3});
    for (auto& v : w.v) v = rng.gauss();
    p.add("w", w);
    p.add("b", ad::Tensor({2}));
    for (int i = 0; i < 4; ++i) {
      ad::Tensor x({3});
      for (auto& v : x.v) v = rng.gauss();
      (i < 2 ? priv : pub).push_back(x);
    }
  };
  auto priv_loss = [](ad::ParamSet& p, std::vector<ad::Tensor>& xs) {
    return [&](int i, Rng&) {
      ad::Var y = ad::dense(ad::Var::constant(xs[static_cast<size_t>(i)]),
                            p.get("w"), p.get("b"));
      return ad::sum(ad::mul(y, y));
    };
  };
  auto pub_loss = [](ad::ParamSet& p, std::vector<ad::Tensor>& xs) {
    return [&](Rng& r) {
      const auto i = static_cast<size_t>(r.uniform_int(2));
      ad::Var y = ad::dense(ad::Var::constant(xs[i]), p.get("w"), p.get("b"));
      return ad::mean(ad::mul(y, y));
    };
  };

  // (a) sigma = 0 with non-binding C equals non-private Adam on the
  // combined (mean-clipped private + public) gradient
  {
    train::TrainConfig cfg;
    cfg.learning_rate = 0.03;
    cfg.batch_private = 1;
    cfg.clipping_norm = 1e12;
    cfg.noise_multiplier = 0;

    ad::ParamSet pa, pb;
    std::vector<ad::Tensor> priva, puba, privb, pubb;
    build(pa, priva, puba);
    build(pb, privb, pubb);
    auto st = train::OptimizerState::init(pa);
    Rng r1(500);
    train::dp_adam_step(pa, st, cfg, 2, priv_loss(pa, priva),
                        pub_loss(pa, puba), r1);

    Rng r2(500);
    ad::GradSet total = ad::GradSet::zeros_like(pb);
    auto plb = priv_loss(pb, privb);
    for (int i = 0; i < 2; ++i)
      if (r2.uniform() < 0.5)
        total.add_scaled(ad::backward(plb(i, r2), pb), 1.0);
    total.scale(1.0 / cfg.batch_private);
    total.add_scaled(ad::backward(pub_loss(pb, pubb)(r2), pb), 1.0);
    auto st2 = train::OptimizerState::init(pb);
    adam_step(pb, total, st2, cfg);

    const auto a = pa.flatten_values();
    const auto b = pb.flatten_values();
    double maxdiff = 0;
    for (size_t i = 0; i < a.size(); ++i)
      maxdiff = std::max(maxdiff, std::fabs(a[i] - b[i]));
    c.check(maxdiff < 1e-10,
            "sigma=0 degeneracy: max param diff " + fmt(maxdiff));
  }

  // (b) one noised step matches an independent line-by-line replay
  {
    train::TrainConfig cfg;
    cfg.learning_rate = 0.03;
    cfg.batch_private = 1;
    cfg.clipping_norm = 0.7;
    cfg.noise_multiplier = 1.1;

    ad::ParamSet pa, pb;
    std::vector<ad::Tensor> priva, puba, privb, pubb;
    build(pa, priva, puba);
    build(pb, privb, pubb);
    auto st = train::OptimizerState::init(pa);
    Rng r1(901);
    train::dp_adam_step(pa, st, cfg, 2, priv_loss(pa, priva),
                        pub_loss(pa, puba), r1);

    // replay lines 4-13 with independent clip/noise/moment code
    Rng r2(901);
    const double q = 0.5;
    std::vector<int> batch;
    for (int i = 0; i < 2; ++i)
      if (r2.uniform() < q) batch.push_back(i);
    const auto dim = static_cast<size_t>(pb.total_size());
    std::vector<double> acc(dim, 0.0);
    auto plb = priv_loss(pb, privb);
    for (int i : batch) {
      const auto g = ad::backward(plb(i, r2), pb).flatten();
      double norm = 0;
      for (double x : g) norm += x * x;
      norm = std::sqrt(norm);
      const double clip = 1.0 / std::max(1.0, norm / cfg.clipping_norm);
      for (size_t j = 0; j < dim; ++j) acc[j] += clip * g[j];
    }
    for (auto& x : acc)
      x += cfg.noise_multiplier * cfg.clipping_norm * r2.gauss();
    for (auto& x : acc) x /= cfg.batch_private;
    const auto gp = ad::backward(pub_loss(pb, pubb)(r2), pb).flatten();
    for (size_t j = 0; j < dim; ++j) acc[j] += gp[j];
    auto w = pb.flatten_values();
    for (size_t j = 0; j < dim; ++j) {
      const double m = 0.1 * acc[j];               // m1 with m0 = 0
      const double v = 0.001 * acc[j] * acc[j];    // v1 with v0 = 0
      const double mh = m / (1 - 0.9);
      const double vh = v / (1 - 0.999);
      w[j] -= cfg.learning_rate * mh / (std::sqrt(vh) + 1e-8);
    }

    const auto a = pa.flatten_values();
    double maxdiff = 0;
    for (size_t i = 0; i < a.size(); ++i)
      maxdiff = std::max(maxdiff, std::fabs(a[i] - w[i]));
    c.check(maxdiff < 1e-10, "noised-step replay: max diff " + fmt(maxdiff));
  }
}

void criterion_gradient_correctness() {
  Criterion c("gradient-correctness");
  Rng seed_rng(24);

  // M1 beta-VAE loss over a small batch
  {
    models::M1Config mcfg;
    Rng mr(31);
    models::M1Model m = models::M1Model::init(mcfg, mr);
    Rng dr(7);
    std::vector<data::EngagementSeries> xs;
    for (int i = 0; i < 3; ++i)
      xs.push_back(data::simulate_series(
          static_cast<data::Archetype>(i % data::kArchetypes), 1.0, dr));
    const auto xch = models::batch_to_channels(xs);
    const auto xc = models::batch_to_cells(xs);
    auto make_loss = [&] {
      Rng r(1234);  // frozen reparameterization noise per evaluation
      return models::m1_batch_elbo(m, xch, xc, 1e-3, r, false).loss;
    };
    ad::GradSet g = ad::backward(make_loss(), m.params);
    int checked = 0;
    while (checked < 25) {
      const auto pi = static_cast<size_t>(
          seed_rng.uniform_int(static_cast<int64_t>(g.names.size())));
      ad::Tensor& t =
          const_cast<ad::Tensor&>(m.params.get(g.names[pi]).val());
      const int64_t idx = seed_rng.uniform_int(t.size());
      const double orig = t[idx], h = 1e-5;
      t[idx] = orig + h;
      const double up = make_loss().val()[0];
      t[idx] = orig - h;
      const double down = make_loss().val()[0];
      t[idx] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = g.tensors[pi][idx];
      if (std::fabs(fd) < 1e-7 && std::fabs(an) < 1e-7) continue;  // dead relu
      const double rel =
          std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      c.check(rel < 1e-4, "m1 grad " + g.names[pi] + "[" + fmt(idx) +
                              "] rel err " + fmt(rel));
      ++checked;
    }
  }

  // M2 objective (labelled + unlabelled + classifier head)
  {
    models::M2Config mcfg;
    Rng mr(32);
    models::M2Model m = models::M2Model::init(mcfg, mr);
    ad::Tensor cw({3, 16});
    Rng wr(33);
    for (auto& v : cw.v) v = 0.3 * wr.gauss();
    m.params.set("cls_w", cw);

    ad::Tensor zl({2, 16}), zu({2, 16});
    for (auto& v : zl.v) v = wr.gauss();
    for (auto& v : zu.v) v = wr.gauss();
    const std::vector<int> ys{0, 2};
    auto make_loss = [&] {
      Rng r(77);
      ad::Var l = models::m2_labelled_loss_graph(m, ad::Var::constant(zl), ys,
                                                 1e-3, r, false);
      ad::Var u = models::m2_unlabelled_loss_graph(m, ad::Var::constant(zu),
                                                   1e-3, r, false);
      ad::Var ce = models::m2_class_ce_graph(m, ad::Var::constant(zl), ys, r,
                                             false);
      return ad::add(ad::add(ad::sum(l), ad::sum(u)), ad::mean(ce));
    };
    ad::GradSet g = ad::backward(make_loss(), m.params);
    for (int probe = 0; probe < 25; ++probe) {
      const auto pi = static_cast<size_t>(
          seed_rng.uniform_int(static_cast<int64_t>(g.names.size())));
      ad::Tensor& t =
          const_cast<ad::Tensor&>(m.params.get(g.names[pi]).val());
      const int64_t idx = seed_rng.uniform_int(t.size());
      const double orig = t[idx], h = 1e-5;
      t[idx] = orig + h;
      const double up = make_loss().val()[0];
      t[idx] = orig - h;
      const double down = make_loss().val()[0];
      t[idx] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = g.tensors[pi][idx];
      const double rel =
          std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
      c.check(rel < 1e-4, "m2 grad " + g.names[pi] + "[" + fmt(idx) +
                              "] rel err " + fmt(rel));
    }
  }
}

// independent brute-force AJS (separate histogram and statistics code)
namespace bruteforce {

double stat_of(const data::EngagementSeries& x, int h) {
  const int frame = h / 4, stat = h % 4;
  std::vector<double> vals;
  for (int w = 0; w < data::kWeeks; ++w) vals.push_back(x.get(frame, w));
  std::sort(vals.begin(), vals.end());
  if (stat == 0) return vals[8];
  double mean = 0;
  for (double v : vals) mean += v;
  mean /= 17.0;
  if (stat == 1) return mean;
  if (stat == 2) {
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return std::sqrt(var / 17.0);
  }
  double counts[3] = {0, 0, 0};
  for (double v : vals) counts[static_cast<int>(v)]++;
  double e = 0;
  for (double cnt : counts)
    if (cnt > 0) e -= (cnt / 17.0) * std::log(cnt / 17.0);
  return e;
}

double js(const std::vector<double>& p, const std::vector<double>& q,
          int bins) {
  double lo = 1e300, hi = -1e300;
  for (double v : p) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : q) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) return 0.0;
  std::vector<double> hp(static_cast<size_t>(bins), 0.0),
      hq(static_cast<size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) {
    const double l = lo + (hi - lo) * b / bins;
    const double r = lo + (hi - lo) * (b + 1) / bins;
    for (double v : p)
      if ((v >= l && v < r) || (b == bins - 1 && v == r)) hp[static_cast<size_t>(b)]++;
    for (double v : q)
      if ((v >= l && v < r) || (b == bins - 1 && v == r)) hq[static_cast<size_t>(b)]++;
  }
  for (auto& v : hp) v /= static_cast<double>(p.size());
  for (auto& v : hq) v /= static_cast<double>(q.size());
  double out = 0;
  for (int b = 0; b < bins; ++b) {
    const double m = 0.5 * (hp[static_cast<size_t>(b)] + hq[static_cast<size_t>(b)]);
    if (hp[static_cast<size_t>(b)] > 0)
      out += 0.5 * hp[static_cast<size_t>(b)] * std::log(hp[static_cast<size_t>(b)] / m);
    if (hq[static_cast<size_t>(b)] > 0)
      out += 0.5 * hq[static_cast<size_t>(b)] * std::log(hq[static_cast<size_t>(b)] / m);
  }
  return out;
}

double ajs(const data::LabelledDataset& real, const data::LabelledDataset& syn,
           int bins) {
  double acc = 0;
  for (int cls = 0; cls < 3; ++cls) {
    double stat_acc = 0;
    for (int h = 0; h < 16; ++h) {
      std::vector<double> p, q;
      for (const auto& r : real.records)
        if (r.label == cls) p.push_back(stat_of(r.x, h));
      for (const auto& r : syn.records)
        if (r.label == cls) q.push_back(stat_of(r.x, h));
      stat_acc += js(p, q, bins);
    }
    acc += stat_acc / 16.0;
  }
  return acc / 3.0;
}

}  // namespace bruteforce

void criterion_metric_oracles() {
  Criterion c("metric-oracles");
  Rng rng(90);
  auto random_ds = [&](const std::string& tag, int n) {
    data::LabelledDataset ds;
    ds.cycle_tag = tag;
    for (int i = 0; i < n; ++i) {
      data::EngagementSeries s;
      for (int f = 0; f < 4; ++f)
        for (int w = 0; w < 17; ++w)
          s.set(f, w, static_cast<int>(rng.uniform_int(3)));
      ds.records.push_back({tag + std::to_string(i), s,
                            static_cast<int>(rng.uniform_int(3))});
    }
    return ds;
  };

  const auto real = random_ds("r", 30);
  const auto syn = random_ds("s", 30);
  const double got = eval::ajs(real, syn, 10).value;
  const double want = bruteforce::ajs(real, syn, 10);
  c.check(std::fabs(got - want) < 1e-10,
          "ajs " + fmt(got) + " vs brute force " + fmt(want));
  c.check(eval::ajs(real, real, 10).value == 0.0, "ajs(D,D) != 0");
  c.check(eval::ajs(real, real, 7).value == 0.0, "ajs(D,D) != 0 at 7 bins");

  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p, q;
    const int np = 1 + static_cast<int>(rng.uniform_int(50));
    const int nq = 1 + static_cast<int>(rng.uniform_int(50));
    for (int i = 0; i < np; ++i) p.push_back(rng.gauss());
    for (int i = 0; i < nq; ++i) q.push_back(3 * rng.uniform() - 1);
    const double js = eval::js_divergence(p, q, 10);
    c.check(js >= 0.0 && js <= std::log(2.0) + 1e-12,
            "js out of [0, ln 2]: " + fmt(js));
  }
}

void criterion_preprocessing_goldens() {
  Criterion c("preprocessing-goldens");
  c.check(data::frame_of(12) == data::kAfternoon, "hour 12 not afternoon");
  c.check(data::engagement_class(15) == 1, "15 min not active");
  c.check(data::engagement_class(16) == 2, "16 min not dedicated");
  c.check(data::engagement_class(0) == 0, "0 min not inactive");

  Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 3 + static_cast<int>(rng.uniform_int(25));
    std::vector<double> scores;
    for (int i = 0; i < n; ++i)
      scores.push_back(static_cast<double>(rng.uniform_int(12)));
    const auto cls = data::bin_scores(scores);
    std::map<double, std::set<int>> groups;
    for (int i = 0; i < n; ++i)
      groups[scores[static_cast<size_t>(i)]].insert(cls[static_cast<size_t>(i)]);
    for (const auto& [v, set] : groups)
      c.check(set.size() == 1, "tie split at score " + fmt(v));
  }
}

// criterion 8 lives in run_cyclic_trend below; criterion 9 reuses its config

struct TrendConfig {
  std::string root;
  std::string config_path;
};

TrendConfig write_trend_workspace(const std::string& name,
                                  const std::vector<uint64_t>& seeds) {
  TrendConfig tc;
  tc.root = (fs::temp_directory_path() / name).string();
  fs::remove_all(tc.root);
  fs::create_directories(tc.root + "/cohorts");
  for (int t = 0; t < 3; ++t) {
    data::CohortSpec cs;
    cs.tag = "c202" + std::to_string(2 + t);
    cs.n = 110;
    cs.mixture = {0.35, 0.15, 0.25, 0.15, 0.10};
    cs.mixture[static_cast<size_t>(t % 5)] += 0.10;
    cs.mixture[static_cast<size_t>((t + 2) % 5)] -= 0.05;
    Rng rng(9000 + static_cast<uint64_t>(t));
    data::save_dataset(data::simulate_cohort(cs, rng),
                       tc.root + "/cohorts/" + cs.tag + ".csv");
  }
  std::string seed_list;
  for (size_t i = 0; i < seeds.size(); ++i)
    seed_list += (i ? "," : "") + std::to_string(seeds[i]);
  std::ofstream out(tc.root + "/config.json");
  out << R"({
  "out_dir": ")" << tc.root << R"(/out",
  "seed": 1, "seeds": [)" << seed_list << R"(],
  "delta": 1e-3,
  "epsilons": [1.0, 4.0, "inf"],
  "clipping_norm": 1.0,
  "pool": {"simulators": 20, "per_simulator": 300, "sample_size": 3000},
  "cohorts": [
    {"tag": "c2022", "path": "cohorts/c2022.csv"},
    {"tag": "c2023", "path": "cohorts/c2023.csv"},
    {"tag": "c2024", "path": "cohorts/c2024.csv"}
  ],
  "cycle_orders": [[0,1,2]],
  "m1_train": {"learning_rate": 0.002, "epochs": 8, "batch_public": 128},
  "m2_train": {"learning_rate": 0.005, "epochs": 15, "batch_public": 64, "batch_private": 16},
  "unlabelled_count": 1500,
  "replay": {"samples_each": 1200, "train": {"learning_rate": 0.001, "epochs": 3, "batch_public": 128}}
}
)";
  out.close();
  tc.config_path = tc.root + "/config.json";
  return tc;
}

void criterion_cyclic_trend() {
  Criterion c("cyclic-trend-desk-scale");
  const auto tc = write_trend_workspace("caps_acceptance_trend", {1, 2, 3});
  auto cfg = cli::RunConfig::load(tc.config_path);
  cli::run_full(cfg, {});

  const auto rows = cli::collect_eval_rows(cfg.out_dir);
  const auto agg = cli::aggregate_report(rows);
  std::map<std::pair<std::string, int>, std::map<double, double>> means;
  for (const auto& r : agg)
    means[{r.metric, r.cycle_index}][r.epsilon] = r.mean;

  for (double eps : cfg.epsilons) {
    const double recon1 = means[{"ajs_reconstruction", 0}][eps];
    const double recon3 = means[{"ajs_reconstruction", 2}][eps];
    c.check(recon3 <= recon1,
            "recon AJS up at eps=" + cli::epsilon_label(eps) + ": " +
                fmt(recon1) + " -> " + fmt(recon3));
    const double ba1 = means[{"balanced_accuracy", 0}][eps];
    const double ba3 = means[{"balanced_accuracy", 2}][eps];
    c.check(ba3 >= ba1 - 0.02,
            "balanced accuracy drop at eps=" + cli::epsilon_label(eps) + ": " +
                fmt(ba1) + " -> " + fmt(ba3));
    c.note("eps=" + cli::epsilon_label(eps) + " recon " + fmt(recon1) + "->" +
           fmt(recon3) + " bacc " + fmt(ba1) + "->" + fmt(ba3));
  }

  // (c) every realized epsilon stays within its target
  for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (!(entry.is_regular_file() && name.ends_with("_accounting.csv")))
      continue;
    const auto csv = io::parse_csv(io::read_text_file(entry.path().string()));
    const std::string run = entry.path().parent_path().filename().string();
    const auto epos = run.rfind("_e");
    const std::string eps_label = run.substr(epos + 2);
    if (eps_label == "inf") continue;
    const double target = std::stod(eps_label);
    const double realized = std::stod(csv[1][0]);
    c.check(realized <= target, "realized eps " + fmt(realized) +
                                    " exceeds target " + eps_label + " in " +
                                    run);
  }
  fs::remove_all(tc.root);
}

void criterion_reproducibility() {
  Criterion c("reproducibility");
  const auto tc = write_trend_workspace("caps_acceptance_repro", {5});
  auto cfg = cli::RunConfig::load(tc.config_path);
  cfg.epsilons = {4.0};

  cli::run_full(cfg, {});
  const std::string report1 =
      io::read_text_file(cfg.out_dir + "/report.csv");
  std::map<std::string, std::string> eval1;
  for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.ends_with("_eval.csv"))
      eval1[entry.path().string()] = io::file_hash(entry.path().string());
  }

  fs::remove_all(cfg.out_dir);
  cli::run_full(cfg, {});
  c.check(io::read_text_file(cfg.out_dir + "/report.csv") == report1,
          "report.csv differs between identical runs");
  for (const auto& [path, hash] : eval1)
    c.check(io::file_hash(path) == hash, "eval rows differ: " + path);
  fs::remove_all(tc.root);
}

}  // namespace

int main() {
  std::printf("CAPS acceptance suite\n");
  criterion_accountant_closed_forms();
  criterion_table1_mapping();
  criterion_accounting_direction();
  criterion_algorithm1_fidelity();
  criterion_gradient_correctness();
  criterion_metric_oracles();
  criterion_preprocessing_goldens();
  criterion_cyclic_trend();
  criterion_reproducibility();
  if (g_failures) {
    std::printf(
        "%d criterion(s) failed.\n"
        "note: table1-mu-to-epsilon and the regret half of "
        "accounting-direction assert paper values that the pinned closed-form "
        "route cannot reproduce (the paper's GDP columns come from a "
        "numerical f-DP pipeline); see the repository docs for the "
        "analysis.\n",
        g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
