// SPDX-License-Identifier: Apache-2.0
#include "caps/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "caps/accountant.hpp"
#include "caps/errors.hpp"
#include "caps/evaluation.hpp"
#include "caps/io.hpp"
#include "caps/stats.hpp"

namespace caps::cli {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCodeVersion = "0.1.0";

// ---- config -----------------------------------------------------------------

std::string epsilon_label(double eps) {
  return std::isinf(eps) ? "inf" : io::format_double(eps);
}

namespace {

double parse_epsilon(const json& e) {
  if (e.is_string()) {
    if (e.get<std::string>() == "inf")
      return std::numeric_limits<double>::infinity();
    throw config_error("epsilons: unknown token '" + e.get<std::string>() +
                       "' (use a number or \"inf\")");
  }
  return e.get<double>();
}

void parse_train(const json& j, train::TrainConfig& t) {
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.rho1 = j.value("rho1", t.rho1);
  t.rho2 = j.value("rho2", t.rho2);
  t.eps_stable = j.value("eps_stable", t.eps_stable);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_public = j.value("batch_public", t.batch_public);
  t.batch_private = j.value("batch_private", t.batch_private);
  t.anneal_cycles = j.value("anneal_cycles", t.anneal_cycles);
}

}  // namespace

RunConfig RunConfig::load(const std::string& path, uint64_t seed_override,
                          const std::string& out_override) {
  const std::string raw = io::read_text_file(path);
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::exception& e) {
    throw config_error(path + ": invalid JSON: " + e.what());
  }

  RunConfig c;
  try {
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("seeds"))
      c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    c.delta = j.value("delta", c.delta);
    if (j.contains("epsilons"))
      for (const auto& e : j.at("epsilons")) c.epsilons.push_back(parse_epsilon(e));
    c.clipping_norm = j.value("clipping_norm", c.clipping_norm);
    c.eval_bins = j.value("eval_bins", c.eval_bins);

    if (j.contains("pool")) {
      const auto& p = j.at("pool");
      c.pool_file = p.value("file", c.pool_file);
      c.pool.simulators = p.value("simulators", c.pool.simulators);
      c.pool.per_simulator = p.value("per_simulator", c.pool.per_simulator);
      c.pool.sample_size = p.value("sample_size", c.pool.sample_size);
      c.pool.intensity_base = p.value("intensity_base", c.pool.intensity_base);
      c.pool.intensity_step = p.value("intensity_step", c.pool.intensity_step);
    }
    const fs::path config_dir = fs::path(path).parent_path();
    for (const auto& e : j.value("cohorts", json::array())) {
      Cohort co;
      co.tag = e.at("tag").get<std::string>();
      const fs::path p = e.at("path").get<std::string>();
      co.path = p.is_absolute() ? p.string() : (config_dir / p).string();
      c.cohorts.push_back(std::move(co));
    }
    if (j.contains("cycle_orders"))
      c.cycle_orders =
          j.at("cycle_orders").get<std::vector<std::vector<int>>>();

    if (j.contains("m1")) {
      const auto& m = j.at("m1");
      c.m1.latent_dim = m.value("latent_dim", c.m1.latent_dim);
      c.m1.conv1_channels = m.value("conv1_channels", c.m1.conv1_channels);
      c.m1.conv2_channels = m.value("conv2_channels", c.m1.conv2_channels);
      c.m1.kernel = m.value("kernel", c.m1.kernel);
      c.m1.stride = m.value("stride", c.m1.stride);
      c.m1.padding = m.value("padding", c.m1.padding);
      c.m1.dropout_encoder = m.value("dropout_encoder", c.m1.dropout_encoder);
      c.m1.dropout_decoder = m.value("dropout_decoder", c.m1.dropout_decoder);
      c.m1.beta1 = m.value("beta1", c.m1.beta1);
    }
    if (j.contains("m1_train")) parse_train(j.at("m1_train"), c.m1_train);
    if (j.contains("m2")) {
      const auto& m = j.at("m2");
      c.m2.latent_dim = m.value("latent_dim", c.m2.latent_dim);
      c.m2.z1_dim = m.value("z1_dim", c.m2.z1_dim);
      c.m2.num_classes = m.value("num_classes", c.m2.num_classes);
      c.m2.alpha = m.value("alpha", c.m2.alpha);
      c.m2.beta2 = m.value("beta2", c.m2.beta2);
      c.m2.dropout_encoder = m.value("dropout_encoder", c.m2.dropout_encoder);
      c.m2.dropout_decoder = m.value("dropout_decoder", c.m2.dropout_decoder);
    }
    if (j.contains("m2_train")) parse_train(j.at("m2_train"), c.m2_train);
    c.unlabelled_count = j.value("unlabelled_count", c.unlabelled_count);
    if (j.contains("account")) {
      c.account_q = j.at("account").value("q", 0.0);
      c.account_steps = j.at("account").value("steps", 0L);
    }
    if (j.contains("replay")) {
      c.replay_samples_each =
          j.at("replay").value("samples_each", c.replay_samples_each);
      if (j.at("replay").contains("train"))
        parse_train(j.at("replay").at("train"), c.replay_train);
    }
  } catch (const json::exception& e) {
    throw config_error(path + ": bad config value: " + e.what());
  }

  if (seed_override != 0) c.seed = seed_override;
  if (!out_override.empty()) c.out_dir = out_override;
  if (c.seeds.empty()) c.seeds = {c.seed};
  c.m2.z1_dim = c.m1.latent_dim;

  c.config_hash = io::content_hash(raw + "|seed=" + std::to_string(c.seed) +
                                   "|out=" + c.out_dir);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (epsilons.empty()) throw config_error("config: epsilons list is empty");
  for (double e : epsilons)
    if (!(e > 0)) throw config_error("config: epsilon values must be positive");
  if (!(delta > 0 && delta < 1))
    throw config_error("config: delta must be in (0,1)");
  if (cohorts.empty()) throw config_error("config: no cohorts listed");
  for (const auto& co : cohorts)
    if (!fs::exists(co.path))
      throw config_error("config: cohort path does not exist: " + co.path);
  if (cycle_orders.empty())
    throw config_error("config: no cycle orders listed");
  for (const auto& order : cycle_orders) {
    std::set<int> seen(order.begin(), order.end());
    if (order.size() != cohorts.size() ||
        seen.size() != cohorts.size() ||
        *seen.begin() != 0 || *seen.rbegin() != static_cast<int>(cohorts.size()) - 1)
      throw config_error("config: cycle order is not a permutation of 0.." +
                         std::to_string(cohorts.size() - 1));
  }
  m1_train.validate();
  m2_train.validate();
  replay_train.validate();
  if (unlabelled_count < 1 || replay_samples_each < 1)
    throw config_error("config: sample counts must be >= 1");
}

std::string RunConfig::pool_path() const {
  return (fs::path(out_dir) / pool_file).string();
}

std::string RunConfig::pretrained_m1_path() const {
  return (fs::path(out_dir) / "m1_pretrained.json").string();
}

std::string RunConfig::run_dir(int order_idx, uint64_t seed, double eps) const {
  return (fs::path(out_dir) / "runs" /
          ("o" + std::to_string(order_idx) + "_s" + std::to_string(seed) +
           "_e" + epsilon_label(eps)))
      .string();
}

std::string RunConfig::m1_for_cycle_path(int order_idx, uint64_t seed,
                                         double eps, int t) const {
  if (t == 0) return pretrained_m1_path();
  return (fs::path(run_dir(order_idx, seed, eps)) /
          ("m1_for_cycle" + std::to_string(t) + ".json"))
      .string();
}

// ---- manifests ---------------------------------------------------------------

namespace {

class StageGuard {
 public:
  StageGuard(std::string stage, std::string manifest_path,
             std::vector<std::string> outputs, const RunConfig& cfg,
             const StageOptions& opt)
      : stage_(std::move(stage)),
        manifest_path_(std::move(manifest_path)),
        outputs_(std::move(outputs)),
        config_hash_(cfg.config_hash),
        start_(std::chrono::steady_clock::now()) {
    if (opt.resume && completed()) {
      skip_ = true;
      return;
    }
    if (!opt.force && !opt.resume) {
      for (const auto& out : outputs_)
        if (fs::exists(out))
          throw config_error(stage_ + ": output exists without --force: " +
                             out);
    }
  }

  bool skip() const { return skip_; }

  // every stage writes its manifest before exiting successfully
  void commit() {
    json j;
    j["stage"] = stage_;
    j["config_hash"] = config_hash_;
    j["code_version"] = kCodeVersion;
    auto outs = json::array();
    for (const auto& out : outputs_)
      outs.push_back({{"path", out}, {"hash", io::file_hash(out)}});
    j["outputs"] = outs;
    j["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start_)
                       .count();
    fs::create_directories(fs::path(manifest_path_).parent_path());
    io::write_text_file(manifest_path_, j.dump(1));
  }

 private:
  bool completed() const {
    if (!fs::exists(manifest_path_)) return false;
    json j;
    try {
      j = json::parse(io::read_text_file(manifest_path_));
    } catch (...) {
      return false;
    }
    if (j.value("stage", "") != stage_ ||
        j.value("config_hash", "") != config_hash_)
      return false;
    for (const auto& out : j.value("outputs", json::array())) {
      const std::string p = out.value("path", "");
      if (!fs::exists(p) || io::file_hash(p) != out.value("hash", ""))
        return false;
    }
    return true;
  }

  std::string stage_;
  std::string manifest_path_;
  std::vector<std::string> outputs_;
  std::string config_hash_;
  std::chrono::steady_clock::time_point start_;
  bool skip_ = false;
};

std::string manifest_dir(const std::string& base) {
  return (fs::path(base) / "manifests").string();
}

void write_m1_trace(const std::vector<train::EpochStat>& trace,
                    const std::string& path) {
  std::string out = "epoch,loss,recon_nll,kl\n";
  for (const auto& row : trace) {
    out += std::to_string(row.epoch) + "," + io::format_double(row.loss) +
           "," + io::format_double(row.recon) + "," +
           io::format_double(row.kl) + "\n";
  }
  io::write_text_file(path, out);
}

void write_m2_trace(const std::vector<train::EpochStat>& trace,
                    const std::string& path) {
  std::string out = "epoch,loss,private_part,public_part\n";
  for (const auto& row : trace) {
    out += std::to_string(row.epoch) + "," + io::format_double(row.loss) +
           "," + io::format_double(row.recon) + "," +
           io::format_double(row.kl) + "\n";
  }
  io::write_text_file(path, out);
}

constexpr const char* kAccountingHeader =
    "epsilon_rdp,epsilon_gdp,mu,regret,sigma,q,steps,delta\n";

std::string accounting_row(const privacy::AccountingReport& r, double sigma,
                           double q, long steps, double delta) {
  return io::format_double(r.epsilon_rdp) + "," +
         io::format_double(r.epsilon_gdp) + "," + io::format_double(r.mu) +
         "," + io::format_double(r.regret) + "," + io::format_double(sigma) +
         "," + io::format_double(q) + "," + std::to_string(steps) + "," +
         io::format_double(delta) + "\n";
}

constexpr const char* kEvalHeader =
    "order,seed,epsilon,cycle_index,cycle_tag,mode,ajs,ajs_bins,"
    "balanced_accuracy,mae,n_real,count_low,count_mid,count_high,"
    "classifier_metrics_omitted\n";

std::string eval_row_csv(const RunConfig&, int order_idx, uint64_t seed,
                         double eps, int t, const eval::EvalReport& rep) {
  const char* mode = rep.mode == eval::EvalMode::kReconstruction
                         ? "reconstruction"
                         : "generation";
  int n_real = 0;
  for (int c : rep.class_counts) n_real += c;
  return std::to_string(order_idx) + "," + std::to_string(seed) + "," +
         epsilon_label(eps) + "," + std::to_string(t) + "," + rep.cycle + "," +
         mode + "," + io::format_double(rep.ajs) + "," +
         std::to_string(rep.ajs_bins) + "," +
         io::format_double(rep.balanced_accuracy) + "," +
         io::format_double(rep.mae) + "," + std::to_string(n_real) + "," +
         std::to_string(rep.class_counts[0]) + "," +
         std::to_string(rep.class_counts[1]) + "," +
         std::to_string(rep.class_counts[2]) + "," +
         (rep.classifier_metrics_omitted ? "1" : "0") + "\n";
}

struct CycleEval {
  std::string eval_csv;
  data::LabelledDataset synthetic;
  privacy::PrivacySpec privacy;
};

// shared by cmd_cycle and cmd_evaluate so re-evaluation reproduces the same
// rows from the same derived seeds
CycleEval evaluate_checkpoints(const RunConfig& cfg, int order_idx,
                               uint64_t seed, double eps, int t,
                               const models::M1Model& m1,
                               const models::M2Model& m2,
                               const data::LabelledDataset& cohort) {
  const int cohort_idx = cfg.cycle_orders[static_cast<size_t>(order_idx)]
                                         [static_cast<size_t>(t)];
  std::vector<data::LabelledDataset> heldout_data;
  for (size_t i = 0; i < cfg.cohorts.size(); ++i)
    if (static_cast<int>(i) != cohort_idx)
      heldout_data.push_back(data::load_dataset(cfg.cohorts[i].path));
  std::vector<const data::LabelledDataset*> heldout;
  heldout.reserve(heldout_data.size());
  for (const auto& d : heldout_data) heldout.push_back(&d);

  const std::string tag = cfg.cohorts[static_cast<size_t>(cohort_idx)].tag;
  Rng synth_rng(derive_seed(seed, "synth|" + tag + "|e" + epsilon_label(eps) +
                                      "|t" + std::to_string(t)));
  CycleEval out;
  out.synthetic = eval::make_synthetic(cohort, m1, m2,
                                       eval::EvalMode::kPriorGeneration,
                                       synth_rng);
  const auto rep_gen =
      eval::score_synthetic(cohort, out.synthetic, m1, m2,
                            eval::EvalMode::kPriorGeneration, heldout,
                            cfg.eval_bins);
  Rng unused(0);
  const auto rep_recon =
      eval::evaluate_cycle(cohort, m1, m2, eval::EvalMode::kReconstruction,
                           heldout, cfg.eval_bins, unused);
  out.eval_csv = kEvalHeader;
  out.eval_csv += eval_row_csv(cfg, order_idx, seed, eps, t, rep_recon);
  out.eval_csv += eval_row_csv(cfg, order_idx, seed, eps, t, rep_gen);
  return out;
}

json train_to_json(const train::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"rho1", t.rho1},
          {"rho2", t.rho2},
          {"eps_stable", t.eps_stable},
          {"epochs", t.epochs},
          {"batch_public", t.batch_public},
          {"batch_private", t.batch_private},
          {"anneal_cycles", t.anneal_cycles}};
}

std::string run_dir_checked(const RunConfig& cfg, int order_idx,
                            uint64_t seed, double eps) {
  if (order_idx < 0 || order_idx >= static_cast<int>(cfg.cycle_orders.size()))
    throw config_error("run: order index out of range");
  bool known_eps = false;
  for (double e : cfg.epsilons)
    known_eps |= (e == eps) || (std::isinf(e) && std::isinf(eps));
  if (!known_eps)
    throw config_error("run: epsilon " + epsilon_label(eps) +
                       " is not in the config's epsilons list");
  const std::string rdir = cfg.run_dir(order_idx, seed, eps);
  fs::create_directories(rdir);

  // effective run parameters echoed for provenance (idempotent content)
  json echo;
  echo["config_hash"] = cfg.config_hash;
  echo["code_version"] = kCodeVersion;
  echo["order_idx"] = order_idx;
  echo["order"] = cfg.cycle_orders[static_cast<size_t>(order_idx)];
  echo["seed"] = seed;
  echo["epsilon"] = epsilon_label(eps);
  echo["delta"] = cfg.delta;
  echo["clipping_norm"] = cfg.clipping_norm;
  echo["unlabelled_count"] = cfg.unlabelled_count;
  echo["replay_samples_each"] = cfg.replay_samples_each;
  echo["m2_train"] = train_to_json(cfg.m2_train);
  echo["replay_train"] = train_to_json(cfg.replay_train);
  io::write_text_file((fs::path(rdir) / "run_config.json").string(),
                      echo.dump(1));
  return rdir;
}

}  // namespace

// ---- stages -------------------------------------------------------------------

void cmd_simulate_public(const RunConfig& cfg, const StageOptions& opt) {
  fs::create_directories(cfg.out_dir);
  StageGuard guard("simulate-public",
                   (fs::path(manifest_dir(cfg.out_dir)) / "simulate_public.json")
                       .string(),
                   {cfg.pool_path()}, cfg, opt);
  if (guard.skip()) return;

  Rng rng(derive_seed(cfg.seed, "public-pool"));
  const auto pool = data::simulate_public(cfg.pool, rng);
  data::LabelledDataset ds;
  ds.cycle_tag = "public";
  ds.records.reserve(pool.sample.size());
  for (size_t i = 0; i < pool.sample.size(); ++i)
    ds.records.push_back(
        {"pub-" + std::to_string(i), pool.sample[i], data::kUnlabelled});
  data::save_dataset(ds, cfg.pool_path());
  guard.commit();
}

void cmd_pretrain(const RunConfig& cfg, const StageOptions& opt) {
  fs::create_directories(cfg.out_dir);
  const std::string trace_path =
      (fs::path(cfg.out_dir) / "m1_pretrain_trace.csv").string();
  StageGuard guard("pretrain",
                   (fs::path(manifest_dir(cfg.out_dir)) / "pretrain.json")
                       .string(),
                   {cfg.pretrained_m1_path(), trace_path}, cfg, opt);
  if (guard.skip()) return;

  const auto pool = data::load_dataset(cfg.pool_path());
  std::vector<data::EngagementSeries> xs;
  xs.reserve(pool.size());
  for (const auto& r : pool.records) xs.push_back(r.x);

  train::TrainConfig tcfg = cfg.m1_train;
  tcfg.seed = derive_seed(cfg.seed, "pretrain");
  auto res = train::train_m1(xs, cfg.m1, tcfg);
  models::save_m1(res.model, cfg.pretrained_m1_path());
  write_m1_trace(res.trace, trace_path);
  guard.commit();
}

void cmd_cycle(const RunConfig& cfg, int order_idx, uint64_t seed, double eps,
               int t, const StageOptions& opt) {
  if (order_idx < 0 ||
      order_idx >= static_cast<int>(cfg.cycle_orders.size()) || t < 0 ||
      t >= static_cast<int>(cfg.cohorts.size()))
    throw config_error("cycle: order/cycle index out of range");

  const std::string rdir = run_dir_checked(cfg, order_idx, seed, eps);
  const std::string m1_path = cfg.m1_for_cycle_path(order_idx, seed, eps, t);
  if (!fs::exists(m1_path))
    throw config_error("cycle: missing M1 checkpoint " + m1_path +
                       " (run pretrain / update-m1 first)");

  const std::string base = "cycle" + std::to_string(t);
  const std::string m2_path = (fs::path(rdir) / (base + "_m2.json")).string();
  const std::string synth_path =
      (fs::path(rdir) / (base + "_synthetic.csv")).string();
  const std::string trace_path =
      (fs::path(rdir) / (base + "_m2_trace.csv")).string();
  const std::string acct_path =
      (fs::path(rdir) / (base + "_accounting.csv")).string();
  const std::string eval_path =
      (fs::path(rdir) / (base + "_eval.csv")).string();
  StageGuard guard(
      base, (fs::path(manifest_dir(rdir)) / (base + ".json")).string(),
      {m2_path, synth_path, trace_path, acct_path, eval_path}, cfg, opt);
  if (guard.skip()) return;

  const int cohort_idx =
      cfg.cycle_orders[static_cast<size_t>(order_idx)][static_cast<size_t>(t)];
  auto cohort =
      data::load_dataset(cfg.cohorts[static_cast<size_t>(cohort_idx)].path);
  cohort.cycle_tag = cfg.cohorts[static_cast<size_t>(cohort_idx)].tag;
  const auto m1 = models::load_m1(m1_path);

  privacy::PrivacySpec pspec;
  pspec.epsilon_target = eps;
  pspec.delta = cfg.delta;
  pspec.clipping_norm = cfg.clipping_norm;

  train::TrainConfig tcfg = cfg.m2_train;
  tcfg.seed = derive_seed(
      seed, "m2|" + cohort.cycle_tag + "|e" + epsilon_label(eps) + "|t" +
                std::to_string(t));
  auto res = train::train_m2_spssl(cohort, m1, cfg.m2, tcfg, pspec,
                                   cfg.unlabelled_count);

  models::save_m2(res.model, m2_path);
  write_m2_trace(res.trace, trace_path);
  std::string acct = kAccountingHeader;
  if (res.non_private) {
    privacy::AccountingReport inf_rep;
    inf_rep.epsilon_rdp = inf_rep.epsilon_gdp =
        std::numeric_limits<double>::infinity();
    acct += accounting_row(inf_rep, 0.0, res.q, res.steps, cfg.delta);
  } else {
    acct += accounting_row(res.accounting, res.sigma, res.q, res.steps,
                           cfg.delta);
  }
  io::write_text_file(acct_path, acct);

  auto ev = evaluate_checkpoints(cfg, order_idx, seed, eps, t, m1, res.model,
                                 cohort);
  data::save_dataset(ev.synthetic, synth_path);
  io::write_text_file(eval_path, ev.eval_csv);
  guard.commit();
}

void cmd_update_m1(const RunConfig& cfg, int order_idx, uint64_t seed,
                   double eps, int t, const StageOptions& opt) {
  const std::string rdir = run_dir_checked(cfg, order_idx, seed, eps);
  const std::string m1_cur_path =
      cfg.m1_for_cycle_path(order_idx, seed, eps, t);
  const std::string m2_path =
      (fs::path(rdir) / ("cycle" + std::to_string(t) + "_m2.json")).string();
  std::vector<std::string> missing;
  for (const auto& p :
       {m1_cur_path, cfg.pretrained_m1_path(), m2_path})
    if (!fs::exists(p)) missing.push_back(p);
  if (!missing.empty()) {
    std::string msg = "update-m1: missing prerequisite checkpoints:";
    for (const auto& p : missing) msg += " " + p;
    throw config_error(msg);
  }

  const std::string out_path =
      cfg.m1_for_cycle_path(order_idx, seed, eps, t + 1);
  const std::string trace_path =
      (fs::path(rdir) / ("m1_update" + std::to_string(t) + "_trace.csv"))
          .string();
  StageGuard guard("update-m1-" + std::to_string(t),
                   (fs::path(manifest_dir(rdir)) /
                    ("update_m1_" + std::to_string(t) + ".json"))
                       .string(),
                   {out_path, trace_path}, cfg, opt);
  if (guard.skip()) return;

  // post-processing only: this stage never reads private cohort files
  const auto m1_current = models::load_m1(m1_cur_path);
  const auto m1_pretrained = models::load_m1(cfg.pretrained_m1_path());
  const auto m2 = models::load_m2(m2_path);

  train::ReplayConfig rcfg;
  rcfg.samples_each = cfg.replay_samples_each;
  rcfg.train = cfg.replay_train;
  rcfg.train.seed = derive_seed(
      seed, "replay|e" + epsilon_label(eps) + "|t" + std::to_string(t));
  auto res = train::replay_update_m1(m1_current, m1_pretrained, m2, rcfg);
  models::save_m1(res.model, out_path);
  write_m1_trace(res.trace, trace_path);
  guard.commit();
}

void cmd_evaluate(const RunConfig& cfg, int order_idx, uint64_t seed,
                  double eps, int t, const StageOptions& opt) {
  const std::string rdir = run_dir_checked(cfg, order_idx, seed, eps);
  const std::string base = "cycle" + std::to_string(t);
  const std::string m1_path = cfg.m1_for_cycle_path(order_idx, seed, eps, t);
  const std::string m2_path = (fs::path(rdir) / (base + "_m2.json")).string();
  if (!fs::exists(m1_path) || !fs::exists(m2_path))
    throw config_error("evaluate: missing checkpoints for " + base);

  const std::string eval_path =
      (fs::path(rdir) / (base + "_eval.csv")).string();
  StageGuard guard("evaluate-" + std::to_string(t),
                   (fs::path(manifest_dir(rdir)) /
                    ("evaluate_" + std::to_string(t) + ".json"))
                       .string(),
                   {eval_path}, cfg, opt);
  if (guard.skip()) return;

  const int cohort_idx =
      cfg.cycle_orders[static_cast<size_t>(order_idx)][static_cast<size_t>(t)];
  auto cohort =
      data::load_dataset(cfg.cohorts[static_cast<size_t>(cohort_idx)].path);
  cohort.cycle_tag = cfg.cohorts[static_cast<size_t>(cohort_idx)].tag;
  const auto m1 = models::load_m1(m1_path);
  const auto m2 = models::load_m2(m2_path);
  auto ev = evaluate_checkpoints(cfg, order_idx, seed, eps, t, m1, m2, cohort);
  io::write_text_file(eval_path, ev.eval_csv);
  guard.commit();
}

void cmd_account(const RunConfig& cfg, const StageOptions& opt) {
  fs::create_directories(cfg.out_dir);
  const std::string path =
      (fs::path(cfg.out_dir) / "accounting.csv").string();
  StageGuard guard("account",
                   (fs::path(manifest_dir(cfg.out_dir)) / "account.json")
                       .string(),
                   {path}, cfg, opt);
  if (guard.skip()) return;
  if (!(cfg.account_q > 0 && cfg.account_q <= 1) || cfg.account_steps < 1)
    throw config_error(
        "account: set config account.q and account.steps (the subcommand "
        "never reads cohort files)");

  std::string out = kAccountingHeader;
  for (double eps : cfg.epsilons) {
    if (std::isinf(eps)) continue;  // the non-DP baseline has no budget
    const double sigma = privacy::calibrate_noise(eps, cfg.delta,
                                                  cfg.account_q,
                                                  cfg.account_steps);
    privacy::MechanismSpec mech{sigma, cfg.account_q, cfg.account_steps};
    out += accounting_row(privacy::account(mech, cfg.delta), sigma,
                          cfg.account_q, cfg.account_steps, cfg.delta);
  }
  io::write_text_file(path, out);
  guard.commit();
}

void cmd_report(const RunConfig& cfg) {
  const auto rows = collect_eval_rows(cfg.out_dir);
  if (rows.empty())
    throw config_error("report: no eval rows found under " + cfg.out_dir);
  const auto agg = aggregate_report(rows);
  std::string out = "metric,cycle_index,epsilon,n,mean,ci_low,ci_high,degenerate\n";
  for (const auto& r : agg) {
    out += r.metric + "," + std::to_string(r.cycle_index) + "," +
           epsilon_label(r.epsilon) + "," + std::to_string(r.n) + "," +
           io::format_double(r.mean) + "," + io::format_double(r.ci_low) +
           "," + io::format_double(r.ci_high) + "," +
           (r.degenerate ? "1" : "0") + "\n";
  }
  io::write_text_file((fs::path(cfg.out_dir) / "report.csv").string(), out);
}

void run_full(const RunConfig& cfg, const StageOptions& opt) {
  cmd_simulate_public(cfg, opt);
  cmd_pretrain(cfg, opt);
  const int cycles = static_cast<int>(cfg.cohorts.size());
  for (int o = 0; o < static_cast<int>(cfg.cycle_orders.size()); ++o)
    for (uint64_t s : cfg.seeds)
      for (double eps : cfg.epsilons)
        for (int t = 0; t < cycles; ++t) {
          cmd_cycle(cfg, o, s, eps, t, opt);
          if (t + 1 < cycles) cmd_update_m1(cfg, o, s, eps, t, opt);
        }
  cmd_report(cfg);
}

// ---- report ------------------------------------------------------------------

std::vector<EvalRow> collect_eval_rows(const std::string& out_dir) {
  std::vector<std::string> files;
  const fs::path runs = fs::path(out_dir) / "runs";
  if (fs::exists(runs))
    for (const auto& entry : fs::recursive_directory_iterator(runs)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.starts_with("cycle") &&
          name.ends_with("_eval.csv"))
        files.push_back(entry.path().string());
    }
  std::sort(files.begin(), files.end());

  std::vector<EvalRow> rows;
  for (const auto& f : files) {
    const auto csv = io::parse_csv(io::read_text_file(f));
    for (size_t i = 1; i < csv.size(); ++i) {
      const auto& r = csv[i];
      if (r.size() != 15)
        throw config_error(f + ": malformed eval row " + std::to_string(i));
      EvalRow row;
      row.order_idx = std::stoi(r[0]);
      row.seed = std::stoull(r[1]);
      row.epsilon = r[2] == "inf" ? std::numeric_limits<double>::infinity()
                                  : std::stod(r[2]);
      row.cycle_index = std::stoi(r[3]);
      row.cycle_tag = r[4];
      row.mode = r[5];
      row.ajs = std::stod(r[6]);
      row.ajs_bins = std::stoi(r[7]);
      row.balanced_accuracy = std::stod(r[8]);
      row.mae = std::stod(r[9]);
      row.n_real = std::stoi(r[10]);
      row.count_low = std::stoi(r[11]);
      row.count_mid = std::stoi(r[12]);
      row.count_high = std::stoi(r[13]);
      row.classifier_metrics_omitted = r[14] == "1";
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<ReportRow> aggregate_report(const std::vector<EvalRow>& rows) {
  struct Key {
    std::string metric;
    int cycle;
    double eps;
    bool operator<(const Key& o) const {
      if (metric != o.metric) return metric < o.metric;
      if (cycle != o.cycle) return cycle < o.cycle;
      return eps < o.eps;
    }
  };
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : rows) {
    if (r.mode == "reconstruction") {
      groups[{"ajs_reconstruction", r.cycle_index, r.epsilon}].push_back(r.ajs);
      if (!r.classifier_metrics_omitted) {
        groups[{"balanced_accuracy", r.cycle_index, r.epsilon}].push_back(
            r.balanced_accuracy);
        groups[{"mae", r.cycle_index, r.epsilon}].push_back(r.mae);
      }
    } else {
      groups[{"ajs_generation", r.cycle_index, r.epsilon}].push_back(r.ajs);
    }
  }
  std::vector<ReportRow> out;
  for (const auto& [key, vals] : groups) {
    const auto ci = stats::mean_ci95(vals);
    ReportRow row;
    row.metric = key.metric;
    row.cycle_index = key.cycle;
    row.epsilon = key.eps;
    row.n = ci.n;
    row.mean = ci.mean;
    row.ci_low = ci.ci_low;
    row.ci_high = ci.ci_high;
    row.degenerate = ci.degenerate;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace caps::cli
