#include "duple/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "duple/checkpoint.hpp"
#include "duple/error.hpp"
#include "duple/evaluation.hpp"
#include "duple/explain.hpp"

#ifndef DUPLE_DEFAULT_STOPWORDS
#define DUPLE_DEFAULT_STOPWORDS ""
#endif

namespace duple {

namespace {

using nlohmann::json;

template <class T>
std::function<void(RunConfig&, const json&)> setter(T RunConfig::*field) {
  return [field](RunConfig& c, const json& v) { c.*field = v.get<T>(); };
}

std::function<void(RunConfig&, const json&)> path_setter(std::filesystem::path RunConfig::*field) {
  return [field](RunConfig& c, const json& v) { c.*field = v.get<std::string>(); };
}

const std::map<std::string, std::function<void(RunConfig&, const json&)>>& config_keys() {
  static const std::map<std::string, std::function<void(RunConfig&, const json&)>> keys = {
      {"format", setter(&RunConfig::format)},
      {"ratings", path_setter(&RunConfig::ratings)},
      {"items", path_setter(&RunConfig::items)},
      {"stopwords", path_setter(&RunConfig::stopwords)},
      {"rating_threshold", setter(&RunConfig::rating_threshold)},
      {"k_core", setter(&RunConfig::k_core)},
      {"min_doc_frac", setter(&RunConfig::min_doc_frac)},
      {"exclude_years", setter(&RunConfig::exclude_years)},
      {"skip_malformed", setter(&RunConfig::skip_malformed)},
      {"n_neg", setter(&RunConfig::n_neg)},
      {"force", setter(&RunConfig::force)},
      {"variant", setter(&RunConfig::variant)},
      {"raw_dim", setter(&RunConfig::raw_dim)},
      {"dim", setter(&RunConfig::dim)},
      {"rank", setter(&RunConfig::rank)},
      {"jitter", setter(&RunConfig::jitter)},
      {"lambda", setter(&RunConfig::lambda)},
      {"lr", setter(&RunConfig::lr)},
      {"batch_size", setter(&RunConfig::batch_size)},
      {"steps", setter(&RunConfig::steps)},
      {"eval_every", setter(&RunConfig::eval_every)},
      {"log_every", setter(&RunConfig::log_every)},
      {"clip_norm", setter(&RunConfig::clip_norm)},
      {"table_std", setter(&RunConfig::table_std)},
      {"head_std", setter(&RunConfig::head_std)},
      {"attr_proj_std", setter(&RunConfig::attr_proj_std)},
      {"grid", setter(&RunConfig::grid)},
      {"lambda_grid", setter(&RunConfig::lambda_grid)},
      {"rank_grid", setter(&RunConfig::rank_grid)},
      {"phase", setter(&RunConfig::phase)},
      {"k", setter(&RunConfig::k)},
      {"user", setter(&RunConfig::user)},
      {"item", setter(&RunConfig::item)},
      {"by_index", setter(&RunConfig::by_index)},
      {"r", setter(&RunConfig::r)},
      {"heatmap", setter(&RunConfig::heatmap)},
      {"heatmap_random", setter(&RunConfig::heatmap_random)},
      {"seed", setter(&RunConfig::seed)},
      {"bundle", path_setter(&RunConfig::bundle)},
      {"checkpoint", path_setter(&RunConfig::checkpoint)},
      {"out", path_setter(&RunConfig::out)},
  };
  return keys;
}

std::filesystem::path find_config_flag(int argc, const char* const* argv) {
  for (int k = 1; k < argc; ++k) {
    const std::string a = argv[k];
    if (a == "--config") {
      if (k + 1 >= argc) throw UsageError("--config needs a path");
      return argv[k + 1];
    }
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

std::string format_lambda(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void require(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) throw UsageError(std::string(flag) + " is required");
}

void write_effective_config(const std::filesystem::path& path, const RunConfig& c,
                            const ModelConfig& m) {
  json j{{"variant", std::string(variant_name(m.variant))},
         {"lambda", m.lambda},
         {"rank", m.shape.rank},
         {"dim", m.shape.dim},
         {"raw_dim", m.shape.raw_dim},
         {"jitter", m.jitter},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"eval_every", c.eval_every},
         {"clip_norm", c.clip_norm},
         {"table_std", c.table_std},
         {"head_std", c.head_std},
         {"attr_proj_std", c.attr_proj_std},
         {"seed", c.seed},
         {"bundle", c.bundle.string()}};
  std::ofstream(path) << j.dump(2) << "\n";
}

/// Trains one configuration into `dir`; throws NumericalError after saving
/// the partial artifacts when training aborts.
TrainResult train_into(const RunConfig& c, const ModelConfig& m, const Bundle& b,
                       const std::filesystem::path& dir, std::ostream& err) {
  std::filesystem::create_directories(dir);
  std::ofstream log(dir / "train_log.jsonl");
  const TrainResult res = train(m, train_config(c), b.split, b.catalog, &log);
  CheckpointInfo info;
  info.seed = c.seed;
  info.steps = c.steps;
  info.best_step = res.best_step;
  info.best_val_mrr = res.best_val_mrr;
  info.vocabulary_hash = vocabulary_hash(b.catalog.vocabulary);
  save_checkpoint(dir, res.params, info);
  write_curve(dir / "curve.csv", res.curve);
  write_effective_config(dir / "config.json", c, m);
  if (res.aborted) {
    err << "training aborted (" << res.abort_reason << "); partial checkpoint kept in "
        << dir.string() << "\n";
    throw NumericalError(res.abort_reason);
  }
  return res;
}

Index resolve_entity(const std::string& key, bool by_index, const std::vector<std::string>& ids,
                     const char* what) {
  if (key.empty()) throw UsageError(std::string("--") + what + " is required");
  if (by_index) {
    std::size_t used = 0;
    Index v = -1;
    try {
      v = std::stoll(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || v < 0 || v >= static_cast<Index>(ids.size())) {
      throw UsageError(std::string(what) + " index '" + key + "' out of range");
    }
    return v;
  }
  const auto it = std::find(ids.begin(), ids.end(), key);
  if (it == ids.end()) {
    throw UsageError(std::string(what) + " id '" + key + "' is not in the bundle");
  }
  return static_cast<Index>(it - ids.begin());
}

Checkpoint load_for_bundle(const RunConfig& c, const Bundle& b) {
  Checkpoint ck = load_checkpoint(c.checkpoint);
  check_matches_bundle(ck, b.split.n_users(), b.split.n_items(), b.catalog.vocabulary);
  return ck;
}

void cmd_ingest(const RunConfig& c, std::ostream& out) {
  require(c.out, "--out");
  if (std::filesystem::exists(c.out / "meta.json") && !c.force) {
    throw UsageError("bundle already exists in " + c.out.string() + " (use --force to overwrite)");
  }
  const IngestOptions o = ingest_options(c);
  const Bundle b = ingest(o);
  write_bundle(c.out, b, o, c.force);
  const auto& s = b.stats;
  out << "users " << s.users << ", items " << s.items << ", interactions " << s.interactions
      << ", attributes " << s.attributes << ", density " << s.density << "\n";
}

void cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require(c.bundle, "--bundle");
  require(c.out, "--out");
  const Bundle b = read_bundle(c.bundle);
  if (!c.grid) {
    const ModelConfig m = model_config(c, b);
    const TrainResult res = train_into(c, m, b, c.out, err);
    out << "best validation MRR " << res.best_val_mrr << " at step " << res.best_step << "\n";
    return;
  }

  std::vector<double> lambdas = c.lambda_grid;
  if (lambdas.empty()) {
    for (int k = 0; k <= 10; ++k) lambdas.push_back(k / 10.0);
  }
  std::vector<Index> ranks = c.rank_grid;
  if (ranks.empty()) ranks = {2, 4, 8, 16, 32};

  std::filesystem::create_directories(c.out);
  std::ofstream summary(c.out / "summary.csv");
  summary << "lambda,rank,best_step,val_mrr,val_hr10,cell\n";
  double best_mrr = -1.0;
  std::string best_cell;
  for (Index rank : ranks) {
    for (double lambda : lambdas) {
      RunConfig cell = c;
      cell.rank = rank;
      cell.lambda = lambda;
      const ModelConfig m = model_config(cell, b);
      const std::string name = "lambda_" + format_lambda(lambda) + "_rank_" + std::to_string(rank);
      const TrainResult res = train_into(cell, m, b, c.out / name, err);
      double hr = std::nan("");
      for (const auto& p : res.curve) {
        if (p.step == res.best_step) hr = p.val_hr10;
      }
      summary << format_lambda(lambda) << "," << rank << "," << res.best_step << ","
              << res.best_val_mrr << "," << hr << "," << name << "\n";
      summary.flush();
      if (res.best_val_mrr > best_mrr) {
        best_mrr = res.best_val_mrr;
        best_cell = name;
      }
      err << name << ": best validation MRR " << res.best_val_mrr << "\n";
    }
  }
  out << "best cell " << best_cell << " (validation MRR " << best_mrr << ")\n";
}

void cmd_evaluate(const RunConfig& c, std::ostream& out) {
  require(c.bundle, "--bundle");
  require(c.checkpoint, "--checkpoint");
  const Bundle b = read_bundle(c.bundle);
  const Checkpoint ck = load_for_bundle(c, b);
  const MetricsReport rep = evaluate(ck.params, b.split, parse_phase(c.phase), c.k);
  const auto dir = c.out.empty() ? c.checkpoint : c.out;
  write_metrics(dir, rep);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: AUC %.2f  MRR %.2f  HR@%lld %.2f  NDCG@%lld %.2f\n",
                c.phase.c_str(), rep.auc * 100, rep.mrr * 100, static_cast<long long>(c.k),
                rep.hr_at_k * 100, static_cast<long long>(c.k), rep.ndcg_at_k * 100);
  out << buf;
}

void cmd_explain(const RunConfig& c, std::ostream& out) {
  require(c.bundle, "--bundle");
  require(c.checkpoint, "--checkpoint");
  require(c.out, "--out");
  const Bundle b = read_bundle(c.bundle);
  const Checkpoint ck = load_for_bundle(c, b);
  const Index u = resolve_entity(c.user, c.by_index, b.split.train.user_ids(), "user");
  std::filesystem::create_directories(c.out);

  const AttributeProfile prof = preferred_profile(ck.params, u, c.r);
  write_profile(c.out / "profile.json", prof, b.catalog);
  out << "profile of user " << b.split.train.user_ids()[u] << ":";
  for (const auto& [a, v] : prof.entries) out << " " << b.catalog.vocabulary[a];
  out << "\n";

  if (!c.item.empty()) {
    const Index i = resolve_entity(c.item, c.by_index, b.split.train.item_ids(), "item");
    std::string name = b.item_titles.size() > static_cast<std::size_t>(i) ? b.item_titles[i] : "";
    if (name.empty()) name = b.split.train.item_ids()[i];
    const Explanation ex = explain_recommendation(ck.params, u, i, b.catalog, c.r, name);
    std::ofstream(c.out / "explanation.txt") << ex.text << "\n";
    out << ex.text << "\n";
  }

  std::vector<Index> attrs;
  if (!c.heatmap.empty()) {
    for (const auto& name : c.heatmap) {
      const Index a = b.catalog.find(name);
      if (a < 0) throw UsageError("attribute '" + name + "' is not in the vocabulary");
      attrs.push_back(a);
    }
  } else if (c.heatmap_random) {
    attrs = sample_attributes(b.catalog.n_attributes(), std::min<Index>(20, b.catalog.n_attributes()),
                              c.seed);
  }
  if (!attrs.empty()) {
    export_covariance_heatmap(ck.params, u, attrs, b.catalog, c.out / "heatmap.csv");
    out << "wrote " << (c.out / "heatmap.csv").string() << "\n";
  }
}

void add_shared(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--config", "flat JSON config; flags override its keys");
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory");
}

void add_model(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--variant", c.variant, "full, diag or iden")->capture_default_str();
  cmd->add_option("--dim", c.dim, "embedding dimension D")->capture_default_str();
  cmd->add_option("--raw-dim", c.raw_dim, "raw table width")->capture_default_str();
  cmd->add_option("--rank", c.rank, "covariance rank D'")->capture_default_str();
  cmd->add_option("--jitter", c.jitter, "covariance jitter")->capture_default_str();
  cmd->add_option("--lambda", c.lambda, "weight of the general term")->capture_default_str();
}

}  // namespace

void RunConfig::validate() const {
  parse_format(format);
  parse_variant(variant);
  parse_phase(phase);
  if (!(rating_threshold >= 1.0 && rating_threshold <= 5.0)) {
    throw UsageError("rating threshold must lie in [1,5]");
  }
  if (k_core < 1) throw UsageError("k-core must be >= 1");
  if (!(min_doc_frac > 0.0 && min_doc_frac <= 1.0)) {
    throw UsageError("min doc fraction must lie in (0,1]");
  }
  if (n_neg < 1) throw UsageError("n_neg must be >= 1");
  if (raw_dim < 1 || dim < 1) throw UsageError("dimensions must be positive");
  if (rank < 1 || rank >= dim) throw UsageError("rank must satisfy 1 <= rank < dim");
  if (!(jitter > 0.0)) throw UsageError("jitter must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must lie in [0,1]");
  for (double l : lambda_grid) {
    if (!(l >= 0.0 && l <= 1.0)) throw UsageError("lambda grid values must lie in [0,1]");
  }
  for (Index r : rank_grid) {
    if (r < 1 || r >= dim) throw UsageError("rank grid values must satisfy 1 <= rank < dim");
  }
  if (!(lr > 0.0)) throw UsageError("learning rate must be > 0");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (steps < 0) throw UsageError("steps must be >= 0");
  if (eval_every < 1) throw UsageError("eval-every must be >= 1");
  if (log_every < 0) throw UsageError("log-every must be >= 0");
  if (k < 1) throw UsageError("k must be >= 1");
  if (r < 0) throw UsageError("r must be >= 0");
}

void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  const auto& keys = config_keys();
  for (const auto& [key, value] : j.items()) {
    const auto it = keys.find(key);
    if (it == keys.end()) throw UsageError("unknown config key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const json::exception& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

IngestOptions ingest_options(const RunConfig& c) {
  IngestOptions o;
  o.format = parse_format(c.format);
  o.interactions = c.ratings;
  o.items = c.items;
  o.stopwords = c.stopwords.empty() ? std::filesystem::path(DUPLE_DEFAULT_STOPWORDS) : c.stopwords;
  o.malformed = c.skip_malformed ? MalformedPolicy::skip : MalformedPolicy::abort;
  o.rating_threshold = c.rating_threshold;
  o.k_core = c.k_core;
  o.attributes.min_doc_frac = c.min_doc_frac;
  o.attributes.exclude_years = c.exclude_years;
  o.split_seed = c.seed;
  o.candidate_seed = c.seed;
  o.n_neg = c.n_neg;
  return o;
}

ModelConfig model_config(const RunConfig& c, const Bundle& b) {
  ModelConfig m;
  m.shape.n_users = b.split.n_users();
  m.shape.n_items = b.split.n_items();
  m.shape.n_attributes = b.catalog.n_attributes();
  m.shape.raw_dim = c.raw_dim;
  m.shape.dim = c.dim;
  m.shape.rank = c.rank;
  m.variant = parse_variant(c.variant);
  m.lambda = c.lambda;
  m.jitter = c.jitter;
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.lr = c.lr;
  t.steps = c.steps;
  t.seed = c.seed;
  t.eval_every = c.eval_every;
  t.log_every = c.log_every;
  t.clip_norm = c.clip_norm;
  t.init.table_std = c.table_std;
  t.init.head_std = c.head_std;
  t.init.attr_proj_std = c.attr_proj_std;
  return t;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Gaussian preference recommender with attribute-level explanations"};
  app.require_subcommand(1);

  auto* ingest_cmd = app.add_subcommand("ingest", "preprocess raw files into a dataset bundle");
  add_shared(ingest_cmd, c);
  ingest_cmd->add_option("--format", c.format, "movielens or amazon")->capture_default_str();
  ingest_cmd->add_option("--ratings", c.ratings, "interaction file");
  ingest_cmd->add_option("--items", c.items, "item metadata file");
  ingest_cmd->add_option("--stopwords", c.stopwords, "stopword list");
  ingest_cmd->add_option("--rating-threshold", c.rating_threshold, "keep ratings above this")
      ->capture_default_str();
  ingest_cmd->add_option("--k-core", c.k_core, "minimum degree")->capture_default_str();
  ingest_cmd->add_option("--min-doc-frac", c.min_doc_frac, "attribute document fraction")
      ->capture_default_str();
  ingest_cmd->add_flag("--exclude-years", c.exclude_years, "drop year tokens");
  ingest_cmd->add_flag("--skip-malformed", c.skip_malformed, "skip unparsable records");
  ingest_cmd->add_option("--n-neg", c.n_neg, "negatives per candidate list")
      ->capture_default_str();
  ingest_cmd->add_flag("--force", c.force, "overwrite an existing bundle");

  auto* train_cmd = app.add_subcommand("train", "train a model on a bundle");
  add_shared(train_cmd, c);
  add_model(train_cmd, c);
  train_cmd->add_option("--bundle", c.bundle, "dataset bundle");
  train_cmd->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", c.batch_size, "triplets per step")->capture_default_str();
  train_cmd->add_option("--steps", c.steps, "optimizer steps")->capture_default_str();
  train_cmd->add_option("--eval-every", c.eval_every, "validation cadence")->capture_default_str();
  train_cmd->add_option("--log-every", c.log_every, "log cadence, 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--clip-norm", c.clip_norm, "global gradient norm cap, <= 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--table-std", c.table_std, "embedding table init std")
      ->capture_default_str();
  train_cmd->add_option("--head-std", c.head_std, "MLP and head init std")->capture_default_str();
  train_cmd->add_option("--attr-proj-std", c.attr_proj_std, "W_t init std, <= 0 for 1/sqrt(D)")
      ->capture_default_str();
  train_cmd->add_flag("--grid", c.grid, "sweep lambda and rank");
  train_cmd->add_option("--lambda-grid", c.lambda_grid, "lambda values for --grid")
      ->delimiter(',');
  train_cmd->add_option("--rank-grid", c.rank_grid, "rank values for --grid")->delimiter(',');

  auto* eval_cmd = app.add_subcommand("evaluate", "rank frozen candidates and report metrics");
  add_shared(eval_cmd, c);
  eval_cmd->add_option("--bundle", c.bundle, "dataset bundle");
  eval_cmd->add_option("--checkpoint", c.checkpoint, "checkpoint directory");
  eval_cmd->add_option("--phase", c.phase, "validation or test")->capture_default_str();
  eval_cmd->add_option("--k", c.k, "cutoff")->capture_default_str();

  auto* explain_cmd = app.add_subcommand("explain", "attribute profile and explanations");
  add_shared(explain_cmd, c);
  explain_cmd->add_option("--bundle", c.bundle, "dataset bundle");
  explain_cmd->add_option("--checkpoint", c.checkpoint, "checkpoint directory");
  explain_cmd->add_option("--user", c.user, "user id");
  explain_cmd->add_option("--item", c.item, "item id");
  explain_cmd->add_flag("--by-index", c.by_index, "--user / --item are dense indices");
  explain_cmd->add_option("--r", c.r, "profile length")->capture_default_str();
  explain_cmd->add_option("--heatmap", c.heatmap, "attribute names for heatmap.csv")
      ->delimiter(',');
  explain_cmd->add_flag("--heatmap-random", c.heatmap_random, "20 random attributes");

  try {
    const auto config_path = find_config_flag(argc, argv);
    if (!config_path.empty()) apply_config_file(c, config_path);
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : 1;
    }
    c.validate();
    if (*ingest_cmd) cmd_ingest(c, out);
    if (*train_cmd) cmd_train(c, out, err);
    if (*eval_cmd) cmd_evaluate(c, out);
    if (*explain_cmd) cmd_explain(c, out);
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return 2;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "input error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace duple
