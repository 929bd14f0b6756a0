#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "duple/app.hpp"
#include "duple/checkpoint.hpp"
#include "support/raw_corpus.hpp"
#include "support/tempdir.hpp"

using namespace duple;
using duple::testing::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "duple");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Raw files plus an ingested bundle under dir/bundle.
struct Workspace {
  TempDir dir;
  testing::RawFiles raw;
  std::string bundle;

  Workspace() {
    raw = testing::write_movielens(dir);
    bundle = (dir / "bundle").string();
    const Run r = ingest({});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }

  Run ingest(std::vector<std::string> extra) const {
    std::vector<std::string> args{"ingest",   "--ratings", raw.ratings.string(),
                                  "--items",  raw.movies.string(), "--k-core", "5",
                                  "--n-neg",  "10",        "--out", bundle};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }

  /// Small-model defaults; a flag in `extra` replaces its default.
  Run train(const std::string& out, std::vector<std::string> extra = {}) const {
    const std::vector<std::pair<std::string, std::string>> defaults{
        {"--dim", "8"},         {"--raw-dim", "8"}, {"--rank", "2"}, {"--batch-size", "16"},
        {"--eval-every", "5"}, {"--steps", "10"},  {"--lr", "1e-2"}};
    std::vector<std::string> args{"train", "--bundle", bundle, "--out", out};
    for (const auto& [flag, value] : defaults) {
      if (std::find(extra.begin(), extra.end(), flag) == extra.end()) {
        args.push_back(flag);
        args.push_back(value);
      }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }
};

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"train", "--steps", "many"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
  const Run r = cli({"train", "--out", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--bundle") != std::string::npos);
}

TEST_CASE("missing ratings file exits 2 naming the path") {
  TempDir dir;
  const auto movies = dir.write("movies.csv", "movieId,title,genres\n1,A (1990),Drama\n");
  const Run r = cli({"ingest", "--ratings", (dir / "absent_ratings.csv").string(), "--items",
                     movies.string(), "--out", (dir / "b").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("absent_ratings.csv") != std::string::npos);
}

TEST_CASE("ingest writes a bundle and refuses to overwrite it") {
  Workspace ws;
  for (const char* f : {"interactions.csv", "users.txt", "items.tsv", "vocabulary.txt",
                        "item_attributes.csv", "split.json", "meta.json"}) {
    CHECK(std::filesystem::exists(ws.dir / "bundle" / f));
  }
  const auto meta = nlohmann::json::parse(slurp(ws.dir / "bundle" / "meta.json"));
  CHECK(meta.contains("density"));

  const Run again = ws.ingest({});
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(ws.ingest({"--force"}).code == 0);
}

TEST_CASE("invalid settings exit 1") {
  Workspace ws;
  CHECK(ws.ingest({"--force", "--rating-threshold", "7"}).code == 1);
  CHECK(ws.train((ws.dir / "t").string(), {"--variant", "dense"}).code == 1);
  CHECK(ws.train((ws.dir / "t").string(), {"--rank", "8"}).code == 1);
  CHECK(ws.train((ws.dir / "t").string(), {"--lambda", "-0.5"}).code == 1);
}

TEST_CASE("train with zero steps stores the initialization") {
  Workspace ws;
  const auto out = ws.dir / "init";
  REQUIRE(ws.train(out.string(), {"--steps", "0", "--seed", "9"}).code == 0);
  const Checkpoint ck = load_checkpoint(out);
  ModelConfig m = ck.params.config();
  CHECK(ck.params.values() ==
        ModelParams::random(m, 9, {.table_std = 0.1, .head_std = 0.1}).values());
  CHECK(ck.info.steps == 0);
}

TEST_CASE("training is byte-reproducible and writes its artifacts") {
  Workspace ws;
  const auto a = ws.dir / "a", b = ws.dir / "b";
  REQUIRE(ws.train(a.string(), {"--variant", "diag"}).code == 0);
  REQUIRE(ws.train(b.string(), {"--variant", "diag"}).code == 0);
  CHECK(slurp(a / "params.bin") == slurp(b / "params.bin"));
  CHECK(slurp(a / "curve.csv") == slurp(b / "curve.csv"));
  CHECK(slurp(a / "curve.csv").rfind("step,loss,val_mrr,val_hr10\n", 0) == 0);
  CHECK(std::filesystem::exists(a / "train_log.jsonl"));
  CHECK(std::filesystem::exists(a / "config.json"));
  CHECK(load_checkpoint(a).params.variant() == Variant::diag);

  const auto c = ws.dir / "c";
  REQUIRE(ws.train(c.string(), {"--variant", "diag", "--seed", "43"}).code == 0);
  CHECK(slurp(a / "params.bin") != slurp(c / "params.bin"));
}

TEST_CASE("config file with flag overrides") {
  Workspace ws;
  const auto cfg = ws.dir.write("run.json", R"({"variant": "iden", "steps": 3, "lambda": 0.2})");
  const auto out = ws.dir / "cfg";
  REQUIRE(ws.train(out.string(), {"--config", cfg.string(), "--lambda", "0.7"}).code == 0);
  const Checkpoint ck = load_checkpoint(out);
  CHECK(ck.params.variant() == Variant::iden);
  CHECK(ck.params.lambda() == 0.7);

  const auto bad = ws.dir.write("bad.json", R"({"no_such_key": 1})");
  CHECK(ws.train(out.string(), {"--config", bad.string()}).code == 1);
  CHECK(ws.train(out.string(), {"--config", (ws.dir / "absent.json").string()}).code == 2);
}

TEST_CASE("grid sweep writes one cell per setting and a summary") {
  Workspace ws;
  const auto out = ws.dir / "grid";
  const Run r = ws.train(out.string(),
                         {"--grid", "--lambda-grid", "0,1", "--rank-grid", "1,2", "--steps", "3"});
  REQUIRE(r.code == 0);
  const std::string summary = slurp(out / "summary.csv");
  CHECK(summary.rfind("lambda,rank,best_step,val_mrr,val_hr10,cell\n", 0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 5);
  for (const char* cell : {"lambda_0.00_rank_1", "lambda_1.00_rank_1", "lambda_0.00_rank_2",
                           "lambda_1.00_rank_2"}) {
    CHECK(std::filesystem::exists(out / cell / "params.bin"));
  }
}

TEST_CASE("evaluate writes metrics for both phases") {
  Workspace ws;
  const auto run = ws.dir / "run";
  REQUIRE(ws.train(run.string()).code == 0);
  const std::string ck = run.string();
  for (const char* phase : {"test", "validation"}) {
    const auto out = ws.dir / (std::string("m_") + phase);
    const Run r = cli({"evaluate", "--bundle", ws.bundle, "--checkpoint", ck, "--phase", phase,
                       "--out", out.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("AUC") != std::string::npos);
    const std::string csv = slurp(out / "metrics.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.find(std::string(phase) + ",ndcg@10,") != std::string::npos);
  }
  CHECK(cli({"evaluate", "--bundle", ws.bundle, "--checkpoint", ck, "--phase", "train"}).code ==
        1);
}

TEST_CASE("corrupt checkpoint exits 3 with details") {
  Workspace ws;
  const auto run = ws.dir / "run";
  REQUIRE(ws.train(run.string(), {"--steps", "0"}).code == 0);
  const auto manifest = run / "manifest.json";
  auto j = nlohmann::json::parse(slurp(manifest));
  j["tensors"][3]["rows"] = 99;
  std::ofstream(manifest) << j.dump();
  const Run r = cli({"evaluate", "--bundle", ws.bundle, "--checkpoint",
                     run.string()});
  CHECK(r.code == 3);
  INFO(r.err);
  CHECK(r.err.find("mismatch") != std::string::npos);

  CHECK(cli({"evaluate", "--bundle", ws.bundle, "--checkpoint", (ws.dir / "none").string()})
            .code == 2);
}

TEST_CASE("explain writes profile, explanation and heatmap") {
  Workspace ws;
  const auto run = ws.dir / "run";
  REQUIRE(ws.train(run.string()).code == 0);
  const std::string ck = run.string();
  const auto out = ws.dir / "ex";

  Run r = cli({"explain", "--bundle", ws.bundle, "--checkpoint", ck, "--user", "3", "--out",
               out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto prof = nlohmann::json::parse(slurp(out / "profile.json"));
  CHECK(prof["attributes"].size() == 10);
  CHECK_FALSE(std::filesystem::exists(out / "explanation.txt"));

  r = cli({"explain", "--bundle", ws.bundle, "--checkpoint", ck, "--user", "3", "--item", "105",
           "--r", "5", "--heatmap-random", "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string text = slurp(out / "explanation.txt");
  CHECK((text.find("you may like item") == 0 || text.find("no attribute-level") != std::string::npos));
  const std::string heat = slurp(out / "heatmap.csv");
  CHECK(std::count(heat.begin(), heat.end(), '\n') == 21);

  r = cli({"explain", "--bundle", ws.bundle, "--checkpoint", ck, "--user", "0", "--by-index",
           "--heatmap", "drama", "comedy", "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(out / "heatmap.csv").rfind("attribute,drama,comedy\n", 0) == 0);

  CHECK(cli({"explain", "--bundle", ws.bundle, "--checkpoint", ck, "--user", "nobody", "--out",
             out.string()})
            .code == 1);
  CHECK(cli({"explain", "--bundle", ws.bundle, "--checkpoint", ck, "--user", "3", "--heatmap",
             "notaword", "--out", out.string()})
            .code == 1);
}

TEST_CASE("numerical blow-up exits 4 and keeps artifacts") {
  Workspace ws;
  const auto out = ws.dir / "nan";
  const Run r = ws.train(out.string(), {"--table-std", "1e200", "--head-std", "1e200"});
  CHECK(r.code == 4);
  CHECK(std::filesystem::exists(out / "params.bin"));
  CHECK(std::filesystem::exists(out / "curve.csv"));
}
