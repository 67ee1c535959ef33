#include <doctest.h>

#include <json.hpp>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "mini_pipeline.hpp"
#include "scratch.hpp"
#include "wig/pipeline.hpp"

using namespace wig;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "wig");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = wig::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) { return json::parse(scratch::read(p)); }

void write_json(const std::filesystem::path& p, const json& j) { scratch::write(p, j.dump(2)); }

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config: parsing, precedence flags > file > defaults") {
  const auto kv = parse_config_text("# comment\nlr = 0.01\n\n  reg=0.2  # trailing\nworkdir = some dir\n");
  CHECK(kv.at("lr") == "0.01");
  CHECK(kv.at("reg") == "0.2");
  CHECK(kv.at("workdir") == "some dir");
  CHECK_THROWS_AS(parse_config_text("lr = 1\nlr = 2\n"), ValidationError);
  CHECK_THROWS_AS(parse_config_text("no equals sign\n"), ValidationError);

  const RunConfig defaults = resolve_config({}, {});
  CHECK(defaults.lr == 0.001);
  CHECK(defaults.reg == 0.1);
  const RunConfig file_only = resolve_config({{"lr", "0.01"}, {"epochs", "7"}}, {});
  CHECK(file_only.lr == 0.01);
  CHECK(file_only.epochs == 7);
  const RunConfig both = resolve_config({{"lr", "0.01"}, {"epochs", "7"}}, {{"lr", "0.5"}});
  CHECK(both.lr == 0.5);
  CHECK(both.epochs == 7);

  CHECK_THROWS_AS(resolve_config({{"learning_rate", "1"}}, {}), ValidationError);
  CHECK_THROWS_AS(resolve_config({}, {{"epochs", "many"}}), ValidationError);
  CHECK_THROWS_AS(resolve_config({}, {{"loss", "hinge"}}), ValidationError);

  for (const auto& key : config_keys()) {
    RunConfig c;
    apply_setting(c, key.name, get_setting(defaults, key.name));
    CHECK(get_setting(c, key.name) == get_setting(defaults, key.name));
  }
  CHECK(get_setting(resolve_config({}, {{"reg", "0.05"}}), "reg") == "0.05");

  const auto dir = scratch::dir("pipeline_cfg");
  scratch::write(dir / "c.cfg", "seed = 11\nthreads = 2\n");
  CHECK(read_config_file(dir / "c.cfg").at("seed") == "11");
  CHECK_THROWS_AS(read_config_file(dir / "nope.cfg"), IoError);
}

TEST_CASE("config: range validation") {
  RunConfig c;
  CHECK_NOTHROW(validate(c));
  c.reg = 0.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = RunConfig{};
  c.num_topics = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = RunConfig{};
  c.threads = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = RunConfig{};
  c.train_frac = 0.95;
  c.eval_frac = 0.1;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("config: published WIG and pWIG settings accepted") {
  const RunConfig w = resolve_config({}, {{"emsize", "50"}, {"batch_size", "32"}, {"num_topics", "4"}, {"lr", "0.001"}, {"reg", "0.1"}});
  CHECK_NOTHROW(validate(w));
  const RunConfig p = resolve_config({}, {{"batch_size", "64"}, {"reg", "0.08"}});
  CHECK_NOTHROW(validate(p));
  CHECK(run_cli({"train", "--flavor", "wig", "--emsize", "50", "--batch_size", "32", "--num_topics", "4", "--lr", "0.001",
             "--reg", "0.1", "--manifest"})
            .code == 0);
  CHECK(run_cli({"train", "--flavor", "pwig", "--batch_size", "64", "--reg", "0.08", "--manifest"}).code == 0);
}

TEST_CASE("named seed substreams are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (const char* name : {"kmeans", "init", "shuffle", "sgns", "split"}) {
    CHECK(substream_seed(3, name) == substream_seed(3, name));
    seen.insert(substream_seed(3, name));
  }
  CHECK(seen.size() == 5);
  CHECK(substream_seed(3, "init") != substream_seed(4, "init"));
}

TEST_CASE("cli: --manifest echoes the resolved config with flag precedence") {
  const auto dir = scratch::dir("pipeline_cli_manifest");
  scratch::write(dir / "r.cfg", "lr = 0.01\nepochs = 9\n");
  const auto r = run_cli({"train", "--flavor", "pwig", "-c", (dir / "r.cfg").string(), "--lr", "0.2", "--manifest"});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["stage"] == "train");
  CHECK(j["flavor"] == "pwig");
  CHECK(j["config"]["lr"] == "0.2");
  CHECK(j["config"]["epochs"] == "9");
  CHECK(j["config"]["reg"] == "0.1");
  CHECK(j["config"].size() == config_keys().size());
  CHECK_FALSE(std::filesystem::exists("wig-run"));
}

TEST_CASE("cli: exit codes 0, 2 and 3") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"train", "--flavor", "lda", "--manifest"}).code == 2);
  CHECK(run_cli({"train", "--reg", "-1", "--manifest"}).code == 2);
  CHECK(run_cli({"train", "--no_such_key", "1"}).code == 2);
  CHECK(run_cli({"ingest", "--help"}).code == 0);

  const auto dir = scratch::dir("pipeline_cli_codes");
  RunConfig cfg = mini::setup(dir);
  const std::string work = cfg.workdir.string();
  CHECK(run_cli({"train", "--workdir", work}).code == 2);  // missing upstream artifact
  CHECK(run_cli({"ingest", "--workdir", work, "--input", (dir / "missing.jsonl").string()}).code == 2);

  const auto ok = run_cli({"ingest", "--workdir", work, "--input", cfg.input.string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("ingest.manifest.json") != std::string::npos);
  CHECK(run_cli({"embed", "--workdir", work, "--emsize", "8", "--sgns_epochs", "2", "--seed", "7"}).code == 0);
  CHECK(run_cli({"prune", "--workdir", work}).code == 2);  // prune_topk unset
  CHECK(run_cli({"prune", "--workdir", work, "--prune_topk", "10000"}).code == 2);

  const auto num = run_cli({"train", "--workdir", work, "--reg", "1e-6", "--log_domain", "false", "--epochs", "1"});
  CHECK(num.code == 3);
  CHECK_FALSE(num.err.empty());
}

TEST_CASE("pipeline: manifests record config, seeds, hashes and wall time") {
  const auto dir = scratch::dir("pipeline_manifest");
  const RunConfig cfg = mini::setup(dir);
  mini::run_all(cfg);
  for (const char* stage : {"ingest", "embed", "prune", "train-wig", "index-wig", "eval-wig", "train-pwig"}) {
    const auto path = artifact::manifest(cfg, stage);
    REQUIRE(std::filesystem::exists(path));
    const auto m = read_json(path);
    CHECK(m["stage"] == stage);
    CHECK(m["config"]["seed"] == "7");
    CHECK(m["wall_seconds"].get<double>() >= 0.0);
    for (const auto& o : m["outputs"]) {
      CHECK(o["hash"] == hash_file(cfg.workdir / o["path"].get<std::string>()));
      CHECK(o["version"] == 1);
    }
  }
  const auto embed = read_json(artifact::manifest(cfg, "embed"));
  CHECK(embed["substreams"]["sgns"] == substream_seed(7, "sgns"));
  const auto train = read_json(artifact::manifest(cfg, "train-wig"));
  CHECK(train["substreams"]["init"] == substream_seed(7, "init"));
  CHECK(train["substreams"]["shuffle"] == substream_seed(7, "shuffle"));
  CHECK(read_json(artifact::manifest(cfg, "prune"))["substreams"]["kmeans"] == substream_seed(7, "kmeans"));
  const auto ingest = read_json(artifact::manifest(cfg, "ingest"));
  CHECK(ingest["inputs"][0]["hash"] == hash_file(cfg.input));

  const auto eval = read_json(artifact::eval(cfg, Flavor::wig));
  CHECK(std::abs(eval["pearson"].get<double>()) <= 1.0);
}

TEST_CASE("pipeline: full run is byte-identical across runs, index is repeatable") {
  const auto a_dir = scratch::dir("pipeline_det_a");
  const auto b_dir = scratch::dir("pipeline_det_b");
  RunConfig a = mini::setup(a_dir);
  RunConfig b = mini::setup(b_dir);
  b.input = a.input;
  b.reference = a.reference;
  mini::run_all(a);
  mini::run_all(b);
  const auto fa = mini::artifacts(a.workdir);
  const auto fb = mini::artifacts(b.workdir);
  REQUIRE(fa.size() == fb.size());
  CHECK(fa.size() >= 14);
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(fa[i].first == fb[i].first);
    CHECK_MESSAGE(fa[i].second == fb[i].second, fa[i].first);
  }

  const std::string before = scratch::read(artifact::index(a, Flavor::wig));
  cmd_index(a, Flavor::wig);
  CHECK(scratch::read(artifact::index(a, Flavor::wig)) == before);
}

TEST_CASE("pipeline: prune_topk = N reproduces the unpruned pipeline") {
  const auto dir = scratch::dir("pipeline_identity");
  RunConfig cfg = mini::setup(dir);
  cmd_ingest(cfg);
  const auto n = read_json(artifact::manifest(cfg, "ingest"))["details"]["vocabulary"].get<std::size_t>();
  cfg.prune_topk = n;
  mini::run_all(cfg);
  CHECK(scratch::read(artifact::cost(cfg)) == scratch::read(artifact::base_cost(cfg)));
  CHECK(scratch::read(artifact::model(cfg, Flavor::wig)) == scratch::read(artifact::model(cfg, Flavor::pwig)));
  CHECK(scratch::read(artifact::index(cfg, Flavor::wig)) == scratch::read(artifact::index(cfg, Flavor::pwig)));
}

TEST_CASE("pipeline: version mismatch rejected, hash mismatch warns") {
  const auto dir = scratch::dir("pipeline_integrity");
  const RunConfig cfg = mini::setup(dir);
  cmd_ingest(cfg);
  cmd_embed(cfg);

  auto manifest = read_json(artifact::manifest(cfg, "embed"));
  const json original = manifest;
  for (auto& o : manifest["outputs"]) o["hash"] = "0000000000000000";
  write_json(artifact::manifest(cfg, "embed"), manifest);
  const auto outcome = cmd_train(cfg, Flavor::wig);
  REQUIRE(outcome.warnings.size() == 1);
  CHECK(outcome.warnings[0].find("hash mismatch") != std::string::npos);
  const auto train = read_json(outcome.manifest);
  bool flagged = false;
  for (const auto& in : train["inputs"])
    if (in.contains("hash_matches_manifest") && !in["hash_matches_manifest"].get<bool>()) flagged = true;
  CHECK(flagged);

  manifest = original;
  for (auto& o : manifest["outputs"]) o["version"] = 2;
  write_json(artifact::manifest(cfg, "embed"), manifest);
  CHECK_THROWS_AS(cmd_train(cfg, Flavor::wig), ValidationError);

  manifest = original;
  for (auto& o : manifest["outputs"]) o["format"] = "something-else";
  write_json(artifact::manifest(cfg, "embed"), manifest);
  CHECK_THROWS_AS(cmd_train(cfg, Flavor::wig), ValidationError);

  write_json(artifact::manifest(cfg, "embed"), original);
  std::string cost = scratch::read(artifact::cost(cfg));
  cost[1] = 'X';
  scratch::write(artifact::cost(cfg), cost);
  CHECK_THROWS(cmd_train(cfg, Flavor::wig));  // binary magic checked on load
}

TEST_CASE("pipeline: stage ordering errors") {
  const auto dir = scratch::dir("pipeline_missing");
  const RunConfig cfg = mini::setup(dir);
  CHECK_THROWS_AS(cmd_embed(cfg), IoError);
  cmd_ingest(cfg);
  cmd_embed(cfg);
  CHECK_THROWS_AS(cmd_train(cfg, Flavor::pwig), IoError);  // prune not run
  CHECK_THROWS_AS(cmd_index(cfg, Flavor::wig), IoError);
  RunConfig noinput = cfg;
  noinput.input.clear();
  CHECK_THROWS_AS(cmd_ingest(noinput), ValidationError);
}

}
