#include "wig/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "wig/corpus.hpp"
#include "wig/embeddings.hpp"
#include "wig/index.hpp"
#include "wig/eval.hpp"
#include "wig/prune.hpp"
#include "wig/wdl.hpp"

namespace wig {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kArtifactVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) throw ValidationError("config: " + key + " = '" + value + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ValidationError("config: " + key + " = '" + value + "' is not a boolean");
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field size_field(const char* name, const char* help, M RunConfig::*member) {
  return {{name, help},
          [=](RunConfig& c, const std::string& v) { c.*member = parse_number<std::size_t>(name, v); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(const char* name, const char* help, double RunConfig::*member) {
  return {{name, help},
          [=](RunConfig& c, const std::string& v) { c.*member = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return format_double(c.*member); }};
}

Field bool_field(const char* name, const char* help, bool RunConfig::*member) {
  return {{name, help},
          [=](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [=](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(const char* name, const char* help, std::string RunConfig::*member,
                   std::initializer_list<const char*> allowed = {}) {
  std::vector<const char*> options(allowed);
  return {{name, help},
          [=](RunConfig& c, const std::string& v) {
            if (!options.empty()) {
              bool ok = false;
              for (const char* a : options) ok = ok || v == a;
              if (!ok) {
                std::string list;
                for (const char* a : options) list += std::string(list.empty() ? "" : "|") + a;
                throw ValidationError(std::string("config: ") + name + " must be one of " + list + ", got '" + v + "'");
              }
            }
            c.*member = v;
          },
          [=](const RunConfig& c) { return c.*member; }};
}

Field path_field(const char* name, const char* help, fs::path RunConfig::*member) {
  return {{name, help},
          [=](RunConfig& c, const std::string& v) { c.*member = v; },
          [=](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(path_field("workdir", "directory holding every artifact", &RunConfig::workdir));
    f.push_back(path_field("input", "raw corpus file (ingest)", &RunConfig::input));
    f.push_back(path_field("embeddings", "pretrained word2vec text file; empty trains skip-gram", &RunConfig::embeddings));
    f.push_back(path_field("reference", "reference series CSV period,value (eval)", &RunConfig::reference));
    f.push_back(path_field("stopwords", "stopword list, one per line", &RunConfig::stopwords));
    f.push_back(string_field("format", "raw corpus format", &RunConfig::format, {"csv", "jsonl"}));
    f.push_back(string_field("date_field", "record field holding the date", &RunConfig::date_field));
    f.push_back(string_field("text_field", "record field holding the text", &RunConfig::text_field));
    f.push_back(string_field("id_field", "record field holding the document id (default: record number)", &RunConfig::id_field));
    f.push_back(bool_field("lowercase", "lowercase tokens", &RunConfig::lowercase));
    f.push_back(bool_field("strip_punct", "strip non-alphanumeric characters", &RunConfig::strip_punct));
    f.push_back(size_field("min_token_length", "drop shorter tokens", &RunConfig::min_token_length));
    f.push_back(size_field("min_frequency", "drop tokens rarer than this in the corpus", &RunConfig::min_frequency));
    f.push_back(size_field("emsize", "embedding depth D", &RunConfig::emsize));
    f.push_back(size_field("window", "skip-gram window", &RunConfig::window));
    f.push_back(size_field("negatives", "skip-gram negative samples", &RunConfig::negatives));
    f.push_back(size_field("sgns_epochs", "skip-gram epochs", &RunConfig::sgns_epochs));
    f.push_back(double_field("sgns_lr", "skip-gram learning rate", &RunConfig::sgns_lr));
    f.push_back(string_field("metric", "ground cost", &RunConfig::metric, {"sqeuclidean", "cosine"}));
    f.push_back(size_field("clusters", "k-means cluster count k", &RunConfig::clusters));
    f.push_back(size_field("prune_topk", "maximum base vocabulary B_max", &RunConfig::prune_topk));
    f.push_back(double_field("l1_reg", "Lasso penalty lambda", &RunConfig::l1_reg));
    f.push_back(double_field("lasso_tol", "Lasso KKT tolerance", &RunConfig::lasso_tol));
    f.push_back(size_field("lasso_max_sweeps", "Lasso sweep budget", &RunConfig::lasso_max_sweeps));
    f.push_back(size_field("num_topics", "topic count K", &RunConfig::num_topics));
    f.push_back(size_field("batch_size", "documents per batch", &RunConfig::batch_size));
    f.push_back(double_field("reg", "Sinkhorn regularization epsilon", &RunConfig::reg));
    f.push_back(size_field("iterations", "Sinkhorn iterations L", &RunConfig::iterations));
    f.push_back(string_field("log_domain", "log-domain Sinkhorn", &RunConfig::log_domain, {"auto", "true", "false"}));
    f.push_back(double_field("lr", "Adam learning rate", &RunConfig::lr));
    f.push_back(double_field("wdecay", "L2 weight decay", &RunConfig::wdecay));
    f.push_back(size_field("epochs", "maximum epochs", &RunConfig::epochs));
    f.push_back(size_field("patience", "early-stop patience in epochs, 0 disables", &RunConfig::patience));
    f.push_back(string_field("loss", "reconstruction loss", &RunConfig::loss, {"kl", "squared"}));
    f.push_back(double_field("train_frac", "training share of documents", &RunConfig::train_frac));
    f.push_back(double_field("eval_frac", "evaluation share of documents", &RunConfig::eval_frac));
    f.push_back(size_field("eval_fit_steps", "weight-fitting steps on eval documents per epoch", &RunConfig::eval_fit_steps));
    f.push_back(size_field("infer_steps", "weight-fitting steps for held-out documents", &RunConfig::infer_steps));
    f.push_back(double_field("infer_lr", "learning rate for held-out weight fitting", &RunConfig::infer_lr));
    f.push_back(string_field("aggregation", "monthly aggregation", &RunConfig::aggregation, {"sum", "mean"}));
    f.push_back({{"seed", "root seed"},
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back(size_field("threads", "worker threads; 1 is bit-exact", &RunConfig::threads));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key.name == key) return f;
  throw ValidationError("config: unknown key '" + key + "'");
}

// ---------------------------------------------------------------------------
// manifests

struct Output {
  fs::path path;
  std::string format;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class StageRun {
public:
  StageRun(const RunConfig& cfg, std::string stage) : cfg_(cfg), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(cfg.workdir);
  }

  /// Checks an artifact produced by an earlier stage against its manifest.
  void consume(const fs::path& path, const std::string& producer, const std::string& format) {
    if (!fs::exists(path)) throw IoError("missing upstream artifact " + path.string() + " (run " + producer + " first)");
    const fs::path mpath = artifact::manifest(cfg_, producer);
    if (!fs::exists(mpath)) throw IoError("missing manifest " + mpath.string() + " for " + path.string());
    json m;
    try {
      m = json::parse(read_text(mpath));
    } catch (const json::exception& e) {
      throw ValidationError("unreadable manifest " + mpath.string() + ": " + e.what());
    }
    const std::string name = path.filename().string();
    if (!m.is_object() || !m.contains("outputs") || !m["outputs"].is_array())
      throw ValidationError("malformed manifest " + mpath.string());
    std::optional<json> entry;
    for (const auto& o : m["outputs"])
      if (o.is_object() && o.value("path", "") == name) entry = o;
    if (!entry) throw ValidationError(mpath.string() + " does not describe " + name);
    std::string found_format;
    int found_version = 0;
    std::string recorded_hash;
    try {
      found_format = entry->value("format", "");
      found_version = entry->value("version", 0);
      recorded_hash = entry->value("hash", "");
    } catch (const json::exception& e) {
      throw ValidationError("malformed manifest entry for " + name + ": " + e.what());
    }
    if (found_format != format || found_version != kArtifactVersion)
      throw ValidationError(name + ": expected " + format + " v" + std::to_string(kArtifactVersion) + ", manifest says " +
                            found_format + " v" + std::to_string(found_version));
    const std::string actual = hash_file(path);
    const bool match = recorded_hash == actual;
    if (!match) warn(name + " changed since " + producer + " wrote it (hash mismatch)");
    inputs_.push_back({{"path", name}, {"producer", producer}, {"hash", actual}, {"hash_matches_manifest", match}});
  }

  /// Records an input that does not come from this pipeline.
  void external(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing input " + path.string());
    inputs_.push_back({{"path", path.string()}, {"producer", "external"}, {"hash", hash_file(path)}});
  }

  void produce(const fs::path& path, const std::string& format) { outputs_.push_back({path, format}); }

  void warn(const std::string& w) {
    std::clog << "[wig] warning: " << w << "\n";
    warnings_.push_back(w);
  }

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

  json& details() { return details_; }

  StageOutcome finish() {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m;
    m["stage"] = stage_;
    m["config"] = json::parse(config_json(cfg_));
    m["seed"] = cfg_.seed;
    m["substreams"] = seeds_;
    m["inputs"] = inputs_;
    json outs = json::array();
    for (const auto& o : outputs_)
      outs.push_back({{"path", o.path.filename().string()}, {"format", o.format}, {"version", kArtifactVersion}, {"hash", hash_file(o.path)}});
    m["outputs"] = outs;
    m["warnings"] = warnings_;
    if (!details_.is_null()) m["details"] = details_;
    m["wall_seconds"] = wall;
    const fs::path path = artifact::manifest(cfg_, stage_);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << m.dump(2) << "\n";
    return {path, warnings_};
  }

private:
  const RunConfig& cfg_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
  json inputs_ = json::array();
  std::vector<Output> outputs_;
  std::vector<std::string> warnings_;
  std::map<std::string, std::uint64_t> seeds_;
  json details_;
};

IngestOptions ingest_options(const RunConfig& cfg) {
  IngestOptions o;
  o.format = cfg.format == "csv" ? InputFormat::csv : InputFormat::jsonl;
  o.date_field = cfg.date_field;
  o.text_field = cfg.text_field;
  if (!cfg.id_field.empty()) o.id_field = cfg.id_field;
  o.preprocess.lowercase = cfg.lowercase;
  o.preprocess.strip_punct = cfg.strip_punct;
  o.preprocess.min_token_length = cfg.min_token_length;
  o.preprocess.min_frequency = cfg.min_frequency;
  if (!cfg.stopwords.empty()) o.preprocess.stopword_path = cfg.stopwords;
  return o;
}

CostMetric cost_metric(const RunConfig& cfg) {
  return cfg.metric == "cosine" ? CostMetric::cosine : CostMetric::squared_euclidean;
}

SinkhornConfig sinkhorn_config(const RunConfig& cfg) {
  SinkhornConfig s;
  s.epsilon = cfg.reg;
  s.iterations = cfg.iterations;
  if (cfg.log_domain != "auto") s.log_domain = cfg.log_domain == "true";
  return s;
}

const char* kCorpusFormat = "wig-corpus-jsonl";
const char* kVocabFormat = "wig-vocab-tsv";
const char* kEmbeddingFormat = "word2vec-text";
const char* kCostFormat = "wig-cost-wigc";
const char* kPruneFormat = "wig-prune-map";
const char* kModelFormat = "wig-model-wigm";
const char* kReportFormat = "wig-train-report-json";
const char* kIndexFormat = "wig-index-csv";
const char* kEvalFormat = "wig-eval-json";

std::string train_stage(Flavor f) { return "train-" + flavor_name(f); }
std::string index_stage(Flavor f) { return "index-" + flavor_name(f); }

}  // namespace

// ---------------------------------------------------------------------------
// config

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) { field(key).set(cfg, value); }

std::string get_setting(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    field(key);  // rejects unknown keys
    if (out.contains(key)) throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return parse_config_text(read_text(path));
}

RunConfig resolve_config(const std::map<std::string, std::string>& file, const std::map<std::string, std::string>& flags) {
  RunConfig cfg;
  for (const auto& [k, v] : file) apply_setting(cfg, k, v);
  for (const auto& [k, v] : flags) apply_setting(cfg, k, v);
  return cfg;
}

void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("config: " + msg);
  };
  check(c.reg > 0.0, "reg (epsilon) must be > 0");
  check(c.iterations >= 1, "iterations must be >= 1");
  check(c.num_topics >= 1, "num_topics must be >= 1");
  check(c.batch_size >= 1, "batch_size must be >= 1");
  check(c.epochs >= 1, "epochs must be >= 1");
  check(c.lr > 0.0, "lr must be > 0");
  check(c.wdecay >= 0.0, "wdecay must be >= 0");
  check(c.l1_reg >= 0.0, "l1_reg must be >= 0");
  check(c.lasso_tol > 0.0, "lasso_tol must be > 0");
  check(c.clusters >= 2, "clusters must be >= 2");
  check(c.emsize >= 2, "emsize must be >= 2");
  check(c.window >= 1, "window must be >= 1");
  check(c.sgns_epochs >= 1, "sgns_epochs must be >= 1");
  check(c.sgns_lr > 0.0, "sgns_lr must be > 0");
  check(c.train_frac > 0.0 && c.eval_frac >= 0.0 && c.train_frac + c.eval_frac <= 1.0,
        "train_frac and eval_frac must be a valid partition of the documents");
  check(c.infer_lr > 0.0, "infer_lr must be > 0");
  check(c.threads >= 1, "threads must be >= 1");
  check(!c.workdir.empty(), "workdir must be set");
}

std::string config_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();  // sorted keys
  for (const auto& f : fields()) j[f.key.name] = f.get(cfg);
  return j.dump();
}

Flavor parse_flavor(const std::string& name) {
  if (name == "wig") return Flavor::wig;
  if (name == "pwig") return Flavor::pwig;
  throw ValidationError("flavor must be wig or pwig, got '" + name + "'");
}

std::string flavor_name(Flavor f) { return f == Flavor::wig ? "wig" : "pwig"; }

namespace artifact {
fs::path corpus(const RunConfig& c) { return c.workdir / "corpus.jsonl"; }
fs::path vocab(const RunConfig& c) { return c.workdir / "vocab.tsv"; }
fs::path embeddings(const RunConfig& c) { return c.workdir / "embeddings.txt"; }
fs::path cost(const RunConfig& c) { return c.workdir / "cost.wigc"; }
fs::path prune_map(const RunConfig& c) { return c.workdir / "prune.map"; }
fs::path base_cost(const RunConfig& c) { return c.workdir / "cost-base.wigc"; }
fs::path model(const RunConfig& c, Flavor f) { return c.workdir / ("model-" + flavor_name(f) + ".wigm"); }
fs::path train_report(const RunConfig& c, Flavor f) { return c.workdir / ("train-" + flavor_name(f) + ".json"); }
fs::path index(const RunConfig& c, Flavor f) { return c.workdir / ("index-" + flavor_name(f) + ".csv"); }
fs::path eval(const RunConfig& c, Flavor f) { return c.workdir / ("eval-" + flavor_name(f) + ".json"); }
fs::path manifest(const RunConfig& c, const std::string& stage) { return c.workdir / (stage + ".manifest.json"); }
}  // namespace artifact

std::uint64_t substream_seed(std::uint64_t root, const std::string& name) { return Rng::substream(root, name).next_u64(); }

std::string hash_file(const fs::path& path) { return hex64(fnv1a(read_text(path))); }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const IoError*>(&e)) return 2;
  return 1;
}

// ---------------------------------------------------------------------------
// stages

StageOutcome cmd_ingest(const RunConfig& cfg) {
  validate(cfg);
  if (cfg.input.empty()) throw ValidationError("ingest: 'input' is not set");
  StageRun run(cfg, "ingest");
  run.external(cfg.input);
  if (!cfg.stopwords.empty()) run.external(cfg.stopwords);
  const Corpus corpus = ingest(cfg.input, ingest_options(cfg));
  write_corpus_jsonl(corpus, artifact::corpus(cfg));
  corpus.vocab.save(artifact::vocab(cfg));
  run.produce(artifact::corpus(cfg), kCorpusFormat);
  run.produce(artifact::vocab(cfg), kVocabFormat);
  run.details() = {{"records", corpus.stats.records},
                   {"documents", corpus.documents.size()},
                   {"vocabulary", corpus.vocab.size()},
                   {"skipped_bad_date", corpus.stats.bad_date},
                   {"skipped_empty_text", corpus.stats.empty_text},
                   {"skipped_emptied_by_filter", corpus.stats.emptied_by_filter}};
  return run.finish();
}

StageOutcome cmd_embed(const RunConfig& cfg) {
  validate(cfg);
  StageRun run(cfg, "embed");
  run.consume(artifact::corpus(cfg), "ingest", kCorpusFormat);
  run.consume(artifact::vocab(cfg), "ingest", kVocabFormat);
  const Vocabulary vocab = Vocabulary::load(artifact::vocab(cfg));
  EmbeddingMatrix emb;
  if (!cfg.embeddings.empty()) {
    run.external(cfg.embeddings);
    LoadedEmbeddings loaded = load_embeddings(cfg.embeddings, vocab);
    if (loaded.missing > 0) run.warn(std::to_string(loaded.missing) + " vocabulary tokens missing from embeddings, mean vector used");
    emb = std::move(loaded.matrix);
    run.details() = {{"source", "pretrained"}, {"missing", loaded.missing}, {"depth", emb.depth()}};
  } else {
    const auto docs = read_documents(artifact::corpus(cfg), vocab);
    SgnsOptions o;
    o.depth = cfg.emsize;
    o.window = cfg.window;
    o.negatives = cfg.negatives;
    o.epochs = cfg.sgns_epochs;
    o.learning_rate = cfg.sgns_lr;
    o.seed = substream_seed(cfg.seed, "sgns");
    run.seed("sgns", o.seed);
    emb = train_sgns(docs, vocab.size(), o);
    run.details() = {{"source", "sgns"}, {"depth", emb.depth()}};
  }
  save_embeddings(emb, vocab, artifact::embeddings(cfg));
  build_cost_matrix(emb, cost_metric(cfg)).save(artifact::cost(cfg));
  run.produce(artifact::embeddings(cfg), kEmbeddingFormat);
  run.produce(artifact::cost(cfg), kCostFormat);
  return run.finish();
}

StageOutcome cmd_prune(const RunConfig& cfg) {
  validate(cfg);
  StageRun run(cfg, "prune");
  run.consume(artifact::vocab(cfg), "ingest", kVocabFormat);
  run.consume(artifact::embeddings(cfg), "embed", kEmbeddingFormat);
  const Vocabulary vocab = Vocabulary::load(artifact::vocab(cfg));
  const EmbeddingMatrix emb = load_embeddings(artifact::embeddings(cfg), vocab).matrix;
  const std::size_t n = vocab.size();
  if (cfg.prune_topk == 0 || cfg.prune_topk > n)
    throw ValidationError("prune: prune_topk must satisfy 0 < prune_topk <= N = " + std::to_string(n));
  if (cfg.clusters > n) throw ValidationError("prune: clusters exceeds vocabulary size");
  const std::uint64_t kseed = substream_seed(cfg.seed, "kmeans");
  run.seed("kmeans", kseed);
  const ClusterAssignment assign = kmeans(emb, cfg.clusters, kseed);
  PruneOptions o;
  o.max_vocab = cfg.prune_topk;
  o.lambda = cfg.l1_reg;
  o.tol = cfg.lasso_tol;
  o.max_sweeps = cfg.lasso_max_sweeps;
  o.threads = cfg.threads;
  PruneMap map = build_prune_map(emb, assign, vocab, o);
  map.seed = kseed;
  map.save(artifact::prune_map(cfg));
  build_cost_matrix(emb, map.base_ids, cost_metric(cfg)).save(artifact::base_cost(cfg));
  run.produce(artifact::prune_map(cfg), kPruneFormat);
  run.produce(artifact::base_cost(cfg), kCostFormat);
  std::size_t fallbacks = 0;
  for (const auto& f : map.fallback) fallbacks += f.has_value();
  run.details() = {{"base_size", map.base_size()},
                   {"vocabulary", n},
                   {"kmeans_objective", assign.objective()},
                   {"kmeans_iterations", assign.iterations},
                   {"nearest_base_fallbacks", fallbacks}};
  return run.finish();
}

StageOutcome cmd_train(const RunConfig& cfg, Flavor flavor) {
  validate(cfg);
  StageRun run(cfg, train_stage(flavor));
  run.consume(artifact::corpus(cfg), "ingest", kCorpusFormat);
  run.consume(artifact::vocab(cfg), "ingest", kVocabFormat);
  const Vocabulary vocab = Vocabulary::load(artifact::vocab(cfg));
  const auto documents = read_documents(artifact::corpus(cfg), vocab);

  std::vector<Vector> docs;
  docs.reserve(documents.size());
  CostMatrix cost;
  if (flavor == Flavor::wig) {
    run.consume(artifact::cost(cfg), "embed", kCostFormat);
    cost = CostMatrix::load(artifact::cost(cfg));
    for (const auto& d : documents) docs.push_back(to_distribution(d, vocab.size()).dense());
  } else {
    run.consume(artifact::prune_map(cfg), "prune", kPruneFormat);
    run.consume(artifact::base_cost(cfg), "prune", kCostFormat);
    const PruneMap map = PruneMap::load(artifact::prune_map(cfg));
    if (map.n_tokens != vocab.size()) throw ValidationError("train: prune map was built for a different vocabulary");
    cost = CostMatrix::load(artifact::base_cost(cfg));
    for (const auto& d : documents) docs.push_back(remap_distribution(to_distribution(d, vocab.size()), map).dense());
  }
  if (cost.dim() != static_cast<std::size_t>(docs.front().size()))
    throw ValidationError("train: cost matrix dimension does not match the document simplex");

  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.weight_decay = cfg.wdecay;
  tc.sinkhorn = sinkhorn_config(cfg);
  tc.loss = cfg.loss == "squared" ? LossKind::squared : LossKind::kl;
  tc.patience = cfg.patience;
  tc.eval_fit_steps = cfg.eval_fit_steps;
  tc.infer = {cfg.infer_steps, cfg.infer_lr};
  tc.seed = substream_seed(cfg.seed, "shuffle");
  tc.threads = cfg.threads;
  const std::uint64_t init_seed = substream_seed(cfg.seed, "init");
  const std::uint64_t split_seed = substream_seed(cfg.seed, "split");
  run.seed("init", init_seed);
  run.seed("shuffle", tc.seed);
  run.seed("split", split_seed);

  DictionaryModel model = init_model(cost.dim(), docs.size(), cfg.num_topics, init_seed);
  model.epsilon = cfg.reg;
  const DataSplit split = make_split(docs.size(), cfg.train_frac, cfg.eval_frac, split_seed);

  TrainResult result;
  try {
    result = train(std::move(model), docs, cost, tc, split);
  } catch (const TrainingAborted& e) {
    e.last_good_model.save(artifact::model(cfg, flavor));
    run.produce(artifact::model(cfg, flavor), kModelFormat);
    run.warn(std::string("training aborted, last good model saved: ") + e.what());
    run.details() = {{"aborted", true}};
    run.finish();
    throw;
  }
  result.model.save(artifact::model(cfg, flavor));

  json report;
  report["flavor"] = flavor_name(flavor);
  report["documents"] = {{"train", split.train.size()}, {"eval", split.eval.size()}, {"test", split.test.size()}};
  json epochs = json::array();
  for (const auto& e : result.report.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval_loss", e.eval_loss}});
  report["epochs"] = epochs;
  report["best_epoch"] = result.report.best_epoch;
  report["early_stopped"] = result.report.early_stopped;
  report["test_loss"] = result.report.test_loss;
  {
    std::ofstream out(artifact::train_report(cfg, flavor));
    if (!out) throw IoError("cannot write " + artifact::train_report(cfg, flavor).string());
    out << report.dump(2) << "\n";
  }
  run.produce(artifact::model(cfg, flavor), kModelFormat);
  run.produce(artifact::train_report(cfg, flavor), kReportFormat);
  run.details() = {{"aborted", false},
                   {"epochs_run", result.report.epochs.size()},
                   {"best_epoch", result.report.best_epoch},
                   {"test_loss", result.report.test_loss},
                   {"train_wall_seconds", result.report.wall_seconds}};
  return run.finish();
}

StageOutcome cmd_index(const RunConfig& cfg, Flavor flavor) {
  validate(cfg);
  StageRun run(cfg, index_stage(flavor));
  run.consume(artifact::corpus(cfg), "ingest", kCorpusFormat);
  run.consume(artifact::vocab(cfg), "ingest", kVocabFormat);
  run.consume(artifact::model(cfg, flavor), train_stage(flavor), kModelFormat);
  const Vocabulary vocab = Vocabulary::load(artifact::vocab(cfg));
  const auto documents = read_documents(artifact::corpus(cfg), vocab);
  const DictionaryModel model = DictionaryModel::load(artifact::model(cfg, flavor));
  if (model.documents() != documents.size())
    throw ValidationError("index: model covers " + std::to_string(model.documents()) + " documents, corpus has " +
                          std::to_string(documents.size()));

  const TopicScores ts = svd_reduce(model.topics());
  const Vector scores = score_documents(ts, model.weights());
  std::vector<double> s(scores.data(), scores.data() + scores.size());
  std::vector<Date> dates;
  dates.reserve(documents.size());
  for (const auto& d : documents) dates.push_back(d.date);
  const IndexSeries series = aggregate(s, dates, cfg.aggregation == "mean" ? Aggregation::mean : Aggregation::sum);
  series.save_csv(artifact::index(cfg, flavor));
  run.produce(artifact::index(cfg, flavor), kIndexFormat);

  std::size_t empty = 0;
  for (const auto& p : series.points) empty += p.empty;
  if (empty > 0) run.warn(std::to_string(empty) + " months without documents");
  if (!series.points.empty() && !series.points.front().standardized) run.warn("standardized index undefined");
  run.details() = {{"sigma", ts.sigma},
                   {"topic_scores", std::vector<double>(ts.scores.data(), ts.scores.data() + ts.scores.size())},
                   {"sign_flipped", ts.sign_flipped},
                   {"jacobi_fallback", ts.used_jacobi_fallback},
                   {"months", series.points.size()},
                   {"empty_months", empty}};
  return run.finish();
}

StageOutcome cmd_eval(const RunConfig& cfg, Flavor flavor) {
  validate(cfg);
  if (cfg.reference.empty()) throw ValidationError("eval: 'reference' is not set");
  StageRun run(cfg, "eval-" + flavor_name(flavor));
  run.consume(artifact::index(cfg, flavor), index_stage(flavor), kIndexFormat);
  run.external(cfg.reference);
  const IndexSeries series = IndexSeries::load_csv(artifact::index(cfg, flavor));
  const ReferenceSeries ref = ReferenceSeries::load_csv(cfg.reference, cfg.reference.stem().string());
  const AlignedPairs pairs = align(series, ref);

  json result;
  result["flavor"] = flavor_name(flavor);
  result["reference"] = ref.name;
  result["overlap"] = pairs.periods.size();
  result["first"] = pairs.periods.front().key();
  result["last"] = pairs.periods.back().key();
  result["pearson"] = pearson(pairs.index, pairs.reference);
  result["spearman"] = spearman(pairs.index, pairs.reference);
  {
    std::ofstream out(artifact::eval(cfg, flavor));
    if (!out) throw IoError("cannot write " + artifact::eval(cfg, flavor).string());
    out << result.dump(2) << "\n";
  }
  run.produce(artifact::eval(cfg, flavor), kEvalFormat);
  run.details() = result;
  return run.finish();
}

}  // namespace wig
