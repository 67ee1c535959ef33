#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wig/common.hpp"

namespace wig {

/// Every tunable of a pipeline run. Keys in config files and flags use the
/// names listed by config_keys().
struct RunConfig {
  // paths
  std::filesystem::path workdir = "wig-run";
  std::filesystem::path input;
  std::filesystem::path embeddings;  // pretrained word2vec text; empty -> train SGNS
  std::filesystem::path reference;
  std::filesystem::path stopwords;

  // ingest
  std::string format = "jsonl";
  std::string date_field = "date";
  std::string text_field = "text";
  std::string id_field;
  bool lowercase = true;
  bool strip_punct = true;
  std::size_t min_token_length = 1;
  std::size_t min_frequency = 1;

  // embed
  std::size_t emsize = 50;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t sgns_epochs = 5;
  double sgns_lr = 0.025;
  std::string metric = "sqeuclidean";

  // prune
  std::size_t clusters = 10;
  std::size_t prune_topk = 0;  // 0 = unset
  double l1_reg = 0.01;
  double lasso_tol = 1e-9;
  std::size_t lasso_max_sweeps = 10000;

  // train
  std::size_t num_topics = 4;
  std::size_t batch_size = 32;
  double reg = 0.1;
  std::size_t iterations = 50;
  std::string log_domain = "auto";
  double lr = 0.001;
  double wdecay = 0.0;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::string loss = "kl";
  double train_frac = 0.6;
  double eval_frac = 0.1;
  std::size_t eval_fit_steps = 10;
  std::size_t infer_steps = 200;
  double infer_lr = 0.05;

  // index
  std::string aggregation = "sum";

  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key from its textual value; unknown keys and unparsable values
/// raise ValidationError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);

/// Flat "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Defaults, then the file entries, then the flag entries.
RunConfig resolve_config(const std::map<std::string, std::string>& file,
                         const std::map<std::string, std::string>& flags);

/// Range checks shared by all stages.
void validate(const RunConfig& cfg);

/// Resolved config as a JSON object of strings, keys sorted.
std::string config_json(const RunConfig& cfg);

enum class Flavor { wig, pwig };
Flavor parse_flavor(const std::string& name);
std::string flavor_name(Flavor f);

/// Artifact file names inside the work directory.
namespace artifact {
std::filesystem::path corpus(const RunConfig& cfg);
std::filesystem::path vocab(const RunConfig& cfg);
std::filesystem::path embeddings(const RunConfig& cfg);
std::filesystem::path cost(const RunConfig& cfg);
std::filesystem::path prune_map(const RunConfig& cfg);
std::filesystem::path base_cost(const RunConfig& cfg);
std::filesystem::path model(const RunConfig& cfg, Flavor f);
std::filesystem::path train_report(const RunConfig& cfg, Flavor f);
std::filesystem::path index(const RunConfig& cfg, Flavor f);
std::filesystem::path eval(const RunConfig& cfg, Flavor f);
std::filesystem::path manifest(const RunConfig& cfg, const std::string& stage);
}  // namespace artifact

/// Seed for a named substream of the root seed.
std::uint64_t substream_seed(std::uint64_t root, const std::string& name);

/// Content hash of a file (FNV-1a, hex).
std::string hash_file(const std::filesystem::path& path);

struct StageOutcome {
  std::filesystem::path manifest;
  std::vector<std::string> warnings;
};

StageOutcome cmd_ingest(const RunConfig& cfg);
StageOutcome cmd_embed(const RunConfig& cfg);
StageOutcome cmd_prune(const RunConfig& cfg);
StageOutcome cmd_train(const RunConfig& cfg, Flavor flavor);
StageOutcome cmd_index(const RunConfig& cfg, Flavor flavor);
StageOutcome cmd_eval(const RunConfig& cfg, Flavor flavor);

/// 0 success, 2 validation or I/O error, 3 numerical failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace wig
