#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "wig/common.hpp"

namespace wig {

/// Calendar date at day precision.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;
  std::string iso() const;
};

/// Accepts "YYYY-MM-DD" or "YYYY-MM" (day defaults to 1). Returns nullopt
/// for anything that is not a real calendar date.
std::optional<Date> parse_date(std::string_view text);

/// Monthly aggregation key.
struct Period {
  int year = 1970;
  int month = 1;

  static Period of(const Date& d) { return {d.year, d.month}; }
  Period next() const;
  auto operator<=>(const Period&) const = default;
  std::string key() const;  // "YYYY-MM"
};

std::optional<Period> parse_period(std::string_view text);

struct Document {
  std::string id;
  Date date;
  std::vector<TokenId> tokens;
};

class Vocabulary {
public:
  /// Appends a token with the given count; returns its id.
  TokenId add(const std::string& token, std::uint64_t frequency);

  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::uint64_t frequency(TokenId id) const { return freq_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  /// "id<TAB>token<TAB>frequency" per line.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && freq_ == o.freq_; }

private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freq_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Sparse point on the N-simplex; entries sorted by token id.
struct DocDistribution {
  std::string doc_id;
  std::size_t dim = 0;
  std::vector<std::pair<TokenId, double>> entries;

  double total() const;
  Vector dense() const;
};

struct PreprocessOptions {
  bool lowercase = true;
  bool strip_punct = true;
  std::size_t min_token_length = 1;
  std::optional<std::filesystem::path> stopword_path;
  std::size_t min_frequency = 1;
};

/// Per-record tokenization. Corpus-frequency filtering is a separate pass
/// (see build_corpus) because it needs every record.
std::vector<std::string> preprocess(std::string_view raw_text, const PreprocessOptions& options,
                                    const std::unordered_set<std::string>& stopwords = {});

std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path);

enum class InputFormat { csv, jsonl };

struct IngestOptions {
  InputFormat format = InputFormat::jsonl;
  std::string date_field = "date";
  std::string text_field = "text";
  std::optional<std::string> id_field;  // defaults to the 0-based record number
  PreprocessOptions preprocess;
};

struct IngestStats {
  std::size_t records = 0;
  std::size_t bad_date = 0;
  std::size_t empty_text = 0;
  std::size_t emptied_by_filter = 0;

  std::size_t skipped() const { return bad_date + empty_text + emptied_by_filter; }
};

struct Corpus {
  std::vector<Document> documents;
  Vocabulary vocab;
  IngestStats stats;
};

struct RawRecord {
  std::string id;
  std::string date;
  std::string text;
};

/// Tokenizes, applies the min-frequency pass, drops emptied documents and
/// assigns ids in first-appearance order.
Corpus build_corpus(const std::vector<RawRecord>& records, const PreprocessOptions& options);

std::vector<RawRecord> read_records(const std::filesystem::path& path, const IngestOptions& options);

Corpus ingest(const std::filesystem::path& path, const IngestOptions& options);

/// Writes documents as JSONL {"id","date","text"} with text = space-joined
/// tokens, so ingest() reproduces the same corpus.
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

/// Reads a JSONL corpus written by write_corpus_jsonl against a fixed
/// vocabulary; unknown tokens are an error.
std::vector<Document> read_documents(const std::filesystem::path& path, const Vocabulary& vocab);

DocDistribution to_distribution(const Document& doc, std::size_t vocab_size);

/// RFC-4180 parse of a whole CSV text into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace wig
