#include "wig/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace wig {

namespace fs = std::filesystem;

namespace {

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  if (s.empty()) return std::nullopt;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

std::optional<Date> parse_date(std::string_view text) {
  const std::string t = trim(text);
  std::string_view s(t);
  if (s.size() != 7 && s.size() != 10) return std::nullopt;
  if (s[4] != '-') return std::nullopt;
  auto y = parse_int(s.substr(0, 4));
  auto m = parse_int(s.substr(5, 2));
  int day = 1;
  if (s.size() == 10) {
    if (s[7] != '-') return std::nullopt;
    auto d = parse_int(s.substr(8, 2));
    if (!d) return std::nullopt;
    day = *d;
  }
  if (!y || !m) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year(*y), std::chrono::month(static_cast<unsigned>(*m)),
                                        std::chrono::day(static_cast<unsigned>(day))};
  if (*m < 1 || day < 1 || !ymd.ok()) return std::nullopt;
  return Date{*y, *m, day};
}

Period Period::next() const { return month == 12 ? Period{year + 1, 1} : Period{year, month + 1}; }

std::string Period::key() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

std::optional<Period> parse_period(std::string_view text) {
  const std::string t = trim(text);
  if (t.size() != 7) return std::nullopt;
  auto d = parse_date(t);
  if (!d) return std::nullopt;
  return Period::of(*d);
}

TokenId Vocabulary::add(const std::string& token, std::uint64_t frequency) {
  require(frequency >= 1, "vocabulary frequency must be >= 1 for '" + token + "'");
  require(!index_.contains(token), "duplicate vocabulary token '" + token + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  freq_.push_back(frequency);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\t' << freq_[i] << '\n';
}

Vocabulary Vocabulary::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, token, freq;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, token, '\t') || !std::getline(ls, freq))
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>token<TAB>frequency");
    if (std::stoull(id) != v.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": vocabulary ids must be dense 0..N-1");
    v.add(token, std::stoull(freq));
  }
  return v;
}

double DocDistribution::total() const {
  double s = 0.0;
  for (const auto& [id, m] : entries) s += m;
  return s;
}

Vector DocDistribution::dense() const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& [id, m] : entries) v[id] += m;
  return v;
}

std::vector<std::string> preprocess(std::string_view raw_text, const PreprocessOptions& options,
                                    const std::unordered_set<std::string>& stopwords) {
  std::string cleaned;
  cleaned.reserve(raw_text.size());
  for (unsigned char c : raw_text) {
    if (options.strip_punct && !std::isalnum(c) && !std::isspace(c) && c < 0x80) {
      cleaned.push_back(' ');
      continue;
    }
    cleaned.push_back(options.lowercase ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  std::vector<std::string> tokens;
  std::istringstream ss(cleaned);
  std::string tok;
  while (ss >> tok) {
    if (tok.size() < options.min_token_length) continue;
    if (stopwords.contains(tok)) continue;
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

std::unordered_set<std::string> load_stopwords(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stopword list " + path.string());
  std::unordered_set<std::string> words;
  std::string w;
  while (in >> w) words.insert(w);
  return words;
}

Corpus build_corpus(const std::vector<RawRecord>& records, const PreprocessOptions& options) {
  std::unordered_set<std::string> stopwords;
  if (options.stopword_path) stopwords = load_stopwords(*options.stopword_path);

  struct Pending {
    const RawRecord* record;
    Date date;
    std::vector<std::string> tokens;
  };
  Corpus corpus;
  corpus.stats.records = records.size();
  std::vector<Pending> pending;
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& r : records) {
    auto date = parse_date(r.date);
    if (!date) {
      ++corpus.stats.bad_date;
      continue;
    }
    auto tokens = preprocess(r.text, options, stopwords);
    if (tokens.empty()) {
      ++corpus.stats.empty_text;
      continue;
    }
    for (const auto& t : tokens) ++counts[t];
    pending.push_back({&r, *date, std::move(tokens)});
  }

  // Second pass: drop rare tokens, then assign ids by first appearance.
  std::unordered_map<std::string, TokenId> ids;
  std::vector<std::string> order;
  for (auto& p : pending) {
    Document doc{p.record->id, p.date, {}};
    for (const auto& t : p.tokens) {
      if (counts[t] < options.min_frequency) continue;
      auto [it, inserted] = ids.emplace(t, static_cast<TokenId>(order.size()));
      if (inserted) order.push_back(t);
      doc.tokens.push_back(it->second);
    }
    if (doc.tokens.empty()) {
      ++corpus.stats.emptied_by_filter;
      continue;
    }
    corpus.documents.push_back(std::move(doc));
  }
  for (const auto& t : order) corpus.vocab.add(t, counts[t]);
  if (corpus.stats.skipped() > 0) {
    std::clog << "[wig] skipped " << corpus.stats.skipped() << " of " << corpus.stats.records
              << " records (bad date " << corpus.stats.bad_date << ", empty text " << corpus.stats.empty_text
              << ", emptied by frequency filter " << corpus.stats.emptied_by_filter << ")\n";
  }
  return corpus;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started && field.empty()) {
          in_quotes = true;
          field_started = true;
        } else {
          field.push_back(c);
        }
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw ValidationError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::vector<RawRecord> read_records(const fs::path& path, const IngestOptions& options) {
  if (!fs::exists(path)) throw IoError("input file not found: " + path.string());
  const std::string text = read_file(path);
  std::vector<RawRecord> records;

  if (options.format == InputFormat::csv) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw ValidationError(path.string() + ": empty csv");
    const auto& header = rows.front();
    auto column = [&](const std::string& name) -> std::size_t {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ValidationError(path.string() + ": missing field '" + name + "'");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t date_col = column(options.date_field);
    const std::size_t text_col = column(options.text_field);
    std::optional<std::size_t> id_col;
    if (options.id_field) id_col = column(*options.id_field);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() != header.size())
        throw ValidationError(path.string() + ": row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                              " fields, header has " + std::to_string(header.size()));
      records.push_back({id_col ? row[*id_col] : std::to_string(r - 1), row[date_col], row[text_col]});
    }
    return records;
  }

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto field = [&](const std::string& name) -> std::string {
      if (!j.contains(name))
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing field '" + name + "'");
      const auto& v = j.at(name);
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    std::string id = options.id_field ? field(*options.id_field) : std::to_string(records.size());
    records.push_back({std::move(id), field(options.date_field), field(options.text_field)});
  }
  return records;
}

Corpus ingest(const fs::path& path, const IngestOptions& options) {
  auto corpus = build_corpus(read_records(path, options), options.preprocess);
  if (corpus.documents.empty()) throw ValidationError(path.string() + ": no documents survived preprocessing");
  return corpus;
}

void write_corpus_jsonl(const Corpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& doc : corpus.documents) {
    std::string text;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      if (i) text.push_back(' ');
      text += corpus.vocab.token(doc.tokens[i]);
    }
    nlohmann::ordered_json j;
    j["id"] = doc.id;
    j["date"] = doc.date.iso();
    j["text"] = text;
    out << j.dump() << '\n';
  }
}

std::vector<Document> read_documents(const fs::path& path, const Vocabulary& vocab) {
  IngestOptions opts;
  opts.id_field = "id";
  std::vector<Document> docs;
  for (const auto& r : read_records(path, opts)) {
    auto date = parse_date(r.date);
    if (!date) throw ValidationError(path.string() + ": bad date '" + r.date + "' in document " + r.id);
    Document doc{r.id, *date, {}};
    std::istringstream ss(r.text);
    std::string tok;
    while (ss >> tok) {
      auto id = vocab.find(tok);
      if (!id) throw ValidationError(path.string() + ": token '" + tok + "' not in vocabulary");
      doc.tokens.push_back(*id);
    }
    if (doc.tokens.empty()) throw ValidationError(path.string() + ": empty document " + r.id);
    docs.push_back(std::move(doc));
  }
  return docs;
}

DocDistribution to_distribution(const Document& doc, std::size_t vocab_size) {
  require(!doc.tokens.empty(), "to_distribution: empty document " + doc.id);
  std::map<TokenId, std::size_t> counts;
  for (TokenId t : doc.tokens) {
    require(t < vocab_size, "to_distribution: token id out of range in document " + doc.id);
    ++counts[t];
  }
  DocDistribution dist{doc.id, vocab_size, {}};
  const double n = static_cast<double>(doc.tokens.size());
  for (const auto& [id, c] : counts) dist.entries.emplace_back(id, static_cast<double>(c) / n);
  return dist;
}

}  // namespace wig
