#include "duple/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "duple/error.hpp"

namespace duple {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string pair_key(const std::string& user, const std::string& item) {
  std::string key;
  key.reserve(user.size() + item.size() + 1);
  key.append(user).push_back('\x1f');
  key.append(item);
  return key;
}

}  // namespace

InteractionFormat parse_format(std::string_view name) {
  if (name == "movielens" || name == "csv_movielens") return InteractionFormat::csv_movielens;
  if (name == "amazon" || name == "jsonl_amazon") return InteractionFormat::jsonl_amazon;
  throw UsageError("unknown interaction format '" + std::string(name) +
                   "' (expected movielens or amazon)");
}

std::vector<RawInteraction> parse_interactions(const std::filesystem::path& path,
                                               InteractionFormat format,
                                               MalformedPolicy policy,
                                               std::vector<ParseIssue>* issues) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read interactions file " + path.string());

  std::vector<RawInteraction> out;
  std::string line;
  std::size_t line_no = 0;
  bool seen_record = false;

  auto malformed = [&](const std::string& why) {
    if (policy == MalformedPolicy::abort) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    }
    if (issues) issues->push_back({line_no, why});
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;

    RawInteraction rec;
    if (format == InteractionFormat::csv_movielens) {
      const auto fields = split_commas(text);
      if (fields.size() < 3) {
        malformed("expected at least 3 comma-separated fields");
        continue;
      }
      if (!parse_double(fields[2], rec.rating)) {
        // a header line is only accepted before the first record
        if (!seen_record && line_no == 1) continue;
        malformed("rating field '" + std::string(fields[2]) + "' is not a number");
        continue;
      }
      rec.user_id = std::string(trim(fields[0]));
      rec.item_id = std::string(trim(fields[1]));
    } else {
      nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
      if (j.is_discarded() || !j.is_object()) {
        malformed("not a JSON object");
        continue;
      }
      const auto u = j.find("reviewerID");
      const auto i = j.find("asin");
      const auto r = j.find("overall");
      if (u == j.end() || i == j.end() || r == j.end() || !u->is_string() ||
          !i->is_string() || !r->is_number()) {
        malformed("missing reviewerID/asin/overall");
        continue;
      }
      rec.user_id = u->get<std::string>();
      rec.item_id = i->get<std::string>();
      rec.rating = r->get<double>();
    }
    if (rec.user_id.empty() || rec.item_id.empty()) {
      malformed("empty user or item id");
      continue;
    }
    if (!(rec.rating >= 1.0 && rec.rating <= 5.0)) {
      malformed("rating " + std::to_string(rec.rating) + " outside [1,5]");
      continue;
    }
    seen_record = true;
    out.push_back(std::move(rec));
  }
  if (in.bad()) throw InputError("error while reading " + path.string());
  return out;
}

std::vector<RawInteraction> deduplicate_keep_last(std::span<const RawInteraction> log) {
  std::unordered_map<std::string, std::size_t> last;
  last.reserve(log.size());
  for (std::size_t k = 0; k < log.size(); ++k) {
    last[pair_key(log[k].user_id, log[k].item_id)] = k;
  }
  std::vector<RawInteraction> out;
  out.reserve(last.size());
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (last.at(pair_key(log[k].user_id, log[k].item_id)) == k) out.push_back(log[k]);
  }
  return out;
}

std::vector<RawInteraction> filter_positive(std::span<const RawInteraction> log,
                                            double threshold) {
  if (!(threshold >= 1.0 && threshold <= 5.0)) {
    throw UsageError("rating threshold must lie in [1,5]");
  }
  std::vector<RawInteraction> out;
  std::copy_if(log.begin(), log.end(), std::back_inserter(out),
               [threshold](const RawInteraction& r) { return r.rating > threshold; });
  return out;
}

// ---------------------------------------------------------------------------

InteractionLog::InteractionLog(std::vector<std::string> user_ids,
                               std::vector<std::string> item_ids,
                               std::vector<std::vector<Index>> positives)
    : user_ids_(std::move(user_ids)),
      item_ids_(std::move(item_ids)),
      positives_(std::move(positives)) {
  if (positives_.size() != user_ids_.size()) {
    throw IntegrityError("interaction log: positives do not match the user map");
  }
  const Index n_items = static_cast<Index>(item_ids_.size());
  for (auto& items : positives_) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (Index i : items) {
      if (i < 0 || i >= n_items) {
        throw IntegrityError("interaction log: item index " + std::to_string(i) +
                             " outside the item map");
      }
    }
    n_interactions_ += static_cast<Index>(items.size());
  }
}

InteractionLog InteractionLog::from_raw(std::span<const RawInteraction> log) {
  std::unordered_map<std::string, Index> users, items;
  std::vector<std::string> user_ids, item_ids;
  std::vector<std::vector<Index>> positives;
  for (const auto& r : log) {
    auto [uit, unew] = users.try_emplace(r.user_id, static_cast<Index>(user_ids.size()));
    if (unew) {
      user_ids.push_back(r.user_id);
      positives.emplace_back();
    }
    auto [iit, inew] = items.try_emplace(r.item_id, static_cast<Index>(item_ids.size()));
    if (inew) item_ids.push_back(r.item_id);
    positives[uit->second].push_back(iit->second);
  }
  return InteractionLog(std::move(user_ids), std::move(item_ids), std::move(positives));
}

bool InteractionLog::contains(Index u, Index i) const {
  const auto& items = positives_.at(u);
  return std::binary_search(items.begin(), items.end(), i);
}

std::vector<Index> InteractionLog::item_degrees() const {
  std::vector<Index> deg(item_ids_.size(), 0);
  for (const auto& items : positives_) {
    for (Index i : items) ++deg[i];
  }
  return deg;
}

InteractionLog k_core_filter(const InteractionLog& log, Index k) {
  if (k < 1) throw UsageError("k-core: k must be >= 1");
  std::vector<bool> user_alive(log.n_users(), true), item_alive(log.n_items(), true);
  std::vector<Index> user_deg(log.n_users()), item_deg = log.item_degrees();
  for (Index u = 0; u < log.n_users(); ++u) {
    user_deg[u] = static_cast<Index>(log.positives(u).size());
  }

  bool changed = true;
  while (changed) {
    changed = false;
    for (Index u = 0; u < log.n_users(); ++u) {
      if (!user_alive[u] || user_deg[u] >= k) continue;
      user_alive[u] = false;
      changed = true;
      for (Index i : log.positives(u)) {
        if (item_alive[i]) --item_deg[i];
      }
    }
    for (Index i = 0; i < log.n_items(); ++i) {
      if (!item_alive[i] || item_deg[i] >= k) continue;
      item_alive[i] = false;
      changed = true;
    }
    if (!changed) break;
    // recompute user degrees against surviving items
    for (Index u = 0; u < log.n_users(); ++u) {
      if (!user_alive[u]) continue;
      Index d = 0;
      for (Index i : log.positives(u)) d += item_alive[i] ? 1 : 0;
      user_deg[u] = d;
    }
  }

  std::vector<Index> item_map(log.n_items(), -1);
  std::vector<std::string> item_ids;
  for (Index i = 0; i < log.n_items(); ++i) {
    if (item_alive[i]) {
      item_map[i] = static_cast<Index>(item_ids.size());
      item_ids.push_back(log.item_ids()[i]);
    }
  }
  std::vector<std::string> user_ids;
  std::vector<std::vector<Index>> positives;
  for (Index u = 0; u < log.n_users(); ++u) {
    if (!user_alive[u]) continue;
    std::vector<Index> items;
    for (Index i : log.positives(u)) {
      if (item_alive[i]) items.push_back(item_map[i]);
    }
    user_ids.push_back(log.user_ids()[u]);
    positives.push_back(std::move(items));
  }
  if (user_ids.empty() || item_ids.empty()) {
    throw InputError("interaction log is empty after " + std::to_string(k) +
                     "-core filtering");
  }
  return InteractionLog(std::move(user_ids), std::move(item_ids), std::move(positives));
}

double density(const InteractionLog& log) {
  if (log.n_users() == 0 || log.n_items() == 0) {
    throw UsageError("density of an empty log");
  }
  return static_cast<double>(log.n_interactions()) /
         (static_cast<double>(log.n_users()) * static_cast<double>(log.n_items()));
}

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) tokens.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read stopword list " + path.string());
  StopwordSet words;
  std::string line;
  while (std::getline(in, line)) {
    const auto w = trim(line);
    if (w.empty() || w.front() == '#') continue;
    for (auto& tok : tokenize(w)) words.insert(std::move(tok));
  }
  return words;
}

bool AttributeCatalog::has(Index item, Index attribute) const {
  const auto& a = item_attributes.at(item);
  return std::binary_search(a.begin(), a.end(), attribute);
}

Eigen::VectorXd AttributeCatalog::bow(Index item) const {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(n_attributes());
  for (Index a : item_attributes.at(item)) t[a] = 1.0;
  return t;
}

Index AttributeCatalog::find(std::string_view attribute) const {
  const auto it = std::find(vocabulary.begin(), vocabulary.end(), attribute);
  return it == vocabulary.end() ? -1 : static_cast<Index>(it - vocabulary.begin());
}

namespace {

bool is_year(const std::string& tok) {
  if (tok.size() != 4 || !std::all_of(tok.begin(), tok.end(), ::isdigit)) return false;
  const int y = std::stoi(tok);
  return y >= 1800 && y <= 2099;
}

}  // namespace

AttributeCatalog extract_attribute_catalog(std::span<const ItemText> items,
                                           const StopwordSet& stopwords,
                                           const AttributeOptions& options) {
  if (!(options.min_doc_frac > 0.0 && options.min_doc_frac <= 1.0)) {
    throw UsageError("min_doc_frac must lie in (0,1]");
  }
  std::vector<std::vector<std::string>> docs;
  docs.reserve(items.size());
  std::map<std::string, Index> df;
  for (const auto& it : items) {
    auto toks = tokenize(it.text);
    std::erase_if(toks, [&](const std::string& t) {
      return stopwords.contains(t) || (options.exclude_years && is_year(t));
    });
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (const auto& t : toks) ++df[t];
    docs.push_back(std::move(toks));
  }

  const double threshold = options.min_doc_frac * static_cast<double>(items.size());
  std::vector<std::pair<std::string, Index>> kept;
  for (const auto& [tok, count] : df) {
    if (static_cast<double>(count) > threshold) kept.emplace_back(tok, count);
  }
  if (kept.empty()) {
    throw UsageError("attribute vocabulary is empty (no token occurs in more than " +
                     std::to_string(options.min_doc_frac * 100.0) + "% of items)");
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  AttributeCatalog cat;
  std::unordered_map<std::string, Index> index;
  for (const auto& [tok, count] : kept) {
    index.emplace(tok, static_cast<Index>(cat.vocabulary.size()));
    cat.vocabulary.push_back(tok);
  }
  cat.item_ids.reserve(items.size());
  cat.item_attributes.reserve(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    std::vector<Index> attrs;
    for (const auto& t : docs[k]) {
      if (auto it = index.find(t); it != index.end()) attrs.push_back(it->second);
    }
    std::sort(attrs.begin(), attrs.end());
    cat.item_ids.push_back(items[k].item_id);
    cat.item_attributes.push_back(std::move(attrs));
  }
  return cat;
}

AttributeCatalog align_catalog(const AttributeCatalog& catalog, const InteractionLog& log) {
  std::unordered_map<std::string, Index> pos;
  for (Index k = 0; k < catalog.n_items(); ++k) pos.emplace(catalog.item_ids[k], k);
  AttributeCatalog out;
  out.vocabulary = catalog.vocabulary;
  out.item_ids = log.item_ids();
  out.item_attributes.resize(log.n_items());
  for (Index i = 0; i < log.n_items(); ++i) {
    if (auto it = pos.find(log.item_ids()[i]); it != pos.end()) {
      out.item_attributes[i] = catalog.item_attributes[it->second];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view phase_name(Phase phase) {
  return phase == Phase::validation ? "validation" : "test";
}

Phase parse_phase(std::string_view name) {
  if (name == "validation") return Phase::validation;
  if (name == "test") return Phase::test;
  throw UsageError("unknown phase '" + std::string(name) + "' (expected validation or test)");
}

Index SplitDataset::held_out(Phase phase, Index user) const {
  return phase == Phase::validation ? validation_item.at(user) : test_item.at(user);
}

const std::vector<Index>& SplitDataset::candidates(Phase phase, Index user) const {
  const auto& c = phase == Phase::validation ? validation_candidates : test_candidates;
  if (static_cast<std::size_t>(user) >= c.size()) {
    throw IntegrityError("no frozen " + std::string(phase_name(phase)) +
                         " candidates for user " + std::to_string(user));
  }
  return c[user];
}

bool SplitDataset::has_interacted(Index user, Index item) const {
  const auto& items = interacted.at(user);
  return std::binary_search(items.begin(), items.end(), item);
}

SplitDataset leave_one_out_split(const InteractionLog& log, std::uint64_t seed) {
  SplitDataset split;
  split.seed = seed;
  split.interacted = log.all_positives();
  split.validation_item.resize(log.n_users());
  split.test_item.resize(log.n_users());
  std::vector<std::vector<Index>> train(log.n_users());

  std::mt19937_64 rng(seed);
  for (Index u = 0; u < log.n_users(); ++u) {
    const auto& items = log.positives(u);
    const auto n = static_cast<Index>(items.size());
    if (n < 3) {
      throw InputError("user '" + log.user_ids()[u] + "' has " + std::to_string(n) +
                       " interactions; leave-one-out needs at least 3");
    }
    const Index t = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    Index v = std::uniform_int_distribution<Index>(0, n - 2)(rng);
    if (v >= t) ++v;
    split.test_item[u] = items[t];
    split.validation_item[u] = items[v];
    for (Index k = 0; k < n; ++k) {
      if (k != t && k != v) train[u].push_back(items[k]);
    }
  }
  split.train = InteractionLog(log.user_ids(), log.item_ids(), std::move(train));
  return split;
}

std::vector<Index> sample_candidates(const SplitDataset& split, Index user, Phase phase,
                                     Index n_neg, std::uint64_t seed) {
  const Index truth = split.held_out(phase, user);
  const auto& seen = split.interacted.at(user);
  std::vector<Index> pool;
  pool.reserve(split.n_items() - static_cast<Index>(seen.size()));
  auto it = seen.begin();
  for (Index i = 0; i < split.n_items(); ++i) {
    while (it != seen.end() && *it < i) ++it;
    if (it != seen.end() && *it == i) continue;
    pool.push_back(i);
  }
  if (n_neg > static_cast<Index>(pool.size())) {
    throw InputError("user " + std::to_string(user) + " has only " +
                     std::to_string(pool.size()) + " non-interacted items, " +
                     std::to_string(n_neg) + " negatives requested");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(phase)};
  std::mt19937_64 rng(seq);
  // partial Fisher-Yates
  for (Index k = 0; k < n_neg; ++k) {
    const Index j =
        std::uniform_int_distribution<Index>(k, static_cast<Index>(pool.size()) - 1)(rng);
    std::swap(pool[k], pool[j]);
  }
  std::vector<Index> out;
  out.reserve(n_neg + 1);
  out.push_back(truth);
  out.insert(out.end(), pool.begin(), pool.begin() + n_neg);
  return out;
}

void freeze_candidates(SplitDataset& split, Index n_neg, std::uint64_t seed) {
  split.n_neg = n_neg;
  split.candidate_seed = seed;
  split.validation_candidates.resize(split.n_users());
  split.test_candidates.resize(split.n_users());
  for (Index u = 0; u < split.n_users(); ++u) {
    split.validation_candidates[u] = sample_candidates(split, u, Phase::validation, n_neg, seed);
    split.test_candidates[u] = sample_candidates(split, u, Phase::test, n_neg, seed);
  }
}

}  // namespace duple

namespace duple {

namespace {

/// RFC 4180 field splitting with "" escapes inside quoted fields.
std::vector<std::string> split_csv_quoted(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          fields.back().push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  return fields;
}

void append_json_text(const nlohmann::json& j, std::string& out) {
  if (j.is_string()) {
    out.push_back(' ');
    out.append(j.get<std::string>());
  } else if (j.is_array()) {
    for (const auto& e : j) append_json_text(e, out);
  }
}

}  // namespace

std::vector<ItemRecord> parse_item_records(const std::filesystem::path& path,
                                           InteractionFormat format) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read item file " + path.string());
  std::vector<ItemRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ItemRecord rec;
    if (format == InteractionFormat::csv_movielens) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto fields = split_csv_quoted(line);
      if (fields.size() < 3) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": expected movieId,title,genres");
      }
      if (line_no == 1 && fields[0] == "movieId") continue;
      std::string genres = fields[2];
      if (genres == "(no genres listed)") genres.clear();
      std::replace(genres.begin(), genres.end(), '|', ' ');
      rec.item_id = std::string(trim(fields[0]));
      rec.title = std::string(trim(fields[1]));
      rec.text = rec.title + " " + genres;
    } else {
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("asin") || !j["asin"].is_string()) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": expected a JSON object with an asin field");
      }
      rec.item_id = j["asin"].get<std::string>();
      if (auto t = j.find("title"); t != j.end() && t->is_string()) rec.title = t->get<std::string>();
      for (const char* key : {"title", "description", "brand", "categories", "feature"}) {
        if (auto f = j.find(key); f != j.end()) append_json_text(*f, rec.text);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace duple
