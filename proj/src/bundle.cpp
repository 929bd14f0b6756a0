#include "duple/bundle.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "duple/error.hpp"

namespace duple {

namespace {

void require_file(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw UsageError(std::string("no ") + what + " file given");
  if (!std::filesystem::is_regular_file(p)) {
    throw InputError(std::string(what) + " file not found: " + p.string());
  }
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("bundle file missing: " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

[[noreturn]] void corrupt(const std::filesystem::path& p, const std::string& why) {
  throw IntegrityError("bundle file " + p.string() + ": " + why);
}

}  // namespace

Bundle ingest(const IngestOptions& o) {
  require_file(o.interactions, "interactions");
  require_file(o.items, "item metadata");
  require_file(o.stopwords, "stopword");

  Bundle b;
  std::vector<ParseIssue> issues;
  const auto raw = parse_interactions(o.interactions, o.format, o.malformed, &issues);
  b.stats.raw_records = static_cast<Index>(raw.size());
  b.stats.skipped_records = static_cast<Index>(issues.size());
  const auto dedup = deduplicate_keep_last(raw);
  b.stats.deduplicated = static_cast<Index>(dedup.size());
  const auto positive = filter_positive(dedup, o.rating_threshold);
  b.stats.positive = static_cast<Index>(positive.size());
  if (positive.empty()) throw InputError("no interaction passes the rating filter");

  std::unordered_set<std::string> surviving;
  for (const auto& r : positive) surviving.insert(r.item_id);
  const auto records = parse_item_records(o.items, o.format);
  std::vector<ItemText> texts;
  std::unordered_map<std::string, std::string> titles;
  for (const auto& r : records) {
    if (!surviving.count(r.item_id)) continue;
    texts.push_back({r.item_id, r.text});
    titles[r.item_id] = r.title;
  }
  b.stats.items_with_text = static_cast<Index>(texts.size());
  const auto catalog = extract_attribute_catalog(texts, load_stopwords(o.stopwords), o.attributes);

  const auto log = k_core_filter(InteractionLog::from_raw(positive), o.k_core);
  b.catalog = align_catalog(catalog, log);
  b.split = leave_one_out_split(log, o.split_seed);
  freeze_candidates(b.split, o.n_neg, o.candidate_seed);
  for (const auto& id : log.item_ids()) {
    const auto it = titles.find(id);
    b.item_titles.push_back(it == titles.end() ? std::string{} : it->second);
  }
  b.stats.users = log.n_users();
  b.stats.items = log.n_items();
  b.stats.interactions = log.n_interactions();
  b.stats.attributes = b.catalog.n_attributes();
  b.stats.density = density(log);
  return b;
}

void write_bundle(const std::filesystem::path& dir, const Bundle& b, const IngestOptions& o,
                  bool force) {
  if (std::filesystem::exists(dir / "meta.json") && !force) {
    throw UsageError("bundle already exists in " + dir.string() + " (use --force to overwrite)");
  }
  std::filesystem::create_directories(dir);
  const SplitDataset& s = b.split;

  {
    auto out = open_out(dir / "interactions.csv");
    out << "user,item\n";
    for (Index u = 0; u < s.n_users(); ++u) {
      for (Index i : s.interacted[u]) out << u << "," << i << "\n";
    }
  }
  {
    auto out = open_out(dir / "users.txt");
    for (const auto& id : s.train.user_ids()) out << id << "\n";
  }
  {
    auto out = open_out(dir / "items.tsv");
    for (Index i = 0; i < s.n_items(); ++i) {
      out << i << "\t" << s.train.item_ids()[i] << "\t"
          << (i < static_cast<Index>(b.item_titles.size()) ? b.item_titles[i] : "") << "\n";
    }
  }
  {
    auto out = open_out(dir / "vocabulary.txt");
    for (const auto& w : b.catalog.vocabulary) out << w << "\n";
  }
  {
    auto out = open_out(dir / "item_attributes.csv");
    out << "item,attributes\n";
    for (Index i = 0; i < b.catalog.n_items(); ++i) {
      out << i << ",";
      const auto& attrs = b.catalog.item_attributes[i];
      for (std::size_t k = 0; k < attrs.size(); ++k) out << (k ? " " : "") << attrs[k];
      out << "\n";
    }
  }
  {
    nlohmann::json j;
    j["seed"] = s.seed;
    j["candidate_seed"] = s.candidate_seed;
    j["n_neg"] = s.n_neg;
    auto& users = j["users"] = nlohmann::json::array();
    for (Index u = 0; u < s.n_users(); ++u) {
      users.push_back({{"validation", s.validation_item[u]},
                       {"test", s.test_item[u]},
                       {"validation_candidates", s.validation_candidates[u]},
                       {"test_candidates", s.test_candidates[u]}});
    }
    open_out(dir / "split.json") << j.dump() << "\n";
  }
  {
    const auto& st = b.stats;
    nlohmann::json j;
    j["format"] = o.format == InteractionFormat::csv_movielens ? "movielens" : "amazon";
    j["sources"] = {{"interactions", o.interactions.string()}, {"items", o.items.string()},
                    {"stopwords", o.stopwords.string()}};
    j["counts"] = {{"raw_records", st.raw_records},
                   {"skipped_records", st.skipped_records},
                   {"after_dedup", st.deduplicated},
                   {"after_rating_filter", st.positive},
                   {"items_with_text", st.items_with_text},
                   {"users", st.users},
                   {"items", st.items},
                   {"interactions", st.interactions},
                   {"attributes", st.attributes}};
    j["density"] = st.density;
    j["thresholds"] = {{"rating_gt", o.rating_threshold},
                       {"k_core", o.k_core},
                       {"min_doc_frac", o.attributes.min_doc_frac},
                       {"exclude_years", o.attributes.exclude_years}};
    j["seeds"] = {{"split", o.split_seed}, {"candidates", o.candidate_seed}};
    j["n_neg"] = o.n_neg;
    open_out(dir / "meta.json") << j.dump(2) << "\n";
  }
}

static Bundle read_bundle_impl(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("bundle not found: " + dir.string());
  Bundle b;
  std::string line;

  std::vector<std::string> users;
  {
    auto in = open_in(dir / "users.txt");
    while (std::getline(in, line)) users.push_back(line);
  }
  std::vector<std::string> items;
  {
    const auto p = dir / "items.tsv";
    auto in = open_in(p);
    while (std::getline(in, line)) {
      const auto t1 = line.find('\t');
      const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos) corrupt(p, "bad line: " + line);
      if (std::stoll(line.substr(0, t1)) != static_cast<long long>(items.size())) {
        corrupt(p, "item indices are not consecutive");
      }
      items.push_back(line.substr(t1 + 1, t2 - t1 - 1));
      b.item_titles.push_back(line.substr(t2 + 1));
    }
  }
  const Index n_users = static_cast<Index>(users.size());
  const Index n_items = static_cast<Index>(items.size());

  std::vector<std::vector<Index>> positives(n_users);
  {
    const auto p = dir / "interactions.csv";
    auto in = open_in(p);
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto c = line.find(',');
      if (c == std::string::npos) corrupt(p, "bad line: " + line);
      const Index u = std::stoll(line.substr(0, c));
      const Index i = std::stoll(line.substr(c + 1));
      if (u < 0 || u >= n_users || i < 0 || i >= n_items) corrupt(p, "index out of range");
      positives[u].push_back(i);
    }
  }
  for (auto& v : positives) std::sort(v.begin(), v.end());

  {
    auto in = open_in(dir / "vocabulary.txt");
    while (std::getline(in, line)) b.catalog.vocabulary.push_back(line);
  }
  b.catalog.item_ids = items;
  b.catalog.item_attributes.assign(n_items, {});
  {
    const auto p = dir / "item_attributes.csv";
    auto in = open_in(p);
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto c = line.find(',');
      if (c == std::string::npos) corrupt(p, "bad line: " + line);
      const Index i = std::stoll(line.substr(0, c));
      if (i < 0 || i >= n_items) corrupt(p, "item index out of range");
      std::istringstream ss(line.substr(c + 1));
      Index a;
      auto& attrs = b.catalog.item_attributes[i];
      while (ss >> a) {
        if (a < 0 || a >= b.catalog.n_attributes()) corrupt(p, "attribute index out of range");
        attrs.push_back(a);
      }
      std::sort(attrs.begin(), attrs.end());
    }
  }

  nlohmann::json j;
  const auto sp = dir / "split.json";
  try {
    auto in = open_in(sp);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    corrupt(sp, e.what());
  }
  SplitDataset& s = b.split;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.candidate_seed = j.at("candidate_seed").get<std::uint64_t>();
    s.n_neg = j.at("n_neg").get<Index>();
    const auto& ju = j.at("users");
    if (static_cast<Index>(ju.size()) != n_users) corrupt(sp, "user count differs from users.txt");
    std::vector<std::vector<Index>> train(n_users);
    for (Index u = 0; u < n_users; ++u) {
      const auto& e = ju[u];
      const Index v = e.at("validation").get<Index>();
      const Index t = e.at("test").get<Index>();
      s.validation_item.push_back(v);
      s.test_item.push_back(t);
      s.validation_candidates.push_back(e.at("validation_candidates").get<std::vector<Index>>());
      s.test_candidates.push_back(e.at("test_candidates").get<std::vector<Index>>());
      for (Index i : positives[u]) {
        if (i != v && i != t) train[u].push_back(i);
      }
      if (static_cast<Index>(train[u].size()) + 2 != static_cast<Index>(positives[u].size())) {
        corrupt(sp, "held-out items of user " + std::to_string(u) + " are not interactions");
      }
      for (const auto* c : {&s.validation_candidates[u], &s.test_candidates[u]}) {
        if (static_cast<Index>(c->size()) != s.n_neg + 1) {
          corrupt(sp, "candidate list of user " + std::to_string(u) + " has wrong length");
        }
        for (Index i : *c) {
          if (i < 0 || i >= n_items) corrupt(sp, "candidate index out of range");
        }
      }
    }
    s.train = InteractionLog(users, items, std::move(train));
  } catch (const nlohmann::json::exception& e) {
    corrupt(sp, e.what());
  }
  s.interacted = std::move(positives);

  try {
    auto in = open_in(dir / "meta.json");
    const auto m = nlohmann::json::parse(in);
    const auto& c = m.at("counts");
    b.stats.raw_records = c.value("raw_records", Index{0});
    b.stats.skipped_records = c.value("skipped_records", Index{0});
    b.stats.deduplicated = c.value("after_dedup", Index{0});
    b.stats.positive = c.value("after_rating_filter", Index{0});
    b.stats.items_with_text = c.value("items_with_text", Index{0});
    b.stats.users = c.value("users", Index{0});
    b.stats.items = c.value("items", Index{0});
    b.stats.interactions = c.value("interactions", Index{0});
    b.stats.attributes = c.value("attributes", Index{0});
    b.stats.density = m.value("density", 0.0);
  } catch (const nlohmann::json::exception& e) {
    corrupt(dir / "meta.json", e.what());
  }
  if (b.stats.users != n_users || b.stats.items != n_items ||
      b.stats.attributes != b.catalog.n_attributes()) {
    corrupt(dir / "meta.json", "counts disagree with the bundle contents");
  }
  return b;
}

Bundle read_bundle(const std::filesystem::path& dir) {
  try {
    return read_bundle_impl(dir);
  } catch (const std::invalid_argument&) {
    throw IntegrityError("bundle " + dir.string() + " holds a non-numeric index");
  } catch (const std::out_of_range&) {
    throw IntegrityError("bundle " + dir.string() + " holds an index out of range");
  }
}

}  // namespace duple
