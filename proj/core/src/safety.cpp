#include "motun/safety.hpp"

#include <algorithm>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "motun/common.hpp"

namespace motun::safety {

using nlohmann::json;

namespace {

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Consonant-vowel-consonant ending that doubles its final letter (hit ->
// hitting, stab -> stabbed).
bool doubles_final(const std::string& w) {
  const size_t n = w.size();
  if (n < 3) return n == 2 && !is_vowel(w[0]) && is_vowel(w[1]);
  const char a = w[n - 3], b = w[n - 2], c = w[n - 1];
  if (c == 'w' || c == 'x' || c == 'y') return false;
  return !is_vowel(a) && is_vowel(b) && !is_vowel(c);
}

void add_inflections(std::unordered_map<std::string, std::string>& table, const std::string& w) {
  auto put = [&table, &w](const std::string& form) { table.emplace(form, w); };
  put(w);
  const size_t n = w.size();
  const bool ends_e = n >= 2 && w[n - 1] == 'e' && w[n - 2] != 'e';
  const bool ends_y = n >= 2 && w[n - 1] == 'y' && !is_vowel(w[n - 2]);
  const bool sibilant = w.ends_with("s") || w.ends_with("x") || w.ends_with("z") ||
                        w.ends_with("ch") || w.ends_with("sh");
  // third person / plural
  if (sibilant)
    put(w + "es");
  else if (ends_y)
    put(w.substr(0, n - 1) + "ies");
  else
    put(w + "s");
  // gerund
  if (ends_e)
    put(w.substr(0, n - 1) + "ing");
  else if (doubles_final(w))
    put(w + w.back() + "ing");
  else
    put(w + "ing");
  // past
  if (ends_e)
    put(w + "d");
  else if (ends_y)
    put(w.substr(0, n - 1) + "ied");
  else if (doubles_final(w))
    put(w + w.back() + "ed");
  else
    put(w + "ed");
  // agentive
  if (ends_e)
    put(w + "r"), put(w + "rs");
  else if (doubles_final(w))
    put(w + w.back() + "er"), put(w + w.back() + "ers");
  else
    put(w + "er"), put(w + "ers");

  static const std::unordered_map<std::string, std::string> irregular = {
      {"strike", "struck"}, {"fight", "fought"}, {"shoot", "shot"}, {"throw", "threw"},
  };
  auto it = irregular.find(w);
  if (it != irregular.end()) put(it->second);
  if (w == "throw") put("thrown");
  if (w == "shoot") put("shooting");
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::string LemmaList::lemmatize(const std::string& token) const {
  auto it = inflections.find(token);
  return it == inflections.end() ? token : it->second;
}

bool LemmaList::has_lemma(const std::string& lemma) const {
  return std::find(lemmas.begin(), lemmas.end(), lemma) != lemmas.end();
}

LemmaList LemmaList::defaults() {
  std::vector<std::vector<std::string>> entries;
  for (const char* w : {"punch", "kick", "hit", "strike", "stab", "shoot", "slap", "choke",
                        "kill", "attack", "fight", "threaten", "smash", "assault"})
    entries.push_back({w});
  entries.push_back({"throw", "a", "punch"});
  entries.push_back({"pull", "the", "trigger"});
  entries.push_back({"knock", "out"});
  return from_tokens(entries);
}

LemmaList LemmaList::from_tokens(const std::vector<std::vector<std::string>>& entries) {
  LemmaList list;
  for (const auto& entry : entries) {
    require(!entry.empty(), Errc::bad_config, "empty lemma entry");
    std::vector<std::string> tokens;
    for (const auto& t : entry) tokens.push_back(lower(t));
    if (tokens.size() == 1) {
      if (!list.has_lemma(tokens[0])) list.lemmas.push_back(tokens[0]);
      add_inflections(list.inflections, tokens[0]);
    } else {
      list.phrases.push_back(tokens);
      for (const auto& t : tokens) add_inflections(list.inflections, t);
    }
  }
  return list;
}

LemmaList LemmaList::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_error, "missing lemma list: " + path.string());
  std::vector<std::vector<std::string>> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tokens = motion::tokenize(line);
    if (!tokens.empty()) entries.push_back(tokens);
  }
  return from_tokens(entries);
}

namespace {

bool is_clause_break(const std::string& token) {
  static const std::vector<std::string> breaks = {"and", "then",  "while", "before",
                                                  "after", "or",  "but",   ",",
                                                  ";",     "."};
  return std::find(breaks.begin(), breaks.end(), token) != breaks.end();
}

std::vector<Evidence> match_evidence(const std::vector<std::string>& caption,
                                     const LemmaList& lemmas) {
  const int n = static_cast<int>(caption.size());
  std::vector<std::string> lem(n);
  for (int i = 0; i < n; ++i) lem[i] = lemmas.lemmatize(lower(caption[i]));
  std::vector<bool> covered(n, false);
  std::vector<Evidence> evidence;
  // Phrases take priority over their constituent lemmas.
  for (const auto& phrase : lemmas.phrases) {
    const int m = static_cast<int>(phrase.size());
    for (int i = 0; i + m <= n; ++i) {
      bool match = true;
      for (int j = 0; j < m; ++j)
        if (lem[i + j] != phrase[j]) {
          match = false;
          break;
        }
      if (!match) continue;
      Evidence e;
      e.text = motion::join_tokens(phrase);
      e.begin = i;
      e.end = i + m;
      evidence.push_back(e);
      for (int j = i; j < i + m; ++j) covered[j] = true;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (covered[i] || !lemmas.has_lemma(lem[i])) continue;
    Evidence e;
    e.text = lem[i];
    e.begin = i;
    e.end = i + 1;
    evidence.push_back(e);
  }
  return evidence;
}

}  // namespace

ToxicityVerdict classify(const std::vector<std::string>& caption, const LemmaList& lemmas) {
  require(!caption.empty(), Errc::empty_condition, "cannot classify an empty caption");
  ToxicityVerdict v;
  v.backend = Backend::rules;
  v.evidence = match_evidence(caption, lemmas);
  if (v.evidence.empty()) {
    v.level = 1;
    return v;
  }
  // Clause spans between conjunctions/punctuation.
  std::vector<std::pair<int, int>> clauses;
  int start = 0;
  const int n = static_cast<int>(caption.size());
  for (int i = 0; i <= n; ++i) {
    if (i == n || is_clause_break(lower(caption[i]))) {
      if (i > start) clauses.emplace_back(start, i);
      start = i + 1;
    }
  }
  if (clauses.empty()) clauses.emplace_back(0, n);
  int harmful = 0;
  for (const auto& [b, e] : clauses) {
    bool hot = false;
    for (const auto& ev : v.evidence)
      if (ev.begin < e && ev.end > b) {
        hot = true;
        break;
      }
    if (hot) ++harmful;
  }
  v.level = 2 * harmful <= static_cast<int>(clauses.size()) ? 2 : 3;
  return v;
}

ToxicityVerdict classify(const std::vector<std::string>& caption, const LemmaList& lemmas,
                         AgentClient* remote) {
  if (remote) {
    const auto resp = remote->query(motion::join_tokens(caption));
    if (resp && resp->level >= 1 && resp->level <= 3) {
      ToxicityVerdict v;
      v.level = resp->level;
      v.evidence = resp->evidence;
      v.backend = Backend::remote;
      return v;
    }
    ToxicityVerdict v = classify(caption, lemmas);
    v.fallback_warning = true;
    return v;
  }
  return classify(caption, lemmas);
}

Partition partition(const std::vector<motion::CorpusEntry>& corpus, const LemmaList& lemmas) {
  require(!corpus.empty(), Errc::bad_config, "cannot partition an empty corpus");
  Partition p;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (!match_evidence(corpus[i].caption, lemmas).empty())
      p.forget.push_back(i);
    else
      p.retain.push_back(i);
  }
  return p;
}

RewriteRecord rewrite_dispatch(const std::vector<std::string>& caption,
                               const ToxicityVerdict& verdict, AgentClient* client) {
  RewriteRecord rec;
  rec.original = motion::join_tokens(caption);
  rec.level = verdict.level;
  if (verdict.level == 1) {
    rec.rewritten = rec.original;
    rec.ok = true;
    return rec;
  }
  require(client != nullptr, Errc::bad_config, "rewrite needs a configured client");
  // Level 2 targets only the evidence spans; level 3 targets everything.
  std::vector<Evidence> targets;
  if (verdict.level == 2) {
    targets = verdict.evidence;
  } else {
    Evidence whole;
    whole.text = rec.original;
    whole.begin = 0;
    whole.end = static_cast<int>(caption.size());
    targets.push_back(whole);
  }
  const auto resp = client->query(rec.original, verdict.level, &targets);
  if (!resp || !resp->rewritten) {
    rec.ok = false;
    return rec;
  }
  rec.rewritten = *resp->rewritten;
  rec.ok = true;
  rec.ineffective = rec.rewritten == rec.original;
  return rec;
}

void save_rewrite_records(const std::filesystem::path& path,
                          const std::vector<RewriteRecord>& records) {
  std::ofstream out(path);
  require(out.good(), Errc::io_error, "cannot open for write: " + path.string());
  for (const auto& r : records) {
    json rec;
    rec["original"] = r.original;
    rec["level"] = r.level;
    rec["rewritten"] = r.rewritten;
    rec["ok"] = r.ok;
    rec["ineffective"] = r.ineffective;
    out << rec.dump() << "\n";
  }
}

HttpAgentClient::HttpAgentClient(std::string endpoint, double timeout_sec)
    : endpoint_(std::move(endpoint)), timeout_sec_(timeout_sec) {}

std::optional<AgentResponse> HttpAgentClient::query(const std::string& caption, int level,
                                                    const std::vector<Evidence>* targets) {
  try {
    httplib::Client client(endpoint_);
    const auto sec = static_cast<time_t>(timeout_sec_);
    const auto usec = static_cast<time_t>((timeout_sec_ - static_cast<double>(sec)) * 1e6);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    json req;
    req["caption"] = caption;
    if (level > 0) req["level"] = level;
    if (targets) {
      json spans = json::array();
      for (const auto& ev : *targets) spans.push_back({ev.begin, ev.end});
      req["target_spans"] = spans;
    }
    const auto res = client.Post("/classify", req.dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;
    const json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("level")) return std::nullopt;
    AgentResponse out;
    out.level = body.at("level").get<int>();
    if (body.contains("evidence")) {
      for (const auto& ev : body.at("evidence")) {
        Evidence e;
        e.text = ev.value("text", "");
        e.begin = ev.value("begin", 0);
        e.end = ev.value("end", 0);
        out.evidence.push_back(e);
      }
    }
    if (body.contains("rewritten") && body.at("rewritten").is_string())
      out.rewritten = body.at("rewritten").get<std::string>();
    return out;
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace motun::safety
