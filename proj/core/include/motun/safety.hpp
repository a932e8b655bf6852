#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "motun/motion.hpp"

namespace motun::safety {

/// Curated harmful-action vocabulary: single-word lemmas plus multi-word
/// phrases (matched first). Matching is exact at the lemma level; a closed
/// inflection table derived from the entries maps surface forms back to
/// their lemma.
struct LemmaList {
  std::vector<std::string> lemmas;
  std::vector<std::vector<std::string>> phrases;
  std::unordered_map<std::string, std::string> inflections;

  std::string lemmatize(const std::string& token) const;
  bool has_lemma(const std::string& lemma) const;

  static LemmaList defaults();
  static LemmaList from_tokens(const std::vector<std::vector<std::string>>& entries);
  static LemmaList from_file(const std::filesystem::path& path);
};

struct Evidence {
  std::string text;
  int begin = 0;  // token span [begin, end)
  int end = 0;
};

enum class Backend { rules, remote };

struct ToxicityVerdict {
  int level = 1;
  std::vector<Evidence> evidence;
  Backend backend = Backend::rules;
  bool fallback_warning = false;
};

struct AgentResponse {
  int level = 1;
  std::vector<Evidence> evidence;
  std::optional<std::string> rewritten;
};

/// Remote classify/rewrite agent. A classification query passes only the
/// caption; a rewrite query adds the verdict level and the token spans the
/// rewrite should target. Implementations return nullopt on timeout or
/// malformed responses, which makes the caller fall back to the rules.
class AgentClient {
 public:
  virtual ~AgentClient() = default;
  virtual std::optional<AgentResponse> query(const std::string& caption, int level = 0,
                                             const std::vector<Evidence>* targets = nullptr) = 0;
};

/// HTTP POST {"caption", "level"?, "target_spans"?} to <endpoint>/classify,
/// expecting {"level", "evidence": [{"text","begin","end"}], "rewritten"?}.
class HttpAgentClient : public AgentClient {
 public:
  explicit HttpAgentClient(std::string endpoint, double timeout_sec = 10.0);
  std::optional<AgentResponse> query(const std::string& caption, int level,
                                     const std::vector<Evidence>* targets) override;

 private:
  std::string endpoint_;
  double timeout_sec_;
};

/// Rules backend: lemmatize, match phrases before lemmas, then grade by how
/// much of the caption the matches cover. No match is level 1; matches
/// confined to a minority of clauses are level 2; otherwise level 3.
ToxicityVerdict classify(const std::vector<std::string>& caption, const LemmaList& lemmas);

/// Remote backend with rules fallback (flagged) on failure.
ToxicityVerdict classify(const std::vector<std::string>& caption, const LemmaList& lemmas,
                         AgentClient* remote);

struct Partition {
  std::vector<size_t> forget;  // indices into the corpus
  std::vector<size_t> retain;
};

/// An entry goes to the forget set iff its caption hits the lemma list.
Partition partition(const std::vector<motion::CorpusEntry>& corpus, const LemmaList& lemmas);

struct RewriteRecord {
  std::string original;
  int level = 1;
  std::string rewritten;
  bool ok = false;
  bool ineffective = false;  // client echoed the input back
};

/// Level-routed rewriting: level 1 passes through without a client call,
/// level 2 asks the client to target only the evidence spans, level 3 targets
/// the whole caption. Client failures leave the entry un-rewritten.
RewriteRecord rewrite_dispatch(const std::vector<std::string>& caption,
                               const ToxicityVerdict& verdict, AgentClient* client);

void save_rewrite_records(const std::filesystem::path& path,
                          const std::vector<RewriteRecord>& records);

}  // namespace motun::safety
