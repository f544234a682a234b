#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "newscap/corpus.hpp"
#include "newscap/taxonomy.hpp"

namespace newscap {

using TokenSeq = std::vector<std::string>;

// ---- caption-quality metrics (rates in [0,1]; CIDEr in [0,10]) ---------------

// Corpus-level geometric mean of modified 1..4-gram precisions with
// brevity penalty; add-one smoothing on higher orders with zero matches.
double bleu4(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references);

// Mean over samples of the LCS F-measure (beta = 1.2, recall-leaning).
double rouge_l(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references);

// Mean over n = 1..4 of tf-idf n-gram cosine similarity, x10. IDF comes
// from the reference corpus (df over samples, floored at 1).
double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references);

// ---- entity extraction ---------------------------------------------------------

// Longest-match index from surface token sequences to entity identity.
class EntityIndex {
 public:
  struct Match {
    std::size_t start = 0, end = 0;
    std::string id;
    NEType type = NEType::PERSON;
  };

  void add(const TokenSeq& surface, const std::string& id, NEType type);
  // Index every annotated, linked mention in the corpus (captions and
  // articles), keyed by its surface tokens.
  static EntityIndex from_samples(const std::vector<Sample>& samples);

  std::vector<Match> extract(const TokenSeq& tokens) const;
  std::size_t size() const { return by_first_.size(); }

 private:
  struct Entry {
    TokenSeq surface;
    std::string id;
    NEType type;
  };
  std::map<std::string, std::vector<Entry>> by_first_;  // first token -> entries, longest first
};

struct NeScores {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true;  // false when nothing was generated/referenced
  bool recall_defined = true;
};

// Micro-averaged precision/recall of generated entity ids (multiset
// match) against the reference captions' linked entities.
NeScores ne_precision_recall(const std::vector<TokenSeq>& generated,
                             const std::vector<Sample>& references, const EntityIndex& index);

enum class RefComponentMode { gold, detect };

struct ComponentScores {
  std::array<double, kNumComponents> precision{};
  std::array<double, kNumComponents> recall{};
  std::array<bool, kNumComponents> precision_defined{};
  std::array<bool, kNumComponents> recall_defined{};
  double avg_precision = 0.0;
  double avg_recall = 0.0;
};

// Binary per-caption component presence, scored per component and
// averaged. Generated captions are detected via the entity index and the
// context heuristic; references use gold flags or the same detection.
ComponentScores component_precision_recall(const std::vector<TokenSeq>& generated,
                                           const std::vector<Sample>& references,
                                           const EntityIndex& index,
                                           RefComponentMode ref_mode = RefComponentMode::gold);

// ---- assembled report ------------------------------------------------------------

struct EvalReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  NeScores ne;
  ComponentScores components;
  std::size_t sample_count = 0;
  std::vector<std::string> flags;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string pretty() const;  // human-readable, rates x100
};

EvalReport evaluate(const std::vector<TokenSeq>& generated, const std::vector<Sample>& references,
                    RefComponentMode ref_mode = RefComponentMode::gold);

}  // namespace newscap
