#include "newscap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace newscap {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kMaxOrder = 4;
constexpr double kRougeBeta = 1.2;

std::map<std::string, std::size_t> ngram_counts(const TokenSeq& tokens, int n) {
  std::map<std::string, std::size_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += tokens[i + j];
    }
    counts[key]++;
  }
  return counts;
}

void check_aligned(std::size_t c, std::size_t r, const char* what) {
  if (c != r)
    throw InputError(std::string(what) + ": " + std::to_string(c) + " candidates vs " +
                     std::to_string(r) + " references");
}

}  // namespace

// ---- BLEU-4 --------------------------------------------------------------------

double bleu4(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references) {
  check_aligned(candidates.size(), references.size(), "bleu4");
  if (candidates.empty()) throw InputError("bleu4: empty corpus");
  std::array<std::size_t, kMaxOrder> matched{}, total{};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const TokenSeq& cand = candidates[s];
    cand_len += cand.size();
    // effective reference length: closest to the candidate, shorter wins ties
    std::size_t best_ref = references[s].empty() ? 0 : references[s][0].size();
    for (const auto& ref : references[s]) {
      auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(ref.size()) < diff(best_ref) ||
          (diff(ref.size()) == diff(best_ref) && ref.size() < best_ref))
        best_ref = ref.size();
    }
    ref_len += best_ref;
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto cand_counts = ngram_counts(cand, n);
      std::map<std::string, std::size_t> max_ref;
      for (const auto& ref : references[s])
        for (const auto& [key, count] : ngram_counts(ref, n))
          max_ref[key] = std::max(max_ref[key], count);
      for (const auto& [key, count] : cand_counts) {
        total[n - 1] += count;
        auto it = max_ref.find(key);
        if (it != max_ref.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_precision = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    double m = static_cast<double>(matched[n - 1]);
    double t = static_cast<double>(total[n - 1]);
    if (n == 1) {
      if (m == 0.0) return 0.0;
    } else if (m == 0.0) {
      m += 1.0;  // add-one smoothing on zero higher-order counts
      t += 1.0;
    }
    log_precision += std::log(m / t) / kMaxOrder;
  }
  double bp = cand_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_precision);
}

// ---- ROUGE-L --------------------------------------------------------------------

namespace {

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references) {
  check_aligned(candidates.size(), references.size(), "rouge_l");
  if (candidates.empty()) throw InputError("rouge_l: empty corpus");
  double sum = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const TokenSeq& cand = candidates[s];
    double best_p = 0.0, best_r = 0.0;
    for (const auto& ref : references[s]) {
      if (cand.empty() || ref.empty()) continue;
      double lcs = static_cast<double>(lcs_length(cand, ref));
      best_p = std::max(best_p, lcs / static_cast<double>(cand.size()));
      best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
    }
    double denom = best_r + kRougeBeta * kRougeBeta * best_p;
    if (denom > 0)
      sum += (1.0 + kRougeBeta * kRougeBeta) * best_r * best_p / denom;
  }
  return sum / static_cast<double>(candidates.size());
}

// ---- CIDEr ----------------------------------------------------------------------

double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references) {
  check_aligned(candidates.size(), references.size(), "cider");
  if (candidates.empty()) throw InputError("cider: empty reference corpus");
  double n_samples = static_cast<double>(candidates.size());

  // document frequency per n-gram over reference sets
  std::array<std::map<std::string, std::size_t>, kMaxOrder> df;
  for (const auto& refs : references) {
    std::array<std::map<std::string, std::size_t>, kMaxOrder> seen;
    for (const auto& ref : refs)
      for (int n = 1; n <= kMaxOrder; ++n)
        for (const auto& [key, count] : ngram_counts(ref, n)) seen[n - 1][key] = 1;
    for (int n = 0; n < kMaxOrder; ++n)
      for (const auto& [key, one] : seen[n]) df[n][key]++;
  }
  auto idf = [&](int n, const std::string& key) {
    auto it = df[n].find(key);
    double d = it == df[n].end() ? 1.0 : std::max<double>(1.0, static_cast<double>(it->second));
    return std::log(n_samples) - std::log(d);
  };

  double total = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    double score = 0.0;
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto cand_vec = ngram_counts(candidates[s], n);
      double cand_norm = 0.0;
      std::map<std::string, double> cand_tfidf;
      for (const auto& [key, count] : cand_vec) {
        double v = static_cast<double>(count) * idf(n - 1, key);
        cand_tfidf[key] = v;
        cand_norm += v * v;
      }
      cand_norm = std::sqrt(cand_norm);
      double ref_mean = 0.0;
      for (const auto& ref : references[s]) {
        auto ref_vec = ngram_counts(ref, n);
        double ref_norm = 0.0, dot = 0.0;
        for (const auto& [key, count] : ref_vec) {
          double v = static_cast<double>(count) * idf(n - 1, key);
          ref_norm += v * v;
          auto it = cand_tfidf.find(key);
          if (it != cand_tfidf.end()) dot += v * it->second;
        }
        ref_norm = std::sqrt(ref_norm);
        if (cand_norm > 0 && ref_norm > 0) ref_mean += dot / (cand_norm * ref_norm);
      }
      if (!references[s].empty())
        score += ref_mean / static_cast<double>(references[s].size());
    }
    total += score * 10.0 / kMaxOrder;
  }
  return total / n_samples;
}

// ---- entity extraction -------------------------------------------------------------

void EntityIndex::add(const TokenSeq& surface, const std::string& id, NEType type) {
  if (surface.empty()) throw InputError("entity index: empty surface");
  auto& bucket = by_first_[surface[0]];
  for (const auto& entry : bucket)
    if (entry.surface == surface) return;  // already indexed
  bucket.push_back({surface, id, type});
  std::stable_sort(bucket.begin(), bucket.end(),
                   [](const Entry& a, const Entry& b) { return a.surface.size() > b.surface.size(); });
}

EntityIndex EntityIndex::from_samples(const std::vector<Sample>& samples) {
  EntityIndex index;
  auto harvest = [&](const std::vector<std::string>& tokens,
                     const std::vector<EntityMention>& mentions) {
    for (const auto& mention : mentions) {
      if (!mention.entity_id) continue;
      TokenSeq surface(tokens.begin() + static_cast<std::ptrdiff_t>(mention.start),
                       tokens.begin() + static_cast<std::ptrdiff_t>(mention.end));
      index.add(surface, *mention.entity_id, mention.ne_type);
    }
  };
  for (const auto& sample : samples) {
    harvest(sample.caption.tokens, sample.caption.entities);
    harvest(sample.article.tokens, sample.article.entities);
  }
  return index;
}

std::vector<EntityIndex::Match> EntityIndex::extract(const TokenSeq& tokens) const {
  std::vector<Match> matches;
  std::size_t i = 0;
  while (i < tokens.size()) {
    auto bucket = by_first_.find(tokens[i]);
    bool advanced = false;
    if (bucket != by_first_.end()) {
      for (const auto& entry : bucket->second) {  // longest first
        if (i + entry.surface.size() > tokens.size()) continue;
        bool hit = true;
        for (std::size_t j = 0; j < entry.surface.size(); ++j)
          if (tokens[i + j] != entry.surface[j]) { hit = false; break; }
        if (hit) {
          matches.push_back({i, i + entry.surface.size(), entry.id, entry.type});
          i += entry.surface.size();
          advanced = true;
          break;
        }
      }
    }
    if (!advanced) ++i;
  }
  return matches;
}

// ---- NE precision/recall --------------------------------------------------------------

NeScores ne_precision_recall(const std::vector<TokenSeq>& generated,
                             const std::vector<Sample>& references, const EntityIndex& index) {
  check_aligned(generated.size(), references.size(), "ne_precision_recall");
  std::size_t matched = 0, gen_total = 0, ref_total = 0;
  for (std::size_t s = 0; s < generated.size(); ++s) {
    std::map<std::string, std::size_t> gen_ids;
    for (const auto& match : index.extract(generated[s])) gen_ids[match.id]++;
    std::map<std::string, std::size_t> ref_ids;
    for (const auto& mention : references[s].caption.entities)
      if (mention.entity_id) ref_ids[*mention.entity_id]++;
    for (const auto& [id, count] : gen_ids) {
      gen_total += count;
      auto it = ref_ids.find(id);
      if (it != ref_ids.end()) matched += std::min(count, it->second);
    }
    for (const auto& [id, count] : ref_ids) ref_total += count;
  }
  NeScores scores;
  scores.precision_defined = gen_total > 0;
  scores.recall_defined = ref_total > 0;
  scores.precision = gen_total ? static_cast<double>(matched) / static_cast<double>(gen_total) : 0.0;
  scores.recall = ref_total ? static_cast<double>(matched) / static_cast<double>(ref_total) : 0.0;
  return scores;
}

// ---- component precision/recall ---------------------------------------------------------

ComponentScores component_precision_recall(const std::vector<TokenSeq>& generated,
                                           const std::vector<Sample>& references,
                                           const EntityIndex& index, RefComponentMode ref_mode) {
  check_aligned(generated.size(), references.size(), "component_precision_recall");
  std::array<std::size_t, kNumComponents> tp{}, fp{}, fn{};
  for (std::size_t s = 0; s < generated.size(); ++s) {
    CaptionRecord gen_record;
    gen_record.tokens = generated[s];
    for (const auto& match : index.extract(generated[s])) {
      EntityMention mention;
      mention.start = match.start;
      mention.end = match.end;
      mention.ne_type = match.type;
      mention.entity_id = match.id;
      gen_record.entities.push_back(mention);
    }
    ComponentVector gen_flags = detect_components(gen_record, false);
    ComponentVector ref_flags =
        ref_mode == RefComponentMode::gold
            ? ComponentVector::from_flags(references[s].caption.gold_components)
            : detect_components(references[s].caption, false);
    for (int i = 0; i < kNumComponents; ++i) {
      bool g = gen_flags[i] == 1.0, r = ref_flags[i] == 1.0;
      if (g && r) tp[i]++;
      else if (g) fp[i]++;
      else if (r) fn[i]++;
    }
  }
  ComponentScores scores;
  for (int i = 0; i < kNumComponents; ++i) {
    std::size_t p_denom = tp[i] + fp[i], r_denom = tp[i] + fn[i];
    scores.precision_defined[i] = p_denom > 0;
    scores.recall_defined[i] = r_denom > 0;
    scores.precision[i] = p_denom ? static_cast<double>(tp[i]) / static_cast<double>(p_denom) : 0.0;
    scores.recall[i] = r_denom ? static_cast<double>(tp[i]) / static_cast<double>(r_denom) : 0.0;
    scores.avg_precision += scores.precision[i] / kNumComponents;
    scores.avg_recall += scores.recall[i] / kNumComponents;
  }
  return scores;
}

// ---- report -------------------------------------------------------------------------------

EvalReport evaluate(const std::vector<TokenSeq>& generated, const std::vector<Sample>& references,
                    RefComponentMode ref_mode) {
  check_aligned(generated.size(), references.size(), "evaluate");
  if (generated.empty()) throw InputError("evaluate: empty corpus");
  std::vector<std::vector<TokenSeq>> ref_lists;
  ref_lists.reserve(references.size());
  for (const auto& sample : references) ref_lists.push_back({sample.caption.tokens});

  EvalReport report;
  report.sample_count = generated.size();
  report.bleu4 = bleu4(generated, ref_lists);
  report.rouge_l = rouge_l(generated, ref_lists);
  report.cider = cider(generated, ref_lists);
  EntityIndex index = EntityIndex::from_samples(references);
  report.ne = ne_precision_recall(generated, references, index);
  report.components = component_precision_recall(generated, references, index, ref_mode);

  if (!report.ne.precision_defined) report.flags.push_back("ne_precision_undefined");
  if (!report.ne.recall_defined) report.flags.push_back("ne_recall_undefined");
  for (int i = 0; i < kNumComponents; ++i) {
    if (!report.components.precision_defined[i])
      report.flags.push_back(std::string("precision_undefined:") +
                             to_string(static_cast<Component>(i)));
    if (!report.components.recall_defined[i])
      report.flags.push_back(std::string("recall_undefined:") +
                             to_string(static_cast<Component>(i)));
  }
  return report;
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["bleu4"] = bleu4;
  j["rouge_l"] = rouge_l;
  j["cider"] = cider;
  j["ne"] = {{"p", ne.precision}, {"r", ne.recall}};
  ordered_json comps;
  for (int i = 0; i < kNumComponents; ++i)
    comps[to_string(static_cast<Component>(i))] = {{"p", components.precision[i]},
                                                   {"r", components.recall[i]}};
  comps["avg"] = {{"p", components.avg_precision}, {"r", components.avg_recall}};
  j["components"] = std::move(comps);
  j["n"] = sample_count;
  j["flags"] = flags;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
  EvalReport report;
  report.bleu4 = j.at("bleu4").get<double>();
  report.rouge_l = j.at("rouge_l").get<double>();
  report.cider = j.at("cider").get<double>();
  report.ne.precision = j.at("ne").at("p").get<double>();
  report.ne.recall = j.at("ne").at("r").get<double>();
  for (int i = 0; i < kNumComponents; ++i) {
    const auto& c = j.at("components").at(to_string(static_cast<Component>(i)));
    report.components.precision[i] = c.at("p").get<double>();
    report.components.recall[i] = c.at("r").get<double>();
    report.components.precision_defined[i] = true;
    report.components.recall_defined[i] = true;
  }
  report.components.avg_precision = j.at("components").at("avg").at("p").get<double>();
  report.components.avg_recall = j.at("components").at("avg").at("r").get<double>();
  report.sample_count = j.at("n").get<std::size_t>();
  report.flags = j.at("flags").get<std::vector<std::string>>();
  for (const auto& flag : report.flags) {
    for (int i = 0; i < kNumComponents; ++i) {
      std::string name = to_string(static_cast<Component>(i));
      if (flag == "precision_undefined:" + name) report.components.precision_defined[i] = false;
      if (flag == "recall_undefined:" + name) report.components.recall_defined[i] = false;
    }
    if (flag == "ne_precision_undefined") report.ne.precision_defined = false;
    if (flag == "ne_recall_undefined") report.ne.recall_defined = false;
  }
  return report;
}

std::string EvalReport::pretty() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "samples: " << sample_count << "\n";
  out << "BLEU-4: " << bleu4 * 100 << "  ROUGE-L: " << rouge_l * 100
      << "  CIDEr: " << cider * 10 << "\n";
  out << "NE  P: " << ne.precision * 100 << "  R: " << ne.recall * 100 << "\n";
  for (int i = 0; i < kNumComponents; ++i)
    out << to_string(static_cast<Component>(i)) << "  P: " << components.precision[i] * 100
        << "  R: " << components.recall[i] * 100 << "\n";
  out << "avg P: " << components.avg_precision * 100 << "  avg R: " << components.avg_recall * 100
      << "\n";
  if (!flags.empty()) {
    out << "flags:";
    for (const auto& flag : flags) out << " " << flag;
    out << "\n";
  }
  return out.str();
}

}  // namespace newscap
