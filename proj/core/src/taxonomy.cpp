#include "newscap/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "newscap/corpus.hpp"

namespace newscap {

namespace {

constexpr const char* kNETypeNames[kNumNETypes] = {
    "PERSON", "NORP", "ORG", "DATE", "TIME", "FAC", "GPE", "LOC", "PRODUCT",
    "EVENT", "ART", "LAW", "LAN", "PERCENT", "MONEY", "QUANTITY", "ORDINAL", "CARDINAL",
};

constexpr const char* kComponentNames[kNumComponents] = {"who", "when", "where", "misc", "context"};

}  // namespace

const char* to_string(NEType t) { return kNETypeNames[static_cast<std::size_t>(t)]; }
const char* to_string(Component c) { return kComponentNames[static_cast<std::size_t>(c)]; }

NEType parse_ne_type(const std::string& name) {
  for (int i = 0; i < kNumNETypes; ++i)
    if (name == kNETypeNames[i]) return static_cast<NEType>(i);
  throw ValidationError("ne_type: unknown type \"" + name + "\"");
}

const std::array<NEType, kNumNETypes>& all_ne_types() {
  static const std::array<NEType, kNumNETypes> types = [] {
    std::array<NEType, kNumNETypes> t{};
    for (int i = 0; i < kNumNETypes; ++i) t[i] = static_cast<NEType>(i);
    return t;
  }();
  return types;
}

const std::array<Component, kNumComponents>& all_components() {
  static const std::array<Component, kNumComponents> comps = {
      Component::who, Component::when, Component::where, Component::misc, Component::context};
  return comps;
}

bool ComponentVector::is_binary() const {
  return std::all_of(alpha.begin(), alpha.end(), [](double a) { return a == 0.0 || a == 1.0; });
}

bool ComponentVector::in_range() const {
  return std::all_of(alpha.begin(), alpha.end(), [](double a) { return a >= 0.0 && a <= 1.0; });
}

ComponentVector ComponentVector::binary(bool who, bool when, bool where, bool misc, bool context) {
  ComponentVector v;
  v.alpha = {who ? 1.0 : 0.0, when ? 1.0 : 0.0, where ? 1.0 : 0.0, misc ? 1.0 : 0.0,
             context ? 1.0 : 0.0};
  return v;
}

ComponentVector ComponentVector::from_flags(const std::array<bool, kNumComponents>& flags) {
  ComponentVector v;
  for (int i = 0; i < kNumComponents; ++i) v.alpha[i] = flags[i] ? 1.0 : 0.0;
  return v;
}

Component map_ne_type(NEType t) {
  switch (t) {
    case NEType::PERSON:
    case NEType::NORP:
    case NEType::ORG:
      return Component::who;
    case NEType::DATE:
    case NEType::TIME:
      return Component::when;
    case NEType::FAC:
    case NEType::GPE:
    case NEType::LOC:
      return Component::where;
    default:
      return Component::misc;
  }
}

TemplateClass template_class(const ComponentVector& v) {
  if (!v.is_binary())
    throw ContractError("template_class: component vector is not binary");
  int id = 0;
  for (int i = 0; i < kNumComponents; ++i)
    if (v.alpha[i] == 1.0) id |= 1 << i;
  return TemplateClass{id};
}

ComponentVector class_components(TemplateClass c) {
  if (c.class_id < 0 || c.class_id >= kNumTemplateClasses)
    throw ContractError("class_components: class_id " + std::to_string(c.class_id) +
                        " out of [0,32)");
  ComponentVector v;
  for (int i = 0; i < kNumComponents; ++i)
    v.alpha[i] = (c.class_id >> i) & 1 ? 1.0 : 0.0;
  return v;
}

std::string class_membership(TemplateClass c) {
  ComponentVector v = class_components(c);
  std::string out;
  for (int i = 0; i < kNumComponents; ++i) {
    if (v.alpha[i] != 1.0) continue;
    if (!out.empty()) out += "+";
    out += kComponentNames[i];
  }
  return out.empty() ? "none" : out;
}

// Version 1: the 50 most frequent English function words.
const std::vector<std::string>& stop_words() {
  static const std::vector<std::string> words = {
      "the", "of",   "and",  "a",    "to",    "in",   "is",   "it",   "that", "for",
      "on",  "with", "as",   "at",   "by",    "from", "this", "was",  "are",  "be",
      "an",  "or",   "not",  "but",  "his",   "her",  "their", "its", "they", "he",
      "she", "we",   "you",  "i",    "have",  "has",  "had",  "were", "been", "will",
      "would", "all", "there", "which", "what", "so",  "if",   "no",   "out",  "up",
  };
  return words;
}

bool is_stop_word(const std::string& token) {
  static const std::unordered_set<std::string> set(stop_words().begin(), stop_words().end());
  std::string lower(token.size(), '\0');
  std::transform(token.begin(), token.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return set.count(lower) > 0;
}

ComponentVector detect_components(const CaptionRecord& caption, bool use_gold_context,
                                  const ContextHeuristic& heuristic) {
  ComponentVector v;
  for (const auto& mention : caption.entities) {
    Component c = map_ne_type(mention.ne_type);
    v[c] = 1.0;
  }
  if (use_gold_context) {
    v[Component::context] = caption.gold_components[static_cast<int>(Component::context)] ? 1.0 : 0.0;
  } else {
    std::vector<bool> covered(caption.tokens.size(), false);
    for (const auto& mention : caption.entities)
      for (std::size_t i = mention.start; i < mention.end; ++i) covered[i] = true;
    int content = 0;
    for (std::size_t i = 0; i < caption.tokens.size(); ++i)
      if (!covered[i] && !is_stop_word(caption.tokens[i])) ++content;
    v[Component::context] = content >= heuristic.min_content_tokens ? 1.0 : 0.0;
  }
  return v;
}

std::vector<ClassStat> class_distribution(const std::vector<Sample>& corpus) {
  if (corpus.empty()) throw InputError("class_distribution: empty corpus");
  std::array<std::size_t, kNumTemplateClasses> counts{};
  for (const auto& sample : corpus) {
    ComponentVector v = ComponentVector::from_flags(sample.caption.gold_components);
    counts[template_class(v).class_id]++;
  }
  std::vector<ClassStat> stats(kNumTemplateClasses);
  double inv = 100.0 / static_cast<double>(corpus.size());
  for (int i = 0; i < kNumTemplateClasses; ++i) {
    stats[i].cls = TemplateClass{i};
    stats[i].count = counts[i];
    stats[i].percent = static_cast<double>(counts[i]) * inv;
  }
  std::stable_sort(stats.begin(), stats.end(), [](const ClassStat& a, const ClassStat& b) {
    if (a.percent != b.percent) return a.percent > b.percent;
    return a.cls.class_id < b.cls.class_id;
  });
  return stats;
}

std::array<double, kNumComponents> component_frequencies(const std::vector<Sample>& corpus) {
  if (corpus.empty()) throw InputError("component_frequencies: empty corpus");
  std::array<double, kNumComponents> freq{};
  for (const auto& sample : corpus)
    for (int i = 0; i < kNumComponents; ++i)
      if (sample.caption.gold_components[i]) freq[i] += 1.0;
  for (double& f : freq) f *= 100.0 / static_cast<double>(corpus.size());
  return freq;
}

std::array<double, kNumComponents> marginals_from_distribution(const std::vector<ClassStat>& stats) {
  std::array<double, kNumComponents> freq{};
  for (const auto& stat : stats) {
    ComponentVector v = class_components(stat.cls);
    for (int i = 0; i < kNumComponents; ++i)
      if (v.alpha[i] == 1.0) freq[i] += stat.percent;
  }
  return freq;
}

const std::map<int, double>& news_template_mixture() {
  // 15 classes covering >= 2% each of a large news-caption corpus,
  // renormalized to sum to 1. Bit order: who=1, when=2, where=4,
  // misc=8, context=16.
  static const std::map<int, double> mixture = [] {
    const std::pair<int, double> raw[] = {
        {15, 15.2}, {1, 4.4},  {5, 4.2},  {7, 3.5},  {9, 2.8},
        {3, 2.6},   {17, 13.1}, {21, 12.7}, {19, 7.7}, {25, 7.3},
        {31, 6.8},  {29, 5.3}, {27, 5.1}, {20, 2.4}, {16, 2.2},
    };
    double total = 0.0;
    for (const auto& [cls, pct] : raw) total += pct;
    std::map<int, double> m;
    for (const auto& [cls, pct] : raw) m[cls] = pct / total;
    return m;
  }();
  return mixture;
}

}  // namespace newscap
