#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newscap/errors.hpp"

namespace newscap {

struct CaptionRecord;
struct Sample;

// Closed 18-type named-entity taxonomy. Serialized names are the exact
// uppercase strings below.
enum class NEType : std::uint8_t {
  PERSON, NORP, ORG, DATE, TIME, FAC, GPE, LOC, PRODUCT,
  EVENT, ART, LAW, LAN, PERCENT, MONEY, QUANTITY, ORDINAL, CARDINAL,
};
inline constexpr int kNumNETypes = 18;

const char* to_string(NEType t);
NEType parse_ne_type(const std::string& name);  // ValidationError on anything else
const std::array<NEType, kNumNETypes>& all_ne_types();

// The five caption components, in the fixed order used everywhere alpha
// is indexed.
enum class Component : std::uint8_t { who = 0, when = 1, where = 2, misc = 3, context = 4 };
inline constexpr int kNumComponents = 5;

const char* to_string(Component c);
const std::array<Component, kNumComponents>& all_components();

// 5-slot weight/probability vector over {who, when, where, misc, context}.
struct ComponentVector {
  std::array<double, kNumComponents> alpha{};

  double& operator[](Component c) { return alpha[static_cast<std::size_t>(c)]; }
  double operator[](Component c) const { return alpha[static_cast<std::size_t>(c)]; }
  double& operator[](std::size_t i) { return alpha[i]; }
  double operator[](std::size_t i) const { return alpha[i]; }

  bool is_binary() const;
  bool in_range() const;  // every slot in [0,1]
  bool operator==(const ComponentVector&) const = default;

  static ComponentVector binary(bool who, bool when, bool where, bool misc, bool context);
  static ComponentVector from_flags(const std::array<bool, kNumComponents>& flags);
};

// One of the 2^5 template classes; bit i of class_id is component i.
struct TemplateClass {
  int class_id = 0;
  bool operator==(const TemplateClass&) const = default;
};
inline constexpr int kNumTemplateClasses = 32;

Component map_ne_type(NEType t);

TemplateClass template_class(const ComponentVector& v);  // ContractError if non-binary
ComponentVector class_components(TemplateClass c);
std::string class_membership(TemplateClass c);  // e.g. "who+where+context", "none"

// Fixed function-word list used by the context heuristic. Matching is
// case-insensitive.
inline constexpr int kStopWordsVersion = 1;
const std::vector<std::string>& stop_words();
bool is_stop_word(const std::string& token);

struct ContextHeuristic {
  int min_content_tokens = 3;
};

// who/when/where/misc are set iff some caption entity maps to them.
// context comes from the gold flag when use_gold_context, else from the
// heuristic: >= min_content_tokens tokens outside all entity spans and
// not in the stop-word list.
ComponentVector detect_components(const CaptionRecord& caption, bool use_gold_context,
                                  const ContextHeuristic& heuristic = {});

struct ClassStat {
  TemplateClass cls;
  std::size_t count = 0;
  double percent = 0.0;
};

// All 32 classes, sorted by percent descending (class_id ascending on
// ties); percentages sum to 100.
std::vector<ClassStat> class_distribution(const std::vector<Sample>& corpus);

// Per-component marginal presence rates, in percent.
std::array<double, kNumComponents> component_frequencies(const std::vector<Sample>& corpus);
std::array<double, kNumComponents> marginals_from_distribution(const std::vector<ClassStat>& stats);

// Template-class mixture measured on a large news-caption corpus: the 15
// classes that each cover at least 2% of captions, renormalized to sum
// to 1. Keyed by class_id.
const std::map<int, double>& news_template_mixture();

}  // namespace newscap
