#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "newscap/errors.hpp"
#include "newscap/taxonomy.hpp"

namespace newscap {

// Token span [start, end) over the host text, typed by the NE taxonomy.
// entity_id is absent for unlinked mentions.
struct EntityMention {
  std::size_t start = 0;
  std::size_t end = 0;
  NEType ne_type = NEType::PERSON;
  std::optional<std::string> entity_id;

  bool operator==(const EntityMention&) const = default;
};

struct Article {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<EntityMention> entities;

  bool operator==(const Article&) const = default;
};

struct CaptionRecord {
  std::vector<std::string> tokens;
  std::vector<EntityMention> entities;
  std::array<bool, kNumComponents> gold_components{};

  bool operator==(const CaptionRecord&) const = default;
};

struct Sample {
  Article article;
  std::vector<double> image_feature;
  CaptionRecord caption;

  bool operator==(const Sample&) const = default;
};

// Throws ValidationError naming the offending field. expected_d_i == 0
// skips the image-feature length check.
void validate_sample(const Sample& sample, std::size_t expected_d_i = 0);

// Whitespace split with terminal punctuation detached into its own
// token. Case is preserved. Abbreviation-like tokens ("Ms.", "U.S.")
// keep their trailing period.
std::vector<std::string> tokenize(const std::string& text);
std::string detokenize(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kBeginId = 1;
  static constexpr int kEndId = 2;
  static constexpr int kUnknownId = 3;

  Vocabulary();

  int id_of(const std::string& token) const;  // kUnknownId for OOV
  const std::string& token_of(int id) const;  // IndexError when out of range
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // Tokens with frequency >= min_count, ordered by (frequency desc,
  // token asc) after the reserved symbols.
  static Vocabulary build(const std::vector<std::vector<std::string>>& texts,
                          std::size_t min_count);
  static Vocabulary build(const std::vector<Sample>& corpus, std::size_t min_count);

  // Reconstructs a vocabulary from an already-ordered token list
  // (reserved symbols first), as stored in checkpoints.
  static Vocabulary from_ordered_tokens(const std::vector<std::string>& tokens);

 private:
  void push(const std::string& token);
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// JSONL persistence. One object per line, UTF-8, LF line endings.
std::vector<Sample> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Sample>& samples, const std::string& path);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  std::vector<Sample> train, validation, test;
};

// Disjoint, exhaustive, deterministic under seed.
CorpusSplit split(const std::vector<Sample>& samples, const SplitRatios& ratios,
                  std::uint64_t seed);

}  // namespace newscap
