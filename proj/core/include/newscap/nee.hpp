#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "newscap/corpus.hpp"
#include "newscap/synth.hpp"
#include "newscap/tensor.hpp"

namespace newscap {

struct KbAnchor {
  std::string entity;
  std::vector<std::string> context;
};

struct KnowledgeBase {
  std::vector<std::string> entities;
  std::vector<std::pair<std::string, std::string>> edges;  // unordered pairs
  std::vector<KbAnchor> anchors;
  std::vector<std::vector<std::string>> word_corpus;

  void validate() const;  // edges/anchors must reference known entities

  static KnowledgeBase load_json(const std::string& path);
  void save_json(const std::string& path) const;
};

struct ToyKbConfig {
  int num_entities = 100;
  int num_clusters = 5;
  int words_per_cluster = 30;
  int anchors_per_entity = 4;
  int anchor_window = 8;
  int corpus_sentences = 400;
  int sentence_len = 8;
  int intra_cluster_degree = 4;
  double cross_cluster_edge_prob = 0.02;
};

// Cluster-structured toy KB: entities in the same cluster share edges and
// anchor vocabulary, so relatedness is learnable at desk scale.
KnowledgeBase make_toy_kb(const ToyKbConfig& config, std::uint64_t seed);

// KB derived from a generated news corpus: entities are the inventory,
// edges come from caption co-occurrence, anchors are article windows
// around linked mentions, and the word corpus is the article text.
KnowledgeBase kb_from_samples(const std::vector<Sample>& samples,
                              const EntityInventory& inventory, int anchor_window = 16);

// Word and entity vectors in one d_wiki-dimensional space plus the text
// projection used by the entity predictor.
struct JointEmbeddingTable {
  int d_wiki = 0;
  std::vector<std::string> words;
  std::vector<std::string> entities;
  Tensor word_vectors;    // [|words| x d_wiki]
  Tensor entity_vectors;  // [|entities| x d_wiki]
  Tensor nep_weight;      // [d_wiki x d_wiki]
  Tensor nep_bias;        // [d_wiki]

  int word_index(const std::string& token) const;    // -1 when absent
  int entity_index(const std::string& id) const;     // -1 when absent
  void rebuild_indices();

 private:
  std::unordered_map<std::string, int> word_idx_;
  std::unordered_map<std::string, int> entity_idx_;
};

struct NeeConfig {
  int d_wiki = 300;
  int n_neg = 50;           // entity-predictor negatives
  int sg_negatives = 5;     // negatives for the three sigmoid objectives
  int window = 4;           // skip-gram window
  int epochs = 10;
  double learning_rate = 5e-3;
  double unigram_power = 0.0;  // 0 = uniform negative words; 0.75 optional
  double weight_word = 1.0, weight_graph = 1.0, weight_anchor = 1.0, weight_nep = 1.0;
};

// Projection of the mean word vector; OOV tokens contribute zeros.
std::vector<double> text_vector(const std::vector<std::string>& tokens,
                                const JointEmbeddingTable& table);

// Softmax probability of `entity` against {entity} + negatives under the
// entity predictor, max-subtracted. ContractError when entity is listed
// among the negatives.
double nep_probability(const std::string& entity, const std::vector<std::string>& tokens,
                       const std::vector<std::string>& negatives,
                       const JointEmbeddingTable& table);

// Same probability with the candidate set widened to every KB entity.
double nep_probability_full(const std::string& entity, const std::vector<std::string>& tokens,
                            const JointEmbeddingTable& table);

// Uniform draw without replacement from entities not mentioned in the
// text. Deterministic under seed.
std::vector<std::string> sample_negatives(const KnowledgeBase& kb,
                                          const std::vector<std::string>& text_entities,
                                          int n_neg, std::uint64_t seed);

struct TrainJointStats {
  // per epoch: mean word, graph, anchor, predictor losses
  std::vector<std::array<double, 4>> epoch_losses;
};

// Offline joint training of all four negative-sampled objectives with
// Adam. Deterministic under seed.
JointEmbeddingTable train_joint(const KnowledgeBase& kb, const NeeConfig& config,
                                std::uint64_t seed, TrainJointStats* stats = nullptr);

// Stored vector when the entity is present; text_vector(context) as the
// missing-entity fallback otherwise.
std::vector<double> lookup_entity(const std::optional<std::string>& entity_id,
                                  const std::vector<std::string>& context_tokens,
                                  const JointEmbeddingTable& table);

struct NEPBatchOutcome {
  std::string positive;
  std::vector<std::string> negatives;
  double loss = 0.0;
  int rank = 0;  // 1-based among n_neg + 1 candidates
};

// Scores each anchor against freshly drawn negatives; useful for both
// held-out loss tracking and ranking evaluation.
std::vector<NEPBatchOutcome> evaluate_nep(const KnowledgeBase& kb,
                                          const std::vector<KbAnchor>& anchors,
                                          const JointEmbeddingTable& table, int n_neg,
                                          std::uint64_t seed);

}  // namespace newscap
