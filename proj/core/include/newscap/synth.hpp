#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newscap/corpus.hpp"
#include "newscap/taxonomy.hpp"

namespace newscap {

struct InventoryEntity {
  std::string id;                    // e.g. "PERSON_003"
  NEType type = NEType::PERSON;
  std::vector<std::string> surface;  // 1-2 tokens, globally unique
};

// Closed entity inventory shared by captions, articles and the toy KB.
// Surfaces are synthesized deterministically from the seed.
class EntityInventory {
 public:
  static EntityInventory generate(const std::map<NEType, int>& sizes, std::uint64_t seed);

  const std::vector<InventoryEntity>& entities() const { return entities_; }
  const InventoryEntity* by_id(const std::string& id) const;
  std::vector<const InventoryEntity*> of_type(NEType type) const;

 private:
  std::vector<InventoryEntity> entities_;
};

struct GeneratorConfig {
  std::size_t num_samples = 1000;
  std::map<NEType, int> inventory_sizes;           // empty -> defaults
  std::map<int, double> class_mixture;             // empty -> news_template_mixture()
  std::map<Component, std::map<NEType, double>> slot_type_weights;  // empty -> defaults
  int min_distractor_sentences = 2;
  int max_distractor_sentences = 4;
  int distractor_mentions = 2;      // article entity mentions beyond the caption's
  double unlinked_fraction = 0.3;   // distractor mentions left without entity_id
  std::size_t d_i = 32;
  double image_noise = 0.3;

  static GeneratorConfig defaults();
};

// Fixed per-entity image signature: a type-level base vector plus a
// smaller entity-specific offset, both derived from stable hashes so the
// same entity always gets the same signature.
std::vector<double> entity_signature(const std::string& entity_id, NEType type, std::size_t d_i);

// Every sample realizes exactly its drawn template class; the article
// embeds the caption's entities plus distractor sentences; the image
// feature is the sum of the caption entities' signatures plus Gaussian
// noise. Byte-identical output for identical (config, seed).
std::vector<Sample> synth_generate(const GeneratorConfig& config, std::uint64_t seed);

// The inventory a given (config, seed) pair generates with; exposed so
// downstream consumers (KB construction, evaluation) can share it.
EntityInventory synth_inventory(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace newscap
