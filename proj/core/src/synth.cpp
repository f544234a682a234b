#include "newscap/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace newscap {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const std::vector<std::string>& syllables() {
  static const std::vector<std::string> s = {
      "al",  "ber", "cor",  "dan", "el",   "far", "gon", "hul", "ir",  "jas", "kor", "lan", "mer",
      "nor", "ost", "pra", "quil", "ras", "sten", "tor", "ul",  "ver", "wyn", "xan", "yor", "zel"};
  return s;
}

std::string capitalize(std::string word) {
  if (!word.empty()) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  return word;
}

// Unique proper-noun-ish stem; retries on collision.
std::string make_name(std::mt19937_64& rng, std::set<std::string>& used) {
  const auto& syl = syllables();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    int parts = 2 + static_cast<int>(rng() % 2);
    std::string name;
    for (int i = 0; i < parts; ++i) name += syl[rng() % syl.size()];
    name = capitalize(name);
    if (used.insert(name).second) return name;
  }
  throw InputError("inventory: name pool exhausted");
}

int make_number(std::mt19937_64& rng, std::set<int>& used) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    int n = 100 + static_cast<int>(rng() % 900);
    if (used.insert(n).second) return n;
  }
  throw InputError("inventory: number pool exhausted");
}

const char* pick(std::mt19937_64& rng, std::initializer_list<const char*> options) {
  return *(options.begin() + rng() % options.size());
}

std::vector<std::string> make_surface(NEType type, std::mt19937_64& rng,
                                      std::set<std::string>& names, std::set<int>& numbers,
                                      std::set<std::string>& ordinals) {
  switch (type) {
    case NEType::PERSON:
      return {make_name(rng, names), make_name(rng, names)};
    case NEType::NORP:
      return {make_name(rng, names) + "ian"};
    case NEType::ORG:
      return {make_name(rng, names),
              pick(rng, {"Corporation", "Institute", "Agency", "Council", "Guild"})};
    case NEType::DATE: {
      static const char* months[] = {"January", "February", "March",     "April",    "May",
                                     "June",    "July",     "August",    "September", "October",
                                     "November", "December"};
      // negative keys in the shared number set so (month,day) pairs are
      // unique without colliding with plain numeric surfaces
      for (int attempt = 0; attempt < 10000; ++attempt) {
        int m = static_cast<int>(rng() % 12);
        int d = 1 + static_cast<int>(rng() % 28);
        if (numbers.insert(-(m * 100 + d)).second) return {months[m], std::to_string(d)};
      }
      throw InputError("inventory: date pool exhausted");
    }
    case NEType::TIME: {
      for (int attempt = 0; attempt < 10000; ++attempt) {
        int h = 1 + static_cast<int>(rng() % 12);
        int m = static_cast<int>(rng() % 60);
        if (numbers.insert(-(10000 + h * 100 + m)).second) {
          std::ostringstream out;
          out << h << ":" << (m < 10 ? "0" : "") << m;
          return {out.str(), (rng() % 2) ? "pm" : "am"};
        }
      }
      throw InputError("inventory: time pool exhausted");
    }
    case NEType::FAC:
      return {make_name(rng, names), pick(rng, {"Bridge", "Tower", "Station", "Arena", "Hall"})};
    case NEType::GPE:
      return {make_name(rng, names) + pick(rng, {"burg", "ton", "stad", "ville"})};
    case NEType::LOC:
      return {make_name(rng, names),
              pick(rng, {"River", "Valley", "Mountains", "Coast", "Forest"})};
    case NEType::PRODUCT:
      return {make_name(rng, names), pick(rng, {"Sedan", "Drone", "Console", "Turbine", "Lens"})};
    case NEType::EVENT:
      return {make_name(rng, names), pick(rng, {"Summit", "Regatta", "Derby", "Expo", "Gala"})};
    case NEType::ART:
      return {make_name(rng, names), pick(rng, {"Sonata", "Mural", "Ballad", "Novella", "Fresco"})};
    case NEType::LAW:
      return {make_name(rng, names), pick(rng, {"Act", "Accord", "Statute", "Treaty", "Charter"})};
    case NEType::LAN:
      return {make_name(rng, names) + "ese"};
    case NEType::PERCENT:
      return {std::to_string(make_number(rng, numbers)), "percent"};
    case NEType::MONEY:
      return {"$" + std::to_string(make_number(rng, numbers)), "million"};
    case NEType::QUANTITY:
      return {std::to_string(make_number(rng, numbers)),
              pick(rng, {"meters", "tons", "liters", "acres", "hectares"})};
    case NEType::ORDINAL: {
      static const char* words[] = {"first",      "second",    "third",       "fourth",
                                    "fifth",      "sixth",     "seventh",     "eighth",
                                    "ninth",      "tenth",     "eleventh",    "twelfth",
                                    "thirteenth", "fourteenth", "fifteenth",  "sixteenth",
                                    "seventeenth", "eighteenth", "nineteenth", "twentieth"};
      for (int attempt = 0; attempt < 1000; ++attempt) {
        const char* w = words[rng() % 20];
        if (ordinals.insert(w).second) return {w};
      }
      throw InputError("inventory: ordinal pool exhausted (max 20 entities)");
    }
    case NEType::CARDINAL:
      return {std::to_string(make_number(rng, numbers))};
  }
  throw ContractError("inventory: unhandled type");
}

std::map<NEType, int> default_inventory_sizes() {
  return {
      {NEType::PERSON, 12}, {NEType::NORP, 4},    {NEType::ORG, 8},      {NEType::DATE, 10},
      {NEType::TIME, 4},    {NEType::FAC, 6},     {NEType::GPE, 8},      {NEType::LOC, 6},
      {NEType::PRODUCT, 4}, {NEType::EVENT, 4},   {NEType::ART, 4},      {NEType::LAW, 4},
      {NEType::LAN, 3},     {NEType::PERCENT, 4}, {NEType::MONEY, 4},    {NEType::QUANTITY, 4},
      {NEType::ORDINAL, 4}, {NEType::CARDINAL, 4},
  };
}

std::map<Component, std::map<NEType, double>> default_slot_weights() {
  return {
      {Component::who, {{NEType::PERSON, 0.7}, {NEType::ORG, 0.2}, {NEType::NORP, 0.1}}},
      {Component::when, {{NEType::DATE, 0.8}, {NEType::TIME, 0.2}}},
      {Component::where, {{NEType::GPE, 0.5}, {NEType::FAC, 0.25}, {NEType::LOC, 0.25}}},
      {Component::misc,
       {{NEType::PRODUCT, 0.15}, {NEType::EVENT, 0.15}, {NEType::ART, 0.1}, {NEType::LAW, 0.1},
        {NEType::LAN, 0.05}, {NEType::PERCENT, 0.1}, {NEType::MONEY, 0.15},
        {NEType::QUANTITY, 0.1}, {NEType::ORDINAL, 0.05}, {NEType::CARDINAL, 0.05}}},
  };
}

const std::vector<std::string>& clause_verbs() {
  static const std::vector<std::string> v = {"unveiled",   "inspected", "announced", "toured",
                                             "celebrated", "denounced", "presented", "examined"};
  return v;
}

const std::vector<std::vector<std::string>>& clause_objects() {
  static const std::vector<std::vector<std::string>> v = {
      {"the", "restored", "sculpture"},        {"the", "flood", "damage"},
      {"a", "new", "exhibition", "wing"},      {"the", "expanded", "transit", "line"},
      {"the", "renovated", "concert", "hall"}, {"a", "controversial", "zoning", "proposal"},
      {"the", "annual", "harvest", "parade"},  {"the", "updated", "safety", "code"},
  };
  return v;
}

const std::vector<std::string>& clause_subjects() {
  static const std::vector<std::string> v = {"Workers", "Crews", "Residents", "Organizers",
                                             "Delegates"};
  return v;
}

const std::vector<std::string>& filler_pool() {
  static const std::vector<std::string> v = {
      "officials", "meeting", "budget",   "season",  "reports",   "gallery", "weather",
      "traffic",   "morning", "evening",  "crowd",   "street",    "music",   "garden",
      "afternoon", "windows", "library",  "harbor",  "market",    "bakery",  "commuters",
      "lanterns",  "vendors", "sidewalk", "benches", "fountains", "pigeons", "awnings",
  };
  return v;
}

// Per-component glue that introduces an entity in a caption or the key
// article sentence. All glue tokens are stop words.
void append_glue_and_surface(Component slot, const std::vector<std::string>& surface,
                             std::vector<std::string>& tokens,
                             std::vector<EntityMention>& mentions, NEType type,
                             const std::string& id) {
  switch (slot) {
    case Component::misc:
      tokens.push_back("with");
      tokens.push_back("the");
      break;
    case Component::where:
      tokens.push_back("in");
      break;
    case Component::when:
      tokens.push_back("on");
      break;
    default:
      break;
  }
  EntityMention mention;
  mention.start = tokens.size();
  mention.end = tokens.size() + surface.size();
  mention.ne_type = type;
  mention.entity_id = id;
  tokens.insert(tokens.end(), surface.begin(), surface.end());
  mentions.push_back(mention);
}

template <typename T>
const T& weighted_pick(const std::vector<std::pair<T, double>>& options, double roll) {
  double acc = 0.0;
  for (const auto& [value, weight] : options) {
    acc += weight;
    if (roll < acc) return value;
  }
  return options.back().first;
}

}  // namespace

// ---- EntityInventory ---------------------------------------------------------

EntityInventory EntityInventory::generate(const std::map<NEType, int>& sizes, std::uint64_t seed) {
  EntityInventory inventory;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::set<std::string> names;
  std::set<int> numbers;
  std::set<std::string> ordinals;
  for (NEType type : all_ne_types()) {
    auto it = sizes.find(type);
    int count = it == sizes.end() ? 0 : it->second;
    if (count < 0) throw ConfigError("inventory: negative size for " + std::string(to_string(type)));
    for (int i = 0; i < count; ++i) {
      InventoryEntity entity;
      std::ostringstream id;
      id << to_string(type) << "_" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
      entity.id = id.str();
      entity.type = type;
      entity.surface = make_surface(type, rng, names, numbers, ordinals);
      inventory.entities_.push_back(std::move(entity));
    }
  }
  return inventory;
}

const InventoryEntity* EntityInventory::by_id(const std::string& id) const {
  for (const auto& e : entities_)
    if (e.id == id) return &e;
  return nullptr;
}

std::vector<const InventoryEntity*> EntityInventory::of_type(NEType type) const {
  std::vector<const InventoryEntity*> out;
  for (const auto& e : entities_)
    if (e.type == type) out.push_back(&e);
  return out;
}

// ---- config ------------------------------------------------------------------

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig config;
  config.inventory_sizes = default_inventory_sizes();
  config.class_mixture = news_template_mixture();
  config.slot_type_weights = default_slot_weights();
  return config;
}

namespace {

GeneratorConfig resolve(const GeneratorConfig& raw) {
  GeneratorConfig config = raw;
  if (config.inventory_sizes.empty()) config.inventory_sizes = default_inventory_sizes();
  if (config.class_mixture.empty()) config.class_mixture = news_template_mixture();
  if (config.slot_type_weights.empty()) config.slot_type_weights = default_slot_weights();
  double total = 0.0;
  for (const auto& [cls, weight] : config.class_mixture) {
    if (cls < 0 || cls >= kNumTemplateClasses)
      throw ConfigError("class_mixture: class id " + std::to_string(cls) + " out of [0,32)");
    if (weight < 0) throw ConfigError("class_mixture: negative weight");
    total += weight;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ConfigError("class_mixture: weights sum to " + std::to_string(total) + ", expected 1");
  if (config.d_i == 0) throw ConfigError("d_i: must be positive");
  if (config.min_distractor_sentences < 0 ||
      config.max_distractor_sentences < config.min_distractor_sentences)
    throw ConfigError("distractor sentence range invalid");
  return config;
}

}  // namespace

std::vector<double> entity_signature(const std::string& entity_id, NEType type, std::size_t d_i) {
  std::vector<double> sig(d_i);
  std::mt19937_64 type_rng(fnv1a(std::string("type:") + to_string(type)));
  std::mt19937_64 id_rng(fnv1a(std::string("entity:") + entity_id));
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < d_i; ++i) sig[i] = unit(type_rng);
  for (std::size_t i = 0; i < d_i; ++i) sig[i] += 0.5 * unit(id_rng);
  return sig;
}

EntityInventory synth_inventory(const GeneratorConfig& raw, std::uint64_t seed) {
  GeneratorConfig config = resolve(raw);
  return EntityInventory::generate(config.inventory_sizes, seed);
}

// ---- generation ----------------------------------------------------------------

namespace {

struct SlotFill {
  Component slot;
  const InventoryEntity* entity;
};

std::vector<std::string> make_filler_sentence(std::mt19937_64& rng) {
  const auto& pool = filler_pool();
  std::vector<std::string> tokens;
  tokens.push_back("the");
  int words = 5 + static_cast<int>(rng() % 5);
  for (int i = 0; i < words; ++i) tokens.push_back(pool[rng() % pool.size()]);
  tokens.push_back(".");
  return tokens;
}

}  // namespace

std::vector<Sample> synth_generate(const GeneratorConfig& raw, std::uint64_t seed) {
  GeneratorConfig config = resolve(raw);
  EntityInventory inventory = EntityInventory::generate(config.inventory_sizes, seed);

  // mixture flattened in class-id order for a deterministic scan
  std::vector<std::pair<int, double>> mixture(config.class_mixture.begin(),
                                              config.class_mixture.end());
  std::map<Component, std::vector<std::pair<NEType, double>>> slot_pools;
  for (const auto& [slot, weights] : config.slot_type_weights) {
    auto& pool = slot_pools[slot];
    for (const auto& [type, weight] : weights) {
      if (weight <= 0) continue;
      if (inventory.of_type(type).empty())
        throw ConfigError(std::string("slot_type_weights: inventory has no ") + to_string(type) +
                          " entities");
      pool.emplace_back(type, weight);
    }
    double total = 0.0;
    for (auto& [type, weight] : pool) total += weight;
    for (auto& [type, weight] : pool) weight /= total;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Sample> samples;
  samples.reserve(config.num_samples);
  for (std::size_t index = 0; index < config.num_samples; ++index) {
    int class_id = weighted_pick(mixture, unit(rng));
    ComponentVector active = class_components(TemplateClass{class_id});

    // one entity per active NE-backed slot
    std::vector<SlotFill> fills;
    for (Component slot : {Component::who, Component::when, Component::where, Component::misc}) {
      if (active[slot] != 1.0) continue;
      NEType type = weighted_pick(slot_pools.at(slot), unit(rng));
      auto candidates = inventory.of_type(type);
      fills.push_back({slot, candidates[rng() % candidates.size()]});
    }
    bool has_context = active[Component::context] == 1.0;
    bool has_who = active[Component::who] == 1.0;

    // ---- caption ----
    CaptionRecord caption;
    for (const auto& fill : fills) {
      if (fill.slot != Component::who) continue;
      append_glue_and_surface(Component::who, fill.entity->surface, caption.tokens,
                              caption.entities, fill.entity->type, fill.entity->id);
    }
    std::vector<std::string> clause;
    if (has_context) {
      if (!has_who) clause.push_back(clause_subjects()[rng() % clause_subjects().size()]);
      clause.push_back(clause_verbs()[rng() % clause_verbs().size()]);
      const auto& object = clause_objects()[rng() % clause_objects().size()];
      clause.insert(clause.end(), object.begin(), object.end());
      caption.tokens.insert(caption.tokens.end(), clause.begin(), clause.end());
    }
    for (Component slot : {Component::misc, Component::where, Component::when}) {
      for (const auto& fill : fills) {
        if (fill.slot != slot) continue;
        append_glue_and_surface(slot, fill.entity->surface, caption.tokens, caption.entities,
                                fill.entity->type, fill.entity->id);
      }
    }
    if (caption.tokens.empty()) caption.tokens = {"a", "scene"};
    for (int i = 0; i < kNumComponents; ++i) caption.gold_components[i] = active[i] == 1.0;

    // ---- article ----
    Article article;
    std::ostringstream id;
    id << "s" << seed << "_" << index;
    article.id = id.str();

    std::vector<std::string> key;
    std::vector<EntityMention> key_mentions;
    if (has_who) {
      for (const auto& fill : fills)
        if (fill.slot == Component::who)
          append_glue_and_surface(Component::who, fill.entity->surface, key, key_mentions,
                                  fill.entity->type, fill.entity->id);
    } else {
      key.push_back("the");
      key.push_back("scene");
    }
    if (has_context) {
      // the caption's clause, minus its standalone subject
      std::size_t skip = (!has_who) ? 1 : 0;
      key.insert(key.end(), clause.begin() + skip, clause.end());
    } else {
      key.push_back("was");
      key.push_back("recorded");
    }
    for (Component slot : {Component::misc, Component::where, Component::when}) {
      for (const auto& fill : fills) {
        if (fill.slot != slot) continue;
        append_glue_and_surface(slot, fill.entity->surface, key, key_mentions, fill.entity->type,
                                fill.entity->id);
      }
    }
    key.push_back(".");

    // distractor sentences, some carrying off-caption entity mentions
    int sentence_count =
        config.min_distractor_sentences +
        (config.max_distractor_sentences > config.min_distractor_sentences
             ? static_cast<int>(rng() % (config.max_distractor_sentences -
                                         config.min_distractor_sentences + 1))
             : 0);
    std::vector<std::vector<std::string>> sentences;
    std::vector<std::vector<EntityMention>> sentence_mentions;
    for (int s = 0; s < sentence_count; ++s) {
      sentences.push_back(make_filler_sentence(rng));
      sentence_mentions.emplace_back();
    }
    std::set<std::string> caption_ids;
    for (const auto& fill : fills) caption_ids.insert(fill.entity->id);
    const auto& all_entities = inventory.entities();
    for (int d = 0; d < config.distractor_mentions && sentence_count > 0; ++d) {
      const InventoryEntity* pickent = &all_entities[rng() % all_entities.size()];
      bool unlinked = unit(rng) < config.unlinked_fraction;
      std::size_t si = rng() % sentences.size();
      if (caption_ids.count(pickent->id)) continue;   // keep distractors off-caption
      if (!sentence_mentions[si].empty()) continue;   // one mention per sentence
      auto& sentence = sentences[si];
      std::size_t pos = 1 + rng() % (sentence.size() - 1);  // after "the", before "."
      EntityMention mention;
      mention.start = pos;
      mention.end = pos + pickent->surface.size();
      mention.ne_type = pickent->type;
      if (!unlinked) mention.entity_id = pickent->id;
      sentence.insert(sentence.begin() + static_cast<std::ptrdiff_t>(pos),
                      pickent->surface.begin(), pickent->surface.end());
      sentence_mentions[si].push_back(mention);
    }

    // key sentence at a deterministic random position
    std::size_t key_pos = sentence_count > 0 ? rng() % (sentences.size() + 1) : 0;
    std::size_t offset = 0;
    auto flush_sentence = [&](const std::vector<std::string>& tokens,
                              const std::vector<EntityMention>& mentions) {
      for (const auto& m : mentions) {
        EntityMention shifted = m;
        shifted.start += offset;
        shifted.end += offset;
        article.entities.push_back(shifted);
      }
      article.tokens.insert(article.tokens.end(), tokens.begin(), tokens.end());
      offset += tokens.size();
    };
    for (std::size_t s = 0; s <= sentences.size(); ++s) {
      if (s == key_pos) flush_sentence(key, key_mentions);
      if (s < sentences.size()) flush_sentence(sentences[s], sentence_mentions[s]);
    }

    // ---- image ----
    std::vector<double> image(config.d_i, 0.0);
    for (const auto& fill : fills) {
      std::vector<double> sig = entity_signature(fill.entity->id, fill.entity->type, config.d_i);
      for (std::size_t i = 0; i < config.d_i; ++i) image[i] += sig[i];
    }
    for (std::size_t i = 0; i < config.d_i; ++i) image[i] += config.image_noise * gauss(rng);

    Sample sample;
    sample.article = std::move(article);
    sample.caption = std::move(caption);
    sample.image_feature = std::move(image);
    validate_sample(sample, config.d_i);
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace newscap
