#include "newscap/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

namespace newscap {

namespace {

using ordered_json = nlohmann::ordered_json;

bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

// "Ms." / "Dr." / "U.S." style tokens keep their period.
bool keeps_trailing_period(const std::string& token) {
  if (token.size() < 2 || token.back() != '.') return false;
  std::string prefix = token.substr(0, token.size() - 1);
  if (prefix.find('.') != std::string::npos) return true;  // internal periods
  if (prefix.size() > 3) return false;
  if (!std::isupper(static_cast<unsigned char>(prefix[0]))) return false;
  return std::all_of(prefix.begin(), prefix.end(),
                     [](unsigned char c) { return std::isalpha(c); });
}

void emit_token(const std::string& word, std::vector<std::string>& out) {
  std::string body = word;
  std::vector<std::string> tail;
  while (body.size() > 1 && is_terminal_punct(body.back())) {
    if (body.back() == '.' && keeps_trailing_period(body)) break;
    tail.push_back(std::string(1, body.back()));
    body.pop_back();
  }
  out.push_back(body);
  out.insert(out.end(), tail.rbegin(), tail.rend());
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!word.empty()) {
        emit_token(word, out);
        word.clear();
      }
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) emit_token(word, out);
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- validation ------------------------------------------------------------

namespace {

void check_spans(const std::vector<EntityMention>& entities, std::size_t token_count,
                 const std::string& field, bool forbid_overlap) {
  std::vector<bool> covered(token_count, false);
  for (const auto& mention : entities) {
    if (mention.start >= mention.end)
      throw ValidationError(field + ": empty or inverted span [" + std::to_string(mention.start) +
                            "," + std::to_string(mention.end) + ")");
    if (mention.end > token_count)
      throw ValidationError(field + ": span end " + std::to_string(mention.end) +
                            " exceeds token count " + std::to_string(token_count));
    if (mention.entity_id && mention.entity_id->empty())
      throw ValidationError(field + ": empty entity_id");
    if (forbid_overlap) {
      for (std::size_t i = mention.start; i < mention.end; ++i) {
        if (covered[i])
          throw ValidationError(field + ": overlapping spans at token " + std::to_string(i));
        covered[i] = true;
      }
    }
  }
}

}  // namespace

void validate_sample(const Sample& sample, std::size_t expected_d_i) {
  if (sample.article.tokens.empty()) throw ValidationError("article_tokens: empty");
  check_spans(sample.article.entities, sample.article.tokens.size(), "article_entities", true);
  check_spans(sample.caption.entities, sample.caption.tokens.size(), "caption_entities", false);
  if (expected_d_i != 0 && sample.image_feature.size() != expected_d_i)
    throw ValidationError("image_feature: length " + std::to_string(sample.image_feature.size()) +
                          " does not match configured d_I " + std::to_string(expected_d_i));
  // who/when/where/misc must agree with the mapped caption entity types.
  std::array<bool, kNumComponents> derived{};
  for (const auto& mention : sample.caption.entities)
    derived[static_cast<int>(map_ne_type(mention.ne_type))] = true;
  for (int i = 0; i < kNumComponents - 1; ++i) {
    if (derived[i] != sample.caption.gold_components[i])
      throw ValidationError(std::string("gold_components: ") +
                            to_string(static_cast<Component>(i)) +
                            " inconsistent with caption entity types");
  }
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
  push("<pad>");
  push("<s>");
  push("</s>");
  push("<unk>");
}

void Vocabulary::push(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw IndexError("vocabulary: id " + std::to_string(id) + " out of " +
                     std::to_string(id_to_token_.size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token_of(id));
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& texts,
                             std::size_t min_count) {
  if (texts.empty()) throw InputError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (const auto& token : text) counts[token]++;
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [token, count] : ranked)
    if (count >= min_count) vocab.push(token);
  return vocab;
}

Vocabulary Vocabulary::build(const std::vector<Sample>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  std::vector<std::vector<std::string>> texts;
  texts.reserve(corpus.size() * 2);
  for (const auto& sample : corpus) {
    texts.push_back(sample.article.tokens);
    texts.push_back(sample.caption.tokens);
  }
  return build(texts, min_count);
}

Vocabulary Vocabulary::from_ordered_tokens(const std::vector<std::string>& tokens) {
  Vocabulary vocab;
  if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<s>" || tokens[2] != "</s>" ||
      tokens[3] != "<unk>")
    throw ValidationError("vocabulary: ordered token list missing reserved symbols");
  for (std::size_t i = 4; i < tokens.size(); ++i) vocab.push(tokens[i]);
  return vocab;
}

// ---- JSONL ------------------------------------------------------------------

namespace {

ordered_json mention_to_json(const EntityMention& mention) {
  ordered_json j;
  j["start"] = mention.start;
  j["end"] = mention.end;
  j["ne_type"] = to_string(mention.ne_type);
  if (mention.entity_id)
    j["entity_id"] = *mention.entity_id;
  else
    j["entity_id"] = nullptr;
  return j;
}

EntityMention mention_from_json(const ordered_json& j) {
  EntityMention mention;
  mention.start = j.at("start").get<std::size_t>();
  mention.end = j.at("end").get<std::size_t>();
  mention.ne_type = parse_ne_type(j.at("ne_type").get<std::string>());
  if (!j.at("entity_id").is_null()) mention.entity_id = j.at("entity_id").get<std::string>();
  return mention;
}

}  // namespace

void save_jsonl(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_jsonl: cannot open " + path + " for writing");
  for (const auto& sample : samples) {
    ordered_json j;
    j["id"] = sample.article.id;
    j["article_tokens"] = sample.article.tokens;
    ordered_json art_entities = ordered_json::array();
    for (const auto& m : sample.article.entities) art_entities.push_back(mention_to_json(m));
    j["article_entities"] = std::move(art_entities);
    j["image_feature"] = sample.image_feature;
    j["caption_tokens"] = sample.caption.tokens;
    ordered_json cap_entities = ordered_json::array();
    for (const auto& m : sample.caption.entities) cap_entities.push_back(mention_to_json(m));
    j["caption_entities"] = std::move(cap_entities);
    std::vector<int> flags(kNumComponents);
    for (int i = 0; i < kNumComponents; ++i) flags[i] = sample.caption.gold_components[i] ? 1 : 0;
    j["gold_components"] = flags;
    out << j.dump() << "\n";
  }
}

std::vector<Sample> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_jsonl: cannot open " + path);
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("load_jsonl: " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Sample sample;
    try {
      sample.article.id = j.at("id").get<std::string>();
      sample.article.tokens = j.at("article_tokens").get<std::vector<std::string>>();
      for (const auto& m : j.at("article_entities"))
        sample.article.entities.push_back(mention_from_json(m));
      sample.image_feature = j.at("image_feature").get<std::vector<double>>();
      sample.caption.tokens = j.at("caption_tokens").get<std::vector<std::string>>();
      for (const auto& m : j.at("caption_entities"))
        sample.caption.entities.push_back(mention_from_json(m));
      auto flags = j.at("gold_components").get<std::vector<int>>();
      if (flags.size() != kNumComponents)
        throw ValidationError("gold_components: expected 5 flags, got " +
                              std::to_string(flags.size()));
      for (int i = 0; i < kNumComponents; ++i) {
        if (flags[i] != 0 && flags[i] != 1)
          throw ValidationError("gold_components: flag not in {0,1}");
        sample.caption.gold_components[i] = flags[i] == 1;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("load_jsonl: " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      validate_sample(sample);
    } catch (const ValidationError& e) {
      throw ValidationError("load_jsonl: " + path + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

// ---- split ------------------------------------------------------------------

CorpusSplit split(const std::vector<Sample>& samples, const SplitRatios& ratios,
                  std::uint64_t seed) {
  double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split: ratios must be non-negative and sum to 1");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  std::size_t n = samples.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  std::size_t n_val = static_cast<std::size_t>(std::llround(ratios.validation * n));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  CorpusSplit result;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[order[i]];
    if (i < n_train)
      result.train.push_back(s);
    else if (i < n_train + n_val)
      result.validation.push_back(s);
    else
      result.test.push_back(s);
  }
  return result;
}

}  // namespace newscap
