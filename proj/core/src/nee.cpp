#include "newscap/nee.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "newscap/adam.hpp"

namespace newscap {

namespace {
using ordered_json = nlohmann::ordered_json;
}

// ---- KnowledgeBase ----------------------------------------------------------

void KnowledgeBase::validate() const {
  std::set<std::string> known(entities.begin(), entities.end());
  if (known.size() != entities.size())
    throw ValidationError("kb: duplicate entity ids");
  for (const auto& [a, b] : edges)
    if (!known.count(a) || !known.count(b))
      throw ValidationError("kb: edge references unknown entity " + (known.count(a) ? b : a));
  for (const auto& anchor : anchors)
    if (!known.count(anchor.entity))
      throw ValidationError("kb: anchor references unknown entity " + anchor.entity);
}

void KnowledgeBase::save_json(const std::string& path) const {
  ordered_json j;
  j["entities"] = entities;
  ordered_json edge_list = ordered_json::array();
  for (const auto& [a, b] : edges) edge_list.push_back({a, b});
  j["edges"] = std::move(edge_list);
  ordered_json anchor_list = ordered_json::array();
  for (const auto& anchor : anchors) {
    ordered_json a;
    a["entity"] = anchor.entity;
    a["context"] = anchor.context;
    anchor_list.push_back(std::move(a));
  }
  j["anchors"] = std::move(anchor_list);
  j["word_corpus"] = word_corpus;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("kb: cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

KnowledgeBase KnowledgeBase::load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("kb: cannot open " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("kb: " + path + ": " + e.what());
  }
  KnowledgeBase kb;
  try {
    kb.entities = j.at("entities").get<std::vector<std::string>>();
    for (const auto& edge : j.at("edges")) {
      if (!edge.is_array() || edge.size() != 2)
        throw ValidationError("kb: edge is not a pair");
      kb.edges.emplace_back(edge[0].get<std::string>(), edge[1].get<std::string>());
    }
    for (const auto& anchor : j.at("anchors")) {
      KbAnchor a;
      a.entity = anchor.at("entity").get<std::string>();
      a.context = anchor.at("context").get<std::vector<std::string>>();
      kb.anchors.push_back(std::move(a));
    }
    kb.word_corpus = j.at("word_corpus").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("kb: " + path + ": " + e.what());
  }
  kb.validate();
  return kb;
}

// ---- generators ---------------------------------------------------------------

KnowledgeBase make_toy_kb(const ToyKbConfig& config, std::uint64_t seed) {
  if (config.num_entities < 2 || config.num_clusters < 1)
    throw ConfigError("toy kb: need at least 2 entities and 1 cluster");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  KnowledgeBase kb;

  std::vector<int> cluster_of(config.num_entities);
  for (int e = 0; e < config.num_entities; ++e) {
    std::ostringstream id;
    id << "E" << (e < 10 ? "00" : e < 100 ? "0" : "") << e;
    kb.entities.push_back(id.str());
    cluster_of[e] = e % config.num_clusters;
  }

  // cluster-specific vocabulary: cluster c owns words w{c}_{k}
  std::vector<std::vector<std::string>> cluster_words(config.num_clusters);
  for (int c = 0; c < config.num_clusters; ++c)
    for (int k = 0; k < config.words_per_cluster; ++k) {
      std::ostringstream w;
      w << "w" << c << "_" << k;
      cluster_words[c].push_back(w.str());
    }

  // ring + random chords inside each cluster, sparse chords across
  std::set<std::pair<int, int>> edge_set;
  auto add_edge = [&](int a, int b) {
    if (a == b) return;
    if (a > b) std::swap(a, b);
    if (edge_set.insert({a, b}).second)
      kb.edges.emplace_back(kb.entities[a], kb.entities[b]);
  };
  std::vector<std::vector<int>> members(config.num_clusters);
  for (int e = 0; e < config.num_entities; ++e) members[cluster_of[e]].push_back(e);
  for (const auto& cluster : members) {
    for (std::size_t i = 0; i < cluster.size(); ++i) {
      add_edge(cluster[i], cluster[(i + 1) % cluster.size()]);
      for (int d = 1; d < config.intra_cluster_degree; ++d)
        add_edge(cluster[i], cluster[rng() % cluster.size()]);
    }
  }
  for (int a = 0; a < config.num_entities; ++a)
    for (int b = a + 1; b < config.num_entities; ++b)
      if (cluster_of[a] != cluster_of[b] && unit(rng) < config.cross_cluster_edge_prob)
        add_edge(a, b);

  for (int s = 0; s < config.corpus_sentences; ++s) {
    int c = static_cast<int>(rng() % config.num_clusters);
    std::vector<std::string> sentence;
    for (int k = 0; k < config.sentence_len; ++k)
      sentence.push_back(cluster_words[c][rng() % cluster_words[c].size()]);
    kb.word_corpus.push_back(std::move(sentence));
  }

  for (int e = 0; e < config.num_entities; ++e) {
    int c = cluster_of[e];
    for (int a = 0; a < config.anchors_per_entity; ++a) {
      KbAnchor anchor;
      anchor.entity = kb.entities[e];
      for (int k = 0; k < config.anchor_window; ++k)
        anchor.context.push_back(cluster_words[c][rng() % cluster_words[c].size()]);
      // a couple of entity-specific marker words make ranking inside a
      // cluster learnable
      std::ostringstream marker;
      marker << "m" << e;
      anchor.context.push_back(marker.str());
      anchor.context.push_back(marker.str());
      kb.anchors.push_back(std::move(anchor));
    }
  }
  // marker words must exist in the word corpus to get vectors
  for (int e = 0; e < config.num_entities; ++e) {
    std::ostringstream marker;
    marker << "m" << e;
    std::vector<std::string> sentence(4, marker.str());
    int c = cluster_of[e];
    for (int k = 0; k < 4; ++k) sentence.push_back(cluster_words[c][rng() % cluster_words[c].size()]);
    kb.word_corpus.push_back(std::move(sentence));
  }
  kb.validate();
  return kb;
}

KnowledgeBase kb_from_samples(const std::vector<Sample>& samples,
                              const EntityInventory& inventory, int anchor_window) {
  KnowledgeBase kb;
  for (const auto& entity : inventory.entities()) kb.entities.push_back(entity.id);
  std::set<std::string> known(kb.entities.begin(), kb.entities.end());

  std::set<std::pair<std::string, std::string>> edge_set;
  for (const auto& sample : samples) {
    std::vector<std::string> caption_ids;
    for (const auto& mention : sample.caption.entities)
      if (mention.entity_id && known.count(*mention.entity_id))
        caption_ids.push_back(*mention.entity_id);
    for (std::size_t i = 0; i < caption_ids.size(); ++i)
      for (std::size_t j = i + 1; j < caption_ids.size(); ++j) {
        auto a = caption_ids[i], b = caption_ids[j];
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (edge_set.insert({a, b}).second) kb.edges.emplace_back(a, b);
      }

    for (const auto& mention : sample.article.entities) {
      if (!mention.entity_id || !known.count(*mention.entity_id)) continue;
      KbAnchor anchor;
      anchor.entity = *mention.entity_id;
      std::size_t center = (mention.start + mention.end) / 2;
      std::size_t half = static_cast<std::size_t>(anchor_window) / 2;
      std::size_t lo = center > half ? center - half : 0;
      std::size_t hi = std::min(sample.article.tokens.size(), lo + anchor_window);
      for (std::size_t t = lo; t < hi; ++t) anchor.context.push_back(sample.article.tokens[t]);
      kb.anchors.push_back(std::move(anchor));
    }
    kb.word_corpus.push_back(sample.article.tokens);
  }
  kb.validate();
  return kb;
}

// ---- table --------------------------------------------------------------------

int JointEmbeddingTable::word_index(const std::string& token) const {
  auto it = word_idx_.find(token);
  return it == word_idx_.end() ? -1 : it->second;
}

int JointEmbeddingTable::entity_index(const std::string& id) const {
  auto it = entity_idx_.find(id);
  return it == entity_idx_.end() ? -1 : it->second;
}

void JointEmbeddingTable::rebuild_indices() {
  word_idx_.clear();
  entity_idx_.clear();
  for (std::size_t i = 0; i < words.size(); ++i) word_idx_[words[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < entities.size(); ++i) entity_idx_[entities[i]] = static_cast<int>(i);
}

std::vector<double> text_vector(const std::vector<std::string>& tokens,
                                const JointEmbeddingTable& table) {
  if (tokens.empty()) throw InputError("text_vector: empty token list");
  std::size_t d = static_cast<std::size_t>(table.d_wiki);
  std::vector<double> mean(d, 0.0);
  const auto& wv = table.word_vectors.values();
  for (const auto& token : tokens) {
    int idx = table.word_index(token);
    if (idx < 0) continue;  // OOV contributes zeros
    const double* row = &wv[static_cast<std::size_t>(idx) * d];
    for (std::size_t i = 0; i < d; ++i) mean[i] += row[i];
  }
  double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : mean) v *= inv;
  std::vector<double> out(d, 0.0);
  const auto& w = table.nep_weight.values();
  const auto& b = table.nep_bias.values();
  for (std::size_t i = 0; i < d; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < d; ++j) acc += w[j * d + i] * mean[j];
    out[i] = acc;
  }
  return out;
}

namespace {

double dot(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) acc += a[i] * b[i];
  return acc;
}

const double* entity_row(const JointEmbeddingTable& table, const std::string& id) {
  int idx = table.entity_index(id);
  if (idx < 0) throw IndexError("nep: unknown entity " + id);
  return &table.entity_vectors.values()[static_cast<std::size_t>(idx) *
                                        static_cast<std::size_t>(table.d_wiki)];
}

double softmax_prob_of_first(const std::vector<double>& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);
  return std::exp(logits[0] - mx) / denom;
}

}  // namespace

double nep_probability(const std::string& entity, const std::vector<std::string>& tokens,
                       const std::vector<std::string>& negatives,
                       const JointEmbeddingTable& table) {
  for (const auto& neg : negatives)
    if (neg == entity)
      throw ContractError("nep_probability: positive entity appears among negatives");
  std::vector<double> vt = text_vector(tokens, table);
  std::size_t d = vt.size();
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(dot(entity_row(table, entity), vt.data(), d));
  for (const auto& neg : negatives) logits.push_back(dot(entity_row(table, neg), vt.data(), d));
  return softmax_prob_of_first(logits);
}

double nep_probability_full(const std::string& entity, const std::vector<std::string>& tokens,
                            const JointEmbeddingTable& table) {
  std::vector<double> vt = text_vector(tokens, table);
  std::size_t d = vt.size();
  int pos = table.entity_index(entity);
  if (pos < 0) throw IndexError("nep: unknown entity " + entity);
  std::vector<double> logits(table.entities.size());
  const auto& ev = table.entity_vectors.values();
  for (std::size_t i = 0; i < table.entities.size(); ++i)
    logits[i] = dot(&ev[i * d], vt.data(), d);
  std::swap(logits[0], logits[static_cast<std::size_t>(pos)]);
  return softmax_prob_of_first(logits);
}

std::vector<std::string> sample_negatives(const KnowledgeBase& kb,
                                          const std::vector<std::string>& text_entities,
                                          int n_neg, std::uint64_t seed) {
  std::set<std::string> excluded(text_entities.begin(), text_entities.end());
  std::vector<std::string> candidates;
  for (const auto& id : kb.entities)
    if (!excluded.count(id)) candidates.push_back(id);
  if (static_cast<int>(candidates.size()) < n_neg)
    throw InputError("sample_negatives: only " + std::to_string(candidates.size()) +
                     " candidates for " + std::to_string(n_neg) + " negatives");
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates: first n_neg slots in seed order
  for (int i = 0; i < n_neg; ++i) {
    std::size_t j = i + rng() % (candidates.size() - static_cast<std::size_t>(i));
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
  }
  candidates.resize(static_cast<std::size_t>(n_neg));
  return candidates;
}

// ---- training -------------------------------------------------------------------

namespace {

struct TrainContext {
  std::size_t d = 0;
  JointEmbeddingTable* table = nullptr;
  std::vector<double> grad_words, grad_entities, grad_w, grad_b;
  double sigma_loss_sum[3] = {0, 0, 0};
  std::size_t sigma_count[3] = {0, 0, 0};
  double nep_loss_sum = 0;
  std::size_t nep_count = 0;

  void zero() {
    std::fill(grad_words.begin(), grad_words.end(), 0.0);
    std::fill(grad_entities.begin(), grad_entities.end(), 0.0);
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
  }
};

double log_sigmoid(double x) {
  // -softplus(-x), stable on both tails
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// one positive pair + negatives under the logistic objective; rows live
// in `vecs` with gradient buffer `grads`. a_idx indexes `vecs_a`.
double sigmoid_pair_step(double* va, double* ga, const std::vector<double>& vecs_b,
                         std::vector<double>* grads_b, std::size_t b_idx,
                         const std::vector<std::size_t>& neg_idx, std::size_t d, double weight) {
  const double* vb = &vecs_b[b_idx * d];
  double* gb = &(*grads_b)[b_idx * d];
  double s = dot(va, vb, d);
  double loss = -log_sigmoid(s);
  double coeff = (sigmoid_scalar(s) - 1.0) * weight;
  for (std::size_t i = 0; i < d; ++i) {
    ga[i] += coeff * vb[i];
    gb[i] += coeff * va[i];
  }
  for (std::size_t n : neg_idx) {
    const double* vn = &vecs_b[n * d];
    double* gn = &(*grads_b)[n * d];
    double sn = dot(va, vn, d);
    loss += -log_sigmoid(-sn);
    double cn = sigmoid_scalar(sn) * weight;
    for (std::size_t i = 0; i < d; ++i) {
      ga[i] += cn * vn[i];
      gn[i] += cn * va[i];
    }
  }
  return loss;
}

}  // namespace

JointEmbeddingTable train_joint(const KnowledgeBase& kb, const NeeConfig& config,
                                std::uint64_t seed, TrainJointStats* stats) {
  kb.validate();
  if (config.n_neg >= static_cast<int>(kb.entities.size()))
    throw ConfigError("train_joint: n_neg " + std::to_string(config.n_neg) +
                      " >= entity count " + std::to_string(kb.entities.size()));
  if (config.d_wiki <= 0) throw ConfigError("train_joint: d_wiki must be positive");

  std::mt19937_64 rng(seed);
  std::size_t d = static_cast<std::size_t>(config.d_wiki);

  // word vocabulary over corpus + anchor contexts, ordered by (freq desc, token asc)
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : kb.word_corpus)
    for (const auto& token : sentence) counts[token]++;
  for (const auto& anchor : kb.anchors)
    for (const auto& token : anchor.context) counts[token]++;
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  JointEmbeddingTable table;
  table.d_wiki = config.d_wiki;
  for (const auto& [token, n] : ranked) table.words.push_back(token);
  table.entities = kb.entities;
  table.rebuild_indices();
  double init = 0.5 / std::sqrt(static_cast<double>(d));
  table.word_vectors = Tensor::randn({table.words.size(), d}, rng, init, true);
  table.entity_vectors = Tensor::randn({table.entities.size(), d}, rng, init, true);
  table.nep_weight = Tensor::randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)), true);
  table.nep_bias = Tensor::zeros({d}, true);

  // unigram^power negative table for words (power 0 = uniform)
  std::vector<double> word_cum;
  {
    double total = 0.0;
    word_cum.reserve(table.words.size());
    for (const auto& [token, n] : ranked) {
      total += std::pow(static_cast<double>(n), config.unigram_power);
      word_cum.push_back(total);
    }
    for (double& v : word_cum) v /= total;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw_word = [&](std::size_t avoid) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      double roll = unit(rng);
      std::size_t idx = static_cast<std::size_t>(
          std::lower_bound(word_cum.begin(), word_cum.end(), roll) - word_cum.begin());
      if (idx >= table.words.size()) idx = table.words.size() - 1;
      if (idx != avoid) return idx;
    }
    return (avoid + 1) % table.words.size();
  };
  auto draw_entity = [&](std::size_t avoid) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::size_t idx = rng() % table.entities.size();
      if (idx != avoid) return idx;
    }
    return (avoid + 1) % table.entities.size();
  };

  // instance streams, in fixed construction order, shuffled per epoch
  struct WordPair { std::size_t center, context; };
  std::vector<WordPair> word_pairs;
  for (const auto& sentence : kb.word_corpus) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      int center = table.word_index(sentence[i]);
      std::size_t lo = i > static_cast<std::size_t>(config.window) ? i - config.window : 0;
      std::size_t hi = std::min(sentence.size(), i + static_cast<std::size_t>(config.window) + 1);
      for (std::size_t j = lo; j < hi; ++j) {
        if (j == i) continue;
        word_pairs.push_back({static_cast<std::size_t>(center),
                              static_cast<std::size_t>(table.word_index(sentence[j]))});
      }
    }
  }
  struct EdgePair { std::size_t a, b; };
  std::vector<EdgePair> edge_pairs;
  for (const auto& [a, b] : kb.edges)
    edge_pairs.push_back({static_cast<std::size_t>(table.entity_index(a)),
                          static_cast<std::size_t>(table.entity_index(b))});
  struct AnchorInstance { std::size_t entity; std::vector<std::size_t> word_ids; const KbAnchor* anchor; };
  std::vector<AnchorInstance> anchor_instances;
  for (const auto& anchor : kb.anchors) {
    AnchorInstance inst;
    inst.entity = static_cast<std::size_t>(table.entity_index(anchor.entity));
    inst.anchor = &anchor;
    for (const auto& token : anchor.context) {
      int idx = table.word_index(token);
      if (idx >= 0) inst.word_ids.push_back(static_cast<std::size_t>(idx));
    }
    anchor_instances.push_back(std::move(inst));
  }

  std::vector<Tensor> params = {table.word_vectors, table.entity_vectors, table.nep_weight,
                                table.nep_bias};
  AdamState adam(params, config.learning_rate);

  TrainContext ctx;
  ctx.d = d;
  ctx.grad_words.assign(table.word_vectors.size(), 0.0);
  ctx.grad_entities.assign(table.entity_vectors.size(), 0.0);
  ctx.grad_w.assign(d * d, 0.0);
  ctx.grad_b.assign(d, 0.0);

  auto& wvals = table.word_vectors.mutable_values();
  auto& evals = table.entity_vectors.mutable_values();

  auto shuffled = [&](std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
  };

  const std::size_t batch = 1024;
  const std::vector<const std::vector<double>*> grad_ptrs = {&ctx.grad_words, &ctx.grad_entities,
                                                             &ctx.grad_w, &ctx.grad_b};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::array<double, 4> loss_sums{};
    std::array<std::size_t, 4> loss_counts{};
    auto flush = [&]() {
      adam.step_with_grads(params, grad_ptrs);
      ctx.zero();
    };

    // (i) word skip-gram
    std::size_t in_batch = 0;
    for (std::size_t idx : shuffled(word_pairs.size())) {
      const auto& pair = word_pairs[idx];
      std::vector<std::size_t> negs;
      for (int n = 0; n < config.sg_negatives; ++n) negs.push_back(draw_word(pair.context));
      double loss = sigmoid_pair_step(&wvals[pair.center * d], &ctx.grad_words[pair.center * d],
                                      wvals, &ctx.grad_words, pair.context, negs, d,
                                      config.weight_word);
      loss_sums[0] += loss;
      loss_counts[0]++;
      if (++in_batch == batch) { flush(); in_batch = 0; }
    }
    if (in_batch) { flush(); in_batch = 0; }

    // (ii) graph skip-gram over edges
    for (std::size_t idx : shuffled(edge_pairs.size())) {
      const auto& edge = edge_pairs[idx];
      std::vector<std::size_t> negs;
      for (int n = 0; n < config.sg_negatives; ++n) negs.push_back(draw_entity(edge.b));
      double loss = sigmoid_pair_step(&evals[edge.a * d], &ctx.grad_entities[edge.a * d], evals,
                                      &ctx.grad_entities, edge.b, negs, d, config.weight_graph);
      loss_sums[1] += loss;
      loss_counts[1]++;
      if (++in_batch == batch) { flush(); in_batch = 0; }
    }
    if (in_batch) { flush(); in_batch = 0; }

    // (iii) words predicted from entities (anchor windows)
    for (std::size_t idx : shuffled(anchor_instances.size())) {
      const auto& inst = anchor_instances[idx];
      if (inst.word_ids.empty()) continue;
      std::size_t word = inst.word_ids[rng() % inst.word_ids.size()];
      std::vector<std::size_t> negs;
      for (int n = 0; n < config.sg_negatives; ++n) negs.push_back(draw_word(word));
      double loss = sigmoid_pair_step(&evals[inst.entity * d], &ctx.grad_entities[inst.entity * d],
                                      wvals, &ctx.grad_words, word, negs, d, config.weight_anchor);
      loss_sums[2] += loss;
      loss_counts[2]++;
      if (++in_batch == batch) { flush(); in_batch = 0; }
    }
    if (in_batch) { flush(); in_batch = 0; }

    // (iv) entity predictor: softmax over {positive} + n_neg negatives
    const auto& w = table.nep_weight.values();
    for (std::size_t idx : shuffled(anchor_instances.size())) {
      const auto& inst = anchor_instances[idx];
      const auto& context = inst.anchor->context;
      if (context.empty()) continue;
      std::vector<std::string> negs =
          sample_negatives(kb, {inst.anchor->entity}, config.n_neg, rng());

      // forward
      std::vector<double> mean(d, 0.0);
      for (const auto& token : context) {
        int widx = table.word_index(token);
        if (widx < 0) continue;
        const double* row = &wvals[static_cast<std::size_t>(widx) * d];
        for (std::size_t i = 0; i < d; ++i) mean[i] += row[i];
      }
      double inv_len = 1.0 / static_cast<double>(context.size());
      for (double& v : mean) v *= inv_len;
      std::vector<double> vt(d);
      const auto& bias = table.nep_bias.values();
      for (std::size_t i = 0; i < d; ++i) {
        double acc = bias[i];
        for (std::size_t j = 0; j < d; ++j) acc += w[j * d + i] * mean[j];
        vt[i] = acc;
      }
      std::vector<std::size_t> cand_ids;
      cand_ids.push_back(inst.entity);
      for (const auto& neg : negs)
        cand_ids.push_back(static_cast<std::size_t>(table.entity_index(neg)));
      std::vector<double> logits(cand_ids.size());
      for (std::size_t c = 0; c < cand_ids.size(); ++c)
        logits[c] = dot(&evals[cand_ids[c] * d], vt.data(), d);
      double mx = *std::max_element(logits.begin(), logits.end());
      double denom = 0.0;
      for (double l : logits) denom += std::exp(l - mx);
      double log_denom = mx + std::log(denom);
      loss_sums[3] += (log_denom - logits[0]) * 1.0;
      loss_counts[3]++;

      // backward
      std::vector<double> gt(d, 0.0);
      for (std::size_t c = 0; c < cand_ids.size(); ++c) {
        double p = std::exp(logits[c] - log_denom);
        double coeff = (p - (c == 0 ? 1.0 : 0.0)) * config.weight_nep;
        const double* ve = &evals[cand_ids[c] * d];
        double* ge = &ctx.grad_entities[cand_ids[c] * d];
        for (std::size_t i = 0; i < d; ++i) {
          ge[i] += coeff * vt[i];
          gt[i] += coeff * ve[i];
        }
      }
      for (std::size_t i = 0; i < d; ++i) ctx.grad_b[i] += gt[i];
      for (std::size_t j = 0; j < d; ++j) {
        double mj = mean[j];
        if (mj == 0.0) continue;
        double* grow = &ctx.grad_w[j * d];
        for (std::size_t i = 0; i < d; ++i) grow[i] += mj * gt[i];
      }
      // into word vectors through the mean
      std::vector<double> gmean(d, 0.0);
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        const double* wrow = &w[j * d];
        for (std::size_t i = 0; i < d; ++i) acc += wrow[i] * gt[i];
        gmean[j] = acc * inv_len;
      }
      for (const auto& token : context) {
        int widx = table.word_index(token);
        if (widx < 0) continue;
        double* grow = &ctx.grad_words[static_cast<std::size_t>(widx) * d];
        for (std::size_t i = 0; i < d; ++i) grow[i] += gmean[i];
      }
      if (++in_batch == batch) { flush(); in_batch = 0; }
    }
    if (in_batch) flush();

    if (stats) {
      std::array<double, 4> means{};
      for (int i = 0; i < 4; ++i)
        means[i] = loss_counts[i] ? loss_sums[i] / static_cast<double>(loss_counts[i]) : 0.0;
      stats->epoch_losses.push_back(means);
    }
  }
  return table;
}

std::vector<double> lookup_entity(const std::optional<std::string>& entity_id,
                                  const std::vector<std::string>& context_tokens,
                                  const JointEmbeddingTable& table) {
  if (entity_id) {
    int idx = table.entity_index(*entity_id);
    if (idx >= 0) {
      std::size_t d = static_cast<std::size_t>(table.d_wiki);
      const double* row = &table.entity_vectors.values()[static_cast<std::size_t>(idx) * d];
      return std::vector<double>(row, row + d);
    }
  }
  if (context_tokens.empty())
    throw InputError("lookup_entity: missing entity with empty context");
  return text_vector(context_tokens, table);
}

std::vector<NEPBatchOutcome> evaluate_nep(const KnowledgeBase& kb,
                                          const std::vector<KbAnchor>& anchors,
                                          const JointEmbeddingTable& table, int n_neg,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<NEPBatchOutcome> outcomes;
  outcomes.reserve(anchors.size());
  for (const auto& anchor : anchors) {
    NEPBatchOutcome outcome;
    outcome.positive = anchor.entity;
    outcome.negatives = sample_negatives(kb, {anchor.entity}, n_neg, rng());
    std::vector<double> vt = text_vector(anchor.context, table);
    std::size_t d = vt.size();
    std::vector<double> logits;
    logits.push_back(dot(entity_row(table, anchor.entity), vt.data(), d));
    for (const auto& neg : outcome.negatives)
      logits.push_back(dot(entity_row(table, neg), vt.data(), d));
    double p = softmax_prob_of_first(logits);
    outcome.loss = -std::log(std::max(p, 1e-300));
    outcome.rank = 1;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[0]) outcome.rank++;
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

}  // namespace newscap
