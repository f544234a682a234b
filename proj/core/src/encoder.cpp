#include "newscap/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace newscap {

void ModelConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0)
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  if (d_t % num_heads != 0)
    throw ConfigError("model config: d_t " + std::to_string(d_t) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  if (component_blocks != static_cast<std::size_t>(kNumComponents))
    throw ConfigError("model config: component_blocks must be 5");
  if (segment_len == 0 || max_article_len == 0)
    throw ConfigError("model config: segment_len and max_article_len must be positive");
  if (max_article_len > 2 * segment_len)
    throw ConfigError("model config: max_article_len " + std::to_string(max_article_len) +
                      " exceeds two segments of " + std::to_string(segment_len));
  if (vocab_size == 0) throw ConfigError("model config: vocab_size unset");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout out of [0,1)");
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig config;
  config.d_model = 1024;
  config.d_i = 2048;
  config.d_t = 1024;
  config.d_e = 300;
  config.num_heads = 16;
  config.segment_len = 512;
  config.max_article_len = 1000;
  config.component_head_hidden = 1024;
  return config;
}

// ---- span plan -----------------------------------------------------------------

SpanPlan plan_spans(std::size_t len, std::size_t segment_len, std::size_t max_article_len) {
  SpanPlan plan;
  plan.total = std::min(len, max_article_len);
  if (plan.total <= segment_len) {
    plan.single = true;
    plan.seg_a_end = plan.total;
    plan.seg_b_begin = plan.total;
    plan.overlap_begin = plan.overlap_end = plan.total;
    return plan;
  }
  plan.single = false;
  plan.seg_a_end = segment_len;                  // [0, S)
  plan.seg_b_begin = plan.total - segment_len;   // [L-S, L)
  plan.overlap_begin = plan.seg_b_begin;
  plan.overlap_end = segment_len;                // size 2S - L, may be 0
  return plan;
}

double overlap_weight(std::size_t j, std::size_t k, bool plain_average) {
  if (plain_average || k == 1) return 0.5;
  return static_cast<double>(j) / static_cast<double>(k - 1);
}

// ---- EncoderLayer ---------------------------------------------------------------

EncoderLayer EncoderLayer::init(std::size_t d, std::size_t ff, std::mt19937_64& rng) {
  EncoderLayer layer;
  layer.attn = AttentionParams::init(d, rng);
  layer.ff_w1 = glorot(d, ff, rng);
  layer.ff_b1 = Tensor::zeros({ff}, true);
  layer.ff_w2 = glorot(ff, d, rng);
  layer.ff_b2 = Tensor::zeros({d}, true);
  layer.norm1_g = Tensor::full({d}, 1.0, true);
  layer.norm1_b = Tensor::zeros({d}, true);
  layer.norm2_g = Tensor::full({d}, 1.0, true);
  layer.norm2_b = Tensor::zeros({d}, true);
  return layer;
}

Tensor EncoderLayer::forward(const Tensor& x, std::size_t num_heads, const FwdCtx& ctx) const {
  Tensor attended = multi_head_attention(x, x, attn, num_heads, false);
  if (ctx.training && ctx.dropout > 0)
    attended = dropout(attended, ctx.dropout, *ctx.rng, true);
  Tensor h = layer_norm(add(x, attended), norm1_g, norm1_b);
  Tensor ff = linear(gelu(linear(h, ff_w1, ff_b1)), ff_w2, ff_b2);
  if (ctx.training && ctx.dropout > 0) ff = dropout(ff, ctx.dropout, *ctx.rng, true);
  return layer_norm(add(h, ff), norm2_g, norm2_b);
}

// ---- TextEncoder ------------------------------------------------------------------

TextEncoder TextEncoder::init(const ModelConfig& config, std::mt19937_64& rng) {
  TextEncoder enc;
  enc.token_emb = Tensor::randn({config.vocab_size, config.d_t}, rng, 0.02, true);
  enc.pos_emb = Tensor::randn({config.max_article_len, config.d_t}, rng, 0.02, true);
  for (std::size_t i = 0; i < config.encoder_layers; ++i)
    enc.layers.push_back(EncoderLayer::init(config.d_t, config.ff_width, rng));
  enc.out_w = glorot(config.d_t, config.d_model, rng);
  enc.out_b = Tensor::zeros({config.d_model}, true);
  return enc;
}

Tensor TextEncoder::encode_segment(const std::vector<int>& ids, std::size_t pos_offset,
                                   const ModelConfig& config, const FwdCtx& ctx) const {
  if (ids.empty()) throw ContractError("encode_segment: empty segment");
  if (ids.size() > config.segment_len)
    throw ContractError("encode_segment: " + std::to_string(ids.size()) +
                        " tokens exceed segment_len " + std::to_string(config.segment_len));
  if (pos_offset + ids.size() > config.max_article_len)
    throw ContractError("encode_segment: positions exceed max_article_len");
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    positions[i] = static_cast<int>(pos_offset + i);
  Tensor x = add(embedding_lookup(token_emb, ids), embedding_lookup(pos_emb, positions));
  for (const auto& layer : layers) x = layer.forward(x, config.num_heads, ctx);
  return linear(x, out_w, out_b);
}

Tensor TextEncoder::encode_article(const std::vector<int>& ids, const ModelConfig& config,
                                   const FwdCtx& ctx) const {
  if (ids.empty()) throw ContractError("encode_article: empty article");
  SpanPlan plan = plan_spans(ids.size(), config.segment_len, config.max_article_len);
  std::vector<int> truncated(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(plan.total));
  if (plan.single) return encode_segment(truncated, 0, config, ctx);

  std::vector<int> seg_a(truncated.begin(),
                         truncated.begin() + static_cast<std::ptrdiff_t>(plan.seg_a_end));
  std::vector<int> seg_b(truncated.begin() + static_cast<std::ptrdiff_t>(plan.seg_b_begin),
                         truncated.end());
  Tensor enc_a = encode_segment(seg_a, 0, config, ctx);
  Tensor enc_b = encode_segment(seg_b, plan.seg_b_begin, config, ctx);

  std::size_t k = plan.overlap_size();
  std::vector<Tensor> pieces;
  if (plan.overlap_begin > 0) pieces.push_back(row_slice(enc_a, 0, plan.overlap_begin));
  if (k > 0) {
    // rows [overlap_begin, overlap_end) exist in both segments; merge
    // with the per-row ramp
    Tensor a_part = row_slice(enc_a, plan.overlap_begin, plan.overlap_end);
    Tensor b_part = row_slice(enc_b, 0, k);
    std::vector<double> wa(k * config.d_model), wb(k * config.d_model);
    for (std::size_t j = 0; j < k; ++j) {
      double w = overlap_weight(j, k, config.span_plain_average);
      for (std::size_t c = 0; c < config.d_model; ++c) {
        wa[j * config.d_model + c] = 1.0 - w;
        wb[j * config.d_model + c] = w;
      }
    }
    Tensor ramp_a = Tensor::from({k, config.d_model}, std::move(wa));
    Tensor ramp_b = Tensor::from({k, config.d_model}, std::move(wb));
    pieces.push_back(add(mul(a_part, ramp_a), mul(b_part, ramp_b)));
  }
  if (plan.overlap_end < plan.total)
    pieces.push_back(row_slice(enc_b, k, enc_b.rows()));
  return pieces.size() == 1 ? pieces[0] : concat_rows(pieces);
}

// ---- ImageEncoder -------------------------------------------------------------------

ImageEncoder ImageEncoder::init(const ModelConfig& config, std::mt19937_64& rng) {
  ImageEncoder enc;
  enc.proj_w = glorot(config.d_i, config.d_model, rng);
  enc.proj_b = Tensor::zeros({config.d_model}, true);
  enc.norm_g = Tensor::full({config.d_model}, 1.0, true);
  enc.norm_b = Tensor::zeros({config.d_model}, true);
  return enc;
}

Tensor ImageEncoder::forward(const std::vector<double>& image_feature,
                             const ModelConfig& config) const {
  if (image_feature.size() != config.d_i)
    throw DimensionError("encode_image: feature length " + std::to_string(image_feature.size()) +
                         ", expected d_i " + std::to_string(config.d_i));
  Tensor x = Tensor::from({1, config.d_i}, image_feature);
  return layer_norm(linear(x, proj_w, proj_b), norm_g, norm_b);
}

// ---- EntityEncoder ---------------------------------------------------------------------

EntityEncoder EntityEncoder::init(const ModelConfig& config, std::mt19937_64& rng) {
  EntityEncoder enc;
  enc.proj_w = glorot(config.d_e, config.d_model, rng);
  enc.proj_b = Tensor::zeros({config.d_model}, true);
  enc.null_row = Tensor::randn({1, config.d_model}, rng, 0.02, true);
  return enc;
}

std::vector<std::string> mention_context(const Article& article, const EntityMention& mention,
                                         std::size_t window) {
  std::size_t center = (mention.start + mention.end) / 2;
  std::size_t half = window / 2;
  std::size_t lo = center > half ? center - half : 0;
  std::size_t hi = std::min(article.tokens.size(), lo + window);
  if (hi - lo < window && hi == article.tokens.size())
    lo = hi > window ? hi - window : 0;
  return std::vector<std::string>(article.tokens.begin() + static_cast<std::ptrdiff_t>(lo),
                                  article.tokens.begin() + static_cast<std::ptrdiff_t>(hi));
}

Tensor EntityEncoder::forward(const Article& article, const JointEmbeddingTable& table,
                              const ModelConfig& config) const {
  if (static_cast<std::size_t>(table.d_wiki) != config.d_e)
    throw DimensionError("encode_entities: table d_wiki " + std::to_string(table.d_wiki) +
                         " does not match configured d_e " + std::to_string(config.d_e));
  if (article.entities.empty()) return null_row;
  std::vector<double> rows;
  rows.reserve(article.entities.size() * config.d_e);
  for (const auto& mention : article.entities) {
    std::vector<double> vec =
        lookup_entity(mention.entity_id, mention_context(article, mention), table);
    rows.insert(rows.end(), vec.begin(), vec.end());
  }
  Tensor x = Tensor::from({article.entities.size(), config.d_e}, std::move(rows));
  return linear(x, proj_w, proj_b);
}

// ---- ComponentHead ------------------------------------------------------------------------

ComponentHead ComponentHead::init(const ModelConfig& config, std::mt19937_64& rng) {
  ComponentHead head;
  head.w1 = glorot(3 * config.d_model, config.component_head_hidden, rng);
  head.b1 = Tensor::zeros({config.component_head_hidden}, true);
  head.w2 = glorot(config.component_head_hidden, kNumComponents, rng);
  head.b2 = Tensor::zeros({kNumComponents}, true);
  return head;
}

Tensor ComponentHead::forward(const Tensor& x_image, const Tensor& x_text,
                              const Tensor& x_entities, const ModelConfig& config) const {
  Tensor pooled = concat_last_axis({x_image, mean_rows(x_text), mean_rows(x_entities)});
  if (config.detach_component_grads)
    pooled = Tensor::from(pooled.shape(), pooled.values());
  Tensor hidden = gelu(linear(pooled, w1, b1));
  return sigmoid(linear(hidden, w2, b2));
}

// ---- Encoder ---------------------------------------------------------------------------------

Encoder Encoder::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  Encoder enc;
  enc.image = ImageEncoder::init(config, rng);
  enc.text = TextEncoder::init(config, rng);
  enc.entity = EntityEncoder::init(config, rng);
  enc.head = ComponentHead::init(config, rng);
  return enc;
}

EncodedSample Encoder::encode(const Sample& sample, const Vocabulary& vocab,
                              const JointEmbeddingTable& table, const ModelConfig& config,
                              const FwdCtx& ctx) const {
  EncodedSample out;
  out.x_image = image.forward(sample.image_feature, config);
  out.x_text = text.encode_article(vocab.encode(sample.article.tokens), config, ctx);
  out.x_entities = entity.forward(sample.article, table, config);
  out.alpha_tensor = head.forward(out.x_image, out.x_text, out.x_entities, config);
  for (int i = 0; i < kNumComponents; ++i) out.alpha_pred[i] = out.alpha_tensor.values()[i];
  return out;
}

}  // namespace newscap
