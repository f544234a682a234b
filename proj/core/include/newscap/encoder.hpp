#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "newscap/corpus.hpp"
#include "newscap/nee.hpp"
#include "newscap/tensor.hpp"
#include "newscap/taxonomy.hpp"

namespace newscap {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t d_i = 32;   // raw image feature width
  std::size_t d_t = 64;   // text encoder internal width
  std::size_t d_e = 32;   // entity vector width, must match the table's d_wiki
  std::size_t num_heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t shared_blocks = 3;
  std::size_t component_blocks = 5;
  std::size_t ff_width = 256;
  std::size_t vocab_size = 0;
  std::size_t segment_len = 64;      // S
  std::size_t max_article_len = 128;
  std::size_t max_caption_len = 24;
  std::size_t component_head_hidden = 64;
  double dropout = 0.0;
  bool span_plain_average = false;   // 0.5/0.5 merge instead of the linear ramp
  bool detach_component_grads = false;

  void validate() const;

  // Documented full-scale settings (pretrained-encoder regime); the desk
  // defaults above are what tests and the bundled pipeline use.
  static ModelConfig paper_scale();
};

// Dropout/threading context for forward passes. Inference uses the
// default-constructed value.
struct FwdCtx {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

struct EncodedSample {
  Tensor x_image;     // [1 x d_model]
  Tensor x_text;      // [L_T x d_model]
  Tensor x_entities;  // [max(L_E,1) x d_model]
  Tensor alpha_tensor;        // [1 x 5] sigmoid probabilities
  ComponentVector alpha_pred;
};

// ---- two-segment overlap plan for long articles ------------------------------

struct SpanPlan {
  std::size_t total = 0;  // rows produced = min(len, max_article_len)
  bool single = true;
  std::size_t seg_a_end = 0;    // segment A = [0, seg_a_end)
  std::size_t seg_b_begin = 0;  // segment B = [seg_b_begin, total)
  std::size_t overlap_begin = 0, overlap_end = 0;  // [total-S, S) when two segments

  std::size_t overlap_size() const { return overlap_end - overlap_begin; }
};

SpanPlan plan_spans(std::size_t len, std::size_t segment_len, std::size_t max_article_len);

// Interpolation weight for the j-th of k overlap rows: j/(k-1), with 0.5
// for a single-row overlap. plain_average forces 0.5 everywhere.
double overlap_weight(std::size_t j, std::size_t k, bool plain_average);

// ---- sub-encoders -------------------------------------------------------------

struct EncoderLayer {
  AttentionParams attn;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor norm1_g, norm1_b, norm2_g, norm2_b;

  static EncoderLayer init(std::size_t d, std::size_t ff, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, std::size_t num_heads, const FwdCtx& ctx) const;
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    attn.visit(prefix + ".attn", fn);
    fn(prefix + ".ff_w1", ff_w1); fn(prefix + ".ff_b1", ff_b1);
    fn(prefix + ".ff_w2", ff_w2); fn(prefix + ".ff_b2", ff_b2);
    fn(prefix + ".norm1_g", norm1_g); fn(prefix + ".norm1_b", norm1_b);
    fn(prefix + ".norm2_g", norm2_g); fn(prefix + ".norm2_b", norm2_b);
  }
};

struct TextEncoder {
  Tensor token_emb;  // [K x d_t]
  Tensor pos_emb;    // [max_article_len x d_t]
  std::vector<EncoderLayer> layers;
  Tensor out_w, out_b;  // d_t -> d_model

  static TextEncoder init(const ModelConfig& config, std::mt19937_64& rng);

  // One segment with true article offsets; ids.size() <= segment_len.
  Tensor encode_segment(const std::vector<int>& ids, std::size_t pos_offset,
                        const ModelConfig& config, const FwdCtx& ctx) const;

  // Two-segment overlap-merge encoding of a whole article.
  Tensor encode_article(const std::vector<int>& ids, const ModelConfig& config,
                        const FwdCtx& ctx) const;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".token_emb", token_emb);
    fn(prefix + ".pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    fn(prefix + ".out_w", out_w);
    fn(prefix + ".out_b", out_b);
  }
};

struct ImageEncoder {
  Tensor proj_w, proj_b;  // d_i -> d_model
  Tensor norm_g, norm_b;

  static ImageEncoder init(const ModelConfig& config, std::mt19937_64& rng);
  Tensor forward(const std::vector<double>& image_feature, const ModelConfig& config) const;
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".proj_w", proj_w); fn(prefix + ".proj_b", proj_b);
    fn(prefix + ".norm_g", norm_g); fn(prefix + ".norm_b", norm_b);
  }
};

struct EntityEncoder {
  Tensor proj_w, proj_b;  // d_e -> d_model
  Tensor null_row;        // [1 x d_model], used when the article has no entities

  static EntityEncoder init(const ModelConfig& config, std::mt19937_64& rng);
  Tensor forward(const Article& article, const JointEmbeddingTable& table,
                 const ModelConfig& config) const;
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".proj_w", proj_w); fn(prefix + ".proj_b", proj_b);
    fn(prefix + ".null_row", null_row);
  }
};

// Context handed to the missing-entity fallback: the article tokens
// truncated to a 64-token window centered on the mention.
std::vector<std::string> mention_context(const Article& article, const EntityMention& mention,
                                         std::size_t window = 64);

struct ComponentHead {
  Tensor w1, b1, w2, b2;

  static ComponentHead init(const ModelConfig& config, std::mt19937_64& rng);
  // [1 x 5] sigmoid probabilities from pooled streams.
  Tensor forward(const Tensor& x_image, const Tensor& x_text, const Tensor& x_entities,
                 const ModelConfig& config) const;
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w1", w1); fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2); fn(prefix + ".b2", b2);
  }
};

struct Encoder {
  ImageEncoder image;
  TextEncoder text;
  EntityEncoder entity;
  ComponentHead head;

  static Encoder init(const ModelConfig& config, std::mt19937_64& rng);

  EncodedSample encode(const Sample& sample, const Vocabulary& vocab,
                       const JointEmbeddingTable& table, const ModelConfig& config,
                       const FwdCtx& ctx = {}) const;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    image.visit(prefix + ".image", fn);
    text.visit(prefix + ".text", fn);
    entity.visit(prefix + ".entity", fn);
    head.visit(prefix + ".head", fn);
  }
};

}  // namespace newscap
