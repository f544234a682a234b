#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "newscap/encoder.hpp"

namespace newscap {

// One decoder block: causal self-attention, three cross-attentions (one
// per encoded stream), concat + fusion back to d_model, feed-forward,
// residuals and norms throughout.
struct DecoderBlock {
  AttentionParams self_attn, cross_image, cross_text, cross_entity;
  Tensor fuse_w, fuse_b;  // 3*d_model -> d_model
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor norm_self_g, norm_self_b, norm_fuse_g, norm_fuse_b, norm_ff_g, norm_ff_b;

  static DecoderBlock init(const ModelConfig& config, std::mt19937_64& rng);
  Tensor forward(const Tensor& prev, const EncodedSample& encoded, const ModelConfig& config,
                 const FwdCtx& ctx) const;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    self_attn.visit(prefix + ".self", fn);
    cross_image.visit(prefix + ".xi", fn);
    cross_text.visit(prefix + ".xt", fn);
    cross_entity.visit(prefix + ".xe", fn);
    fn(prefix + ".fuse_w", fuse_w); fn(prefix + ".fuse_b", fuse_b);
    fn(prefix + ".ff_w1", ff_w1); fn(prefix + ".ff_b1", ff_b1);
    fn(prefix + ".ff_w2", ff_w2); fn(prefix + ".ff_b2", ff_b2);
    fn(prefix + ".norm_self_g", norm_self_g); fn(prefix + ".norm_self_b", norm_self_b);
    fn(prefix + ".norm_fuse_g", norm_fuse_g); fn(prefix + ".norm_fuse_b", norm_fuse_b);
    fn(prefix + ".norm_ff_g", norm_ff_g); fn(prefix + ".norm_ff_b", norm_ff_b);
  }
};

struct DecodeTrace {
  Tensor u_shared;                            // output of the shared stack
  std::array<Tensor, kNumComponents> u_specific;
  Tensor u_bar;
  Tensor logits;
};

// Shared blocks 1-3 plus one component-specific fourth block per
// component; their outputs are alpha-weighted and averaged into u_bar.
struct HybridDecoder {
  Tensor token_emb;  // [K x d_model]
  Tensor pos_emb;    // [max_caption_len x d_model]
  std::vector<DecoderBlock> shared;
  std::vector<DecoderBlock> specific;
  Tensor out_ff_w, out_ff_b;    // d_model -> d_model
  Tensor vocab_w, vocab_b;      // d_model -> K

  static HybridDecoder init(const ModelConfig& config, std::mt19937_64& rng);

  // Teacher-forced logits for the whole input sequence (which must begin
  // with the begin token).
  Tensor forward_logits(const std::vector<int>& input_ids, const ComponentVector& alpha,
                        const EncodedSample& encoded, const ModelConfig& config,
                        const FwdCtx& ctx = {}, DecodeTrace* trace = nullptr) const;

  // Vocabulary distribution at the last position of the partial sequence.
  Tensor decode_step(const std::vector<int>& partial_ids, const ComponentVector& alpha,
                     const EncodedSample& encoded, const ModelConfig& config,
                     DecodeTrace* trace = nullptr) const;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".token_emb", token_emb);
    fn(prefix + ".pos_emb", pos_emb);
    for (std::size_t i = 0; i < shared.size(); ++i)
      shared[i].visit(prefix + ".block" + std::to_string(i + 1), fn);
    for (std::size_t i = 0; i < specific.size(); ++i)
      specific[i].visit(prefix + ".block4_" + std::to_string(i + 1), fn);
    fn(prefix + ".out_ff_w", out_ff_w); fn(prefix + ".out_ff_b", out_ff_b);
    fn(prefix + ".vocab_w", vocab_w); fn(prefix + ".vocab_b", vocab_b);
  }
};

struct CaptionerModel {
  ModelConfig config;
  Vocabulary vocab;
  JointEmbeddingTable table;  // frozen entity/word embeddings
  Encoder encoder;
  HybridDecoder decoder;

  static CaptionerModel init(const ModelConfig& config, Vocabulary vocab,
                             JointEmbeddingTable table, std::uint64_t seed);

  EncodedSample encode(const Sample& sample, const FwdCtx& ctx = {}) const;

  // Teacher-forced mean NLL over caption positions, end token included.
  Tensor sequence_nll(const Sample& sample, const ComponentVector& alpha,
                      const EncodedSample& encoded, const FwdCtx& ctx = {}) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double lambda_c = 1.0;
  std::uint64_t seed = 7;
  std::size_t val_every = 200;
  std::size_t max_val_samples = 64;
  bool quiet = true;
};

struct TrainResult {
  std::size_t steps_run = 0;
  double best_val_loss = 0.0;
  std::size_t best_step = 0;
  double final_train_loss = 0.0;
  std::vector<std::pair<std::size_t, double>> val_history;
};

// Joint caption-NLL + lambda_c * component-BCE training with Adam
// (beta1 0.9, beta2 0.98, eps 1e-6); the model is left at the
// best-validation-loss parameters.
TrainResult train_captioner(CaptionerModel& model, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& val_set, const TrainConfig& config);

// Teacher-forced argmax accuracy over all caption positions (end token
// included), with gold alpha.
double next_token_accuracy(const CaptionerModel& model, const std::vector<Sample>& samples);

struct GenerationConfig {
  enum class AlphaMode { oracle, automatic, manual };
  enum class ZeroOut { none, text, image };

  AlphaMode alpha_mode = AlphaMode::oracle;
  ComponentVector manual_alpha;
  ZeroOut zero_out = ZeroOut::none;
  std::size_t beam_width = 1;
  std::size_t max_length = 20;
};

struct GenerationResult {
  std::vector<std::string> tokens;
  ComponentVector alpha_used;
  double score = 0.0;  // length-normalized log-probability
};

GenerationResult generate(const CaptionerModel& model, const Sample& sample,
                          const GenerationConfig& config);

}  // namespace newscap
