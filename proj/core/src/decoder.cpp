#include "newscap/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "newscap/adam.hpp"

namespace newscap {

// ---- DecoderBlock -----------------------------------------------------------

DecoderBlock DecoderBlock::init(const ModelConfig& config, std::mt19937_64& rng) {
  std::size_t d = config.d_model;
  DecoderBlock block;
  block.self_attn = AttentionParams::init(d, rng);
  block.cross_image = AttentionParams::init(d, rng);
  block.cross_text = AttentionParams::init(d, rng);
  block.cross_entity = AttentionParams::init(d, rng);
  block.fuse_w = glorot(3 * d, d, rng);
  block.fuse_b = Tensor::zeros({d}, true);
  block.ff_w1 = glorot(d, config.ff_width, rng);
  block.ff_b1 = Tensor::zeros({config.ff_width}, true);
  block.ff_w2 = glorot(config.ff_width, d, rng);
  block.ff_b2 = Tensor::zeros({d}, true);
  block.norm_self_g = Tensor::full({d}, 1.0, true);
  block.norm_self_b = Tensor::zeros({d}, true);
  block.norm_fuse_g = Tensor::full({d}, 1.0, true);
  block.norm_fuse_b = Tensor::zeros({d}, true);
  block.norm_ff_g = Tensor::full({d}, 1.0, true);
  block.norm_ff_b = Tensor::zeros({d}, true);
  return block;
}

Tensor DecoderBlock::forward(const Tensor& prev, const EncodedSample& encoded,
                             const ModelConfig& config, const FwdCtx& ctx) const {
  if (prev.cols() != config.d_model)
    throw DimensionError("decoder block: input width " + std::to_string(prev.cols()) +
                         " does not match d_model");
  Tensor self_out = multi_head_attention(prev, prev, self_attn, config.num_heads, true);
  if (ctx.training && ctx.dropout > 0)
    self_out = dropout(self_out, ctx.dropout, *ctx.rng, true);
  Tensor h = layer_norm(add(prev, self_out), norm_self_g, norm_self_b);

  Tensor from_image = multi_head_attention(h, encoded.x_image, cross_image, config.num_heads, false);
  Tensor from_text = multi_head_attention(h, encoded.x_text, cross_text, config.num_heads, false);
  Tensor from_entity =
      multi_head_attention(h, encoded.x_entities, cross_entity, config.num_heads, false);
  Tensor fused = linear(concat_last_axis({from_image, from_text, from_entity}), fuse_w, fuse_b);
  if (ctx.training && ctx.dropout > 0) fused = dropout(fused, ctx.dropout, *ctx.rng, true);
  h = layer_norm(add(h, fused), norm_fuse_g, norm_fuse_b);

  Tensor ff = linear(gelu(linear(h, ff_w1, ff_b1)), ff_w2, ff_b2);
  if (ctx.training && ctx.dropout > 0) ff = dropout(ff, ctx.dropout, *ctx.rng, true);
  return layer_norm(add(h, ff), norm_ff_g, norm_ff_b);
}

// ---- HybridDecoder ------------------------------------------------------------

HybridDecoder HybridDecoder::init(const ModelConfig& config, std::mt19937_64& rng) {
  HybridDecoder dec;
  dec.token_emb = Tensor::randn({config.vocab_size, config.d_model}, rng, 0.02, true);
  dec.pos_emb = Tensor::randn({config.max_caption_len, config.d_model}, rng, 0.02, true);
  for (std::size_t i = 0; i < config.shared_blocks; ++i)
    dec.shared.push_back(DecoderBlock::init(config, rng));
  for (std::size_t i = 0; i < config.component_blocks; ++i)
    dec.specific.push_back(DecoderBlock::init(config, rng));
  dec.out_ff_w = glorot(config.d_model, config.d_model, rng);
  dec.out_ff_b = Tensor::zeros({config.d_model}, true);
  dec.vocab_w = glorot(config.d_model, config.vocab_size, rng);
  dec.vocab_b = Tensor::zeros({config.vocab_size}, true);
  return dec;
}

Tensor HybridDecoder::forward_logits(const std::vector<int>& input_ids,
                                     const ComponentVector& alpha, const EncodedSample& encoded,
                                     const ModelConfig& config, const FwdCtx& ctx,
                                     DecodeTrace* trace) const {
  if (input_ids.empty()) throw InputError("decode: empty input sequence");
  if (input_ids.front() != Vocabulary::kBeginId)
    throw ContractError("decode: partial sequence must begin with the begin token");
  if (!alpha.in_range()) throw ContractError("decode: alpha outside [0,1]");
  if (input_ids.size() > config.max_caption_len)
    throw InputError("decode: sequence length " + std::to_string(input_ids.size()) +
                     " exceeds max_caption_len " + std::to_string(config.max_caption_len));

  std::vector<int> positions(input_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Tensor x = add(embedding_lookup(token_emb, input_ids), embedding_lookup(pos_emb, positions));
  for (const auto& block : shared) x = block.forward(x, encoded, config, ctx);
  if (trace) trace->u_shared = x;

  // u_bar = (1/5) sum_i alpha_i * u4_i
  Tensor u_bar;
  for (std::size_t i = 0; i < specific.size(); ++i) {
    Tensor u4 = specific[i].forward(x, encoded, config, ctx);
    if (trace) trace->u_specific[i] = u4;
    Tensor weighted = scale(u4, alpha[i] / static_cast<double>(kNumComponents));
    u_bar = u_bar.defined() ? add(u_bar, weighted) : weighted;
  }
  if (trace) trace->u_bar = u_bar;

  Tensor ff = gelu(linear(u_bar, out_ff_w, out_ff_b));
  Tensor logits = linear(ff, vocab_w, vocab_b);
  if (trace) trace->logits = logits;
  return logits;
}

Tensor HybridDecoder::decode_step(const std::vector<int>& partial_ids,
                                  const ComponentVector& alpha, const EncodedSample& encoded,
                                  const ModelConfig& config, DecodeTrace* trace) const {
  Tensor logits = forward_logits(partial_ids, alpha, encoded, config, {}, trace);
  return softmax(take_row(logits, logits.rows() - 1), 1);
}

// ---- CaptionerModel --------------------------------------------------------------

CaptionerModel CaptionerModel::init(const ModelConfig& config, Vocabulary vocab,
                                    JointEmbeddingTable table, std::uint64_t seed) {
  ModelConfig resolved = config;
  resolved.vocab_size = vocab.size();
  resolved.validate();
  if (static_cast<std::size_t>(table.d_wiki) != resolved.d_e)
    throw ConfigError("captioner: table d_wiki " + std::to_string(table.d_wiki) +
                      " does not match d_e " + std::to_string(resolved.d_e));
  CaptionerModel model;
  model.config = resolved;
  model.vocab = std::move(vocab);
  model.table = std::move(table);
  std::mt19937_64 rng(seed);
  model.encoder = Encoder::init(resolved, rng);
  model.decoder = HybridDecoder::init(resolved, rng);
  return model;
}

EncodedSample CaptionerModel::encode(const Sample& sample, const FwdCtx& ctx) const {
  return encoder.encode(sample, vocab, table, config, ctx);
}

Tensor CaptionerModel::sequence_nll(const Sample& sample, const ComponentVector& alpha,
                                    const EncodedSample& encoded, const FwdCtx& ctx) const {
  if (sample.caption.tokens.empty()) throw InputError("sequence_nll: empty caption");
  std::vector<int> caption_ids = vocab.encode(sample.caption.tokens);
  std::vector<int> input_ids;
  input_ids.reserve(caption_ids.size() + 1);
  input_ids.push_back(Vocabulary::kBeginId);
  input_ids.insert(input_ids.end(), caption_ids.begin(), caption_ids.end());
  std::vector<int> targets = caption_ids;
  targets.push_back(Vocabulary::kEndId);
  Tensor logits = decoder.forward_logits(input_ids, alpha, encoded, config, ctx);
  return cross_entropy(logits, targets, Vocabulary::kPadId);
}

std::vector<std::pair<std::string, Tensor>> CaptionerModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto collect = [&out](const std::string& name, Tensor& t) { out.emplace_back(name, t); };
  encoder.visit("encoder", collect);
  decoder.visit("decoder", collect);
  return out;
}

std::vector<Tensor> CaptionerModel::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, tensor] : named_parameters()) out.push_back(tensor);
  return out;
}

// ---- training ----------------------------------------------------------------------

namespace {

Tensor gold_alpha_tensor(const Sample& sample) {
  std::vector<double> flags(kNumComponents);
  for (int i = 0; i < kNumComponents; ++i)
    flags[i] = sample.caption.gold_components[i] ? 1.0 : 0.0;
  return Tensor::from({1, kNumComponents}, std::move(flags));
}

ComponentVector gold_alpha(const Sample& sample) {
  ComponentVector v;
  for (int i = 0; i < kNumComponents; ++i)
    v[i] = sample.caption.gold_components[i] ? 1.0 : 0.0;
  return v;
}

double validation_loss(const CaptionerModel& model, const std::vector<Sample>& val_set,
                       double lambda_c, std::size_t max_samples) {
  std::size_t n = std::min(val_set.size(), max_samples);
  if (n == 0) return std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& sample = val_set[i];
    EncodedSample encoded = model.encode(sample);
    double loss = model.sequence_nll(sample, gold_alpha(sample), encoded).item();
    if (lambda_c != 0.0)
      loss += lambda_c *
              binary_cross_entropy(encoded.alpha_tensor, gold_alpha_tensor(sample)).item();
    total += loss;
  }
  return total / static_cast<double>(n);
}

}  // namespace

TrainResult train_captioner(CaptionerModel& model, const std::vector<Sample>& train_set,
                            const std::vector<Sample>& val_set, const TrainConfig& config) {
  if (train_set.empty()) throw InputError("train: empty corpus");
  std::vector<Tensor> params = model.parameters();
  AdamState adam(params, config.learning_rate, 0.9, 0.98, 1e-6);
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x5bf0f1eb0a1c2d3eULL);
  FwdCtx train_ctx{true, model.config.dropout, &dropout_rng};

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // triggers shuffle on first use
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;

  auto snapshot = [&]() {
    best_params.clear();
    for (auto& p : params) best_params.push_back(p.values());
  };
  auto maybe_validate = [&](std::size_t step) {
    const std::vector<Sample>& pool = val_set.empty() ? train_set : val_set;
    double loss = validation_loss(model, pool, config.lambda_c, config.max_val_samples);
    result.val_history.emplace_back(step, loss);
    if (loss < result.best_val_loss) {
      result.best_val_loss = loss;
      result.best_step = step;
      snapshot();
    }
  };

  double running = 0.0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    Tensor total;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Sample& sample = train_set[next_index()];
      EncodedSample encoded = model.encode(sample, train_ctx);
      Tensor loss = model.sequence_nll(sample, gold_alpha(sample), encoded, train_ctx);
      if (config.lambda_c != 0.0) {
        Tensor bce = binary_cross_entropy(encoded.alpha_tensor, gold_alpha_tensor(sample));
        loss = add(loss, scale(bce, config.lambda_c));
      }
      total = total.defined() ? add(total, loss) : loss;
    }
    Tensor batch_loss = scale(total, 1.0 / static_cast<double>(config.batch_size));
    double loss_value = batch_loss.item();
    if (!std::isfinite(loss_value))
      throw TrainingError("train: non-finite loss at step " + std::to_string(step));
    backward(batch_loss);
    adam.step(params);
    running = loss_value;
    result.steps_run = step;
    if (step % config.val_every == 0 || step == config.steps) maybe_validate(step);
  }
  result.final_train_loss = running;

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = best_params[i];
  }
  return result;
}

double next_token_accuracy(const CaptionerModel& model, const std::vector<Sample>& samples) {
  std::size_t correct = 0, total = 0;
  for (const auto& sample : samples) {
    EncodedSample encoded = model.encode(sample);
    std::vector<int> caption_ids = model.vocab.encode(sample.caption.tokens);
    std::vector<int> input_ids;
    input_ids.push_back(Vocabulary::kBeginId);
    input_ids.insert(input_ids.end(), caption_ids.begin(), caption_ids.end());
    std::vector<int> targets = caption_ids;
    targets.push_back(Vocabulary::kEndId);
    Tensor logits =
        model.decoder.forward_logits(input_ids, gold_alpha(sample), encoded, model.config);
    std::size_t k = logits.cols();
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const double* row = &logits.values()[r * k];
      std::size_t argmax = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (row[c] > row[argmax]) argmax = c;
      if (static_cast<int>(argmax) == targets[r]) ++correct;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---- generation ----------------------------------------------------------------------

namespace {

struct BeamEntry {
  std::vector<int> ids;   // includes the begin token
  double sum_logp = 0.0;
  std::size_t steps = 0;  // emitted tokens, end token included
  bool finished = false;

  double normalized() const {
    return steps == 0 ? -std::numeric_limits<double>::infinity()
                      : sum_logp / static_cast<double>(steps);
  }
};

}  // namespace

GenerationResult generate(const CaptionerModel& model, const Sample& sample,
                          const GenerationConfig& config) {
  if (config.beam_width < 1) throw ConfigError("generate: beam width must be >= 1");
  if (config.alpha_mode == GenerationConfig::AlphaMode::manual &&
      !config.manual_alpha.in_range())
    throw ConfigError("generate: manual alpha outside [0,1]");

  // encode, apply stream zero-out, then run the prediction head on what
  // the decoder will actually see
  const ModelConfig& mc = model.config;
  EncodedSample encoded;
  encoded.x_image = model.encoder.image.forward(sample.image_feature, mc);
  encoded.x_text =
      model.encoder.text.encode_article(model.vocab.encode(sample.article.tokens), mc, {});
  encoded.x_entities = model.encoder.entity.forward(sample.article, model.table, mc);
  if (config.zero_out == GenerationConfig::ZeroOut::text) {
    encoded.x_text = Tensor::zeros(encoded.x_text.shape());
    encoded.x_entities = Tensor::zeros(encoded.x_entities.shape());
  } else if (config.zero_out == GenerationConfig::ZeroOut::image) {
    encoded.x_image = Tensor::zeros(encoded.x_image.shape());
  }
  encoded.alpha_tensor =
      model.encoder.head.forward(encoded.x_image, encoded.x_text, encoded.x_entities, mc);
  for (int i = 0; i < kNumComponents; ++i)
    encoded.alpha_pred[i] = encoded.alpha_tensor.values()[i];

  ComponentVector alpha;
  switch (config.alpha_mode) {
    case GenerationConfig::AlphaMode::oracle:
      for (int i = 0; i < kNumComponents; ++i)
        alpha[i] = sample.caption.gold_components[i] ? 1.0 : 0.0;
      break;
    case GenerationConfig::AlphaMode::automatic:
      alpha = encoded.alpha_pred;
      break;
    case GenerationConfig::AlphaMode::manual:
      alpha = config.manual_alpha;
      break;
  }

  std::size_t max_steps = std::min<std::size_t>(config.max_length, mc.max_caption_len - 1);
  std::size_t k = model.vocab.size();

  std::vector<BeamEntry> beams(1);
  beams[0].ids = {Vocabulary::kBeginId};
  for (std::size_t step = 0; step < max_steps; ++step) {
    bool any_active = false;
    std::vector<BeamEntry> candidates;
    for (const auto& beam : beams) {
      if (beam.finished) {
        candidates.push_back(beam);
        continue;
      }
      any_active = true;
      Tensor dist = model.decoder.decode_step(beam.ids, alpha, encoded, mc);
      const auto& probs = dist.values();
      for (std::size_t t = 0; t < k; ++t) {
        if (t == Vocabulary::kPadId || t == Vocabulary::kBeginId) continue;
        BeamEntry next = beam;
        next.ids.push_back(static_cast<int>(t));
        next.sum_logp += std::log(std::max(probs[t], 1e-300));
        next.steps += 1;
        next.finished = t == Vocabulary::kEndId;
        candidates.push_back(std::move(next));
      }
    }
    if (!any_active) break;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const BeamEntry& a, const BeamEntry& b) {
                       return a.normalized() > b.normalized();
                     });
    if (candidates.size() > config.beam_width) candidates.resize(config.beam_width);
    beams = std::move(candidates);
  }

  const BeamEntry* best = &beams[0];
  for (const auto& beam : beams)
    if (beam.normalized() > best->normalized()) best = &beam;

  GenerationResult result;
  result.alpha_used = alpha;
  result.score = best->normalized();
  for (std::size_t i = 1; i < best->ids.size(); ++i) {
    int id = best->ids[i];
    if (id == Vocabulary::kEndId) break;
    result.tokens.push_back(model.vocab.token_of(id));
  }
  return result;
}

}  // namespace newscap
