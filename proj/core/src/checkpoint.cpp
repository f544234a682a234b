#include "newscap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace newscap {

namespace {

using ordered_json = nlohmann::ordered_json;

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, const std::vector<double>& values) {
  for (double d : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64_le(out, bits);
  }
}

void read_f64_le(std::istream& in, std::vector<double>& values) {
  for (double& d : values) {
    std::uint64_t bits = read_u64_le(in);
    std::memcpy(&d, &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const CheckpointData& data, const std::string& path) {
  ordered_json header;
  header["format_version"] = data.format_version;
  header["kind"] = data.kind;
  header["config"] = data.config;
  header["training_step"] = data.training_step;
  header["validation_loss"] = data.validation_loss;
  header["extra"] = data.extra;
  ordered_json tensor_list = ordered_json::array();
  for (const auto& [name, tensor] : data.tensors) {
    ordered_json t;
    t["name"] = name;
    t["shape"] = tensor.shape();
    tensor_list.push_back(std::move(t));
  }
  header["tensors"] = std::move(tensor_list);
  std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, 8);
  write_u64_le(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : data.tensors) write_f64_le(out, tensor.values());
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  std::uint64_t header_len = read_u64_le(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ParseError("checkpoint: truncated header in " + path);
  ordered_json header;
  try {
    header = ordered_json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint: " + path + ": " + e.what());
  }
  CheckpointData data;
  data.format_version = header.at("format_version").get<int>();
  if (data.format_version != kCheckpointVersion)
    throw VersionError("checkpoint: format version " + std::to_string(data.format_version) +
                       " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  data.kind = header.at("kind").get<std::string>();
  data.config = header.at("config");
  data.training_step = header.at("training_step").get<std::uint64_t>();
  data.validation_loss = header.at("validation_loss").get<double>();
  data.extra = header.at("extra");
  for (const auto& t : header.at("tensors")) {
    std::vector<std::size_t> shape = t.at("shape").get<std::vector<std::size_t>>();
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    std::vector<double> values(count);
    read_f64_le(in, values);
    if (!in) throw ParseError("checkpoint: truncated payload in " + path);
    data.tensors.emplace_back(t.at("name").get<std::string>(),
                              Tensor::from(shape, std::move(values)));
  }
  return data;
}

// ---- ModelConfig <-> json -------------------------------------------------------

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["d_model"] = c.d_model;
  j["d_i"] = c.d_i;
  j["d_t"] = c.d_t;
  j["d_e"] = c.d_e;
  j["num_heads"] = c.num_heads;
  j["encoder_layers"] = c.encoder_layers;
  j["shared_blocks"] = c.shared_blocks;
  j["component_blocks"] = c.component_blocks;
  j["ff_width"] = c.ff_width;
  j["vocab_size"] = c.vocab_size;
  j["segment_len"] = c.segment_len;
  j["max_article_len"] = c.max_article_len;
  j["max_caption_len"] = c.max_caption_len;
  j["component_head_hidden"] = c.component_head_hidden;
  j["dropout"] = c.dropout;
  j["span_plain_average"] = c.span_plain_average;
  j["detach_component_grads"] = c.detach_component_grads;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_i = j.at("d_i").get<std::size_t>();
  c.d_t = j.at("d_t").get<std::size_t>();
  c.d_e = j.at("d_e").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.shared_blocks = j.at("shared_blocks").get<std::size_t>();
  c.component_blocks = j.at("component_blocks").get<std::size_t>();
  c.ff_width = j.at("ff_width").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.segment_len = j.at("segment_len").get<std::size_t>();
  c.max_article_len = j.at("max_article_len").get<std::size_t>();
  c.max_caption_len = j.at("max_caption_len").get<std::size_t>();
  c.component_head_hidden = j.at("component_head_hidden").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.span_plain_average = j.at("span_plain_average").get<bool>();
  c.detach_component_grads = j.at("detach_component_grads").get<bool>();
  return c;
}

// ---- captioner --------------------------------------------------------------------

CheckpointData captioner_to_checkpoint(CaptionerModel& model, std::uint64_t training_step,
                                       double validation_loss) {
  CheckpointData data;
  data.kind = "captioner";
  data.config = model_config_to_json(model.config);
  data.training_step = training_step;
  data.validation_loss = validation_loss;
  data.extra["vocab"] = model.vocab.tokens();
  data.extra["table"] = {{"d_wiki", model.table.d_wiki},
                         {"words", model.table.words},
                         {"entities", model.table.entities}};
  data.tensors = model.named_parameters();
  data.tensors.emplace_back("table.word_vectors", model.table.word_vectors);
  data.tensors.emplace_back("table.entity_vectors", model.table.entity_vectors);
  data.tensors.emplace_back("table.nep_weight", model.table.nep_weight);
  data.tensors.emplace_back("table.nep_bias", model.table.nep_bias);
  return data;
}

namespace {

std::map<std::string, const Tensor*> tensor_map(const CheckpointData& data) {
  std::map<std::string, const Tensor*> out;
  for (const auto& [name, tensor] : data.tensors) out[name] = &tensor;
  return out;
}

Tensor take_tensor(std::map<std::string, const Tensor*>& pool, const std::string& name) {
  auto it = pool.find(name);
  if (it == pool.end()) throw ValidationError("checkpoint: missing tensor " + name);
  const Tensor* t = it->second;
  pool.erase(it);
  return *t;
}

}  // namespace

CaptionerModel captioner_from_checkpoint(const CheckpointData& data) {
  if (data.kind != "captioner")
    throw ValidationError("checkpoint: kind \"" + data.kind + "\", expected captioner");
  ModelConfig config = model_config_from_json(data.config);
  Vocabulary vocab =
      Vocabulary::from_ordered_tokens(data.extra.at("vocab").get<std::vector<std::string>>());

  auto pool = tensor_map(data);
  JointEmbeddingTable table;
  table.d_wiki = data.extra.at("table").at("d_wiki").get<int>();
  table.words = data.extra.at("table").at("words").get<std::vector<std::string>>();
  table.entities = data.extra.at("table").at("entities").get<std::vector<std::string>>();
  table.word_vectors = take_tensor(pool, "table.word_vectors");
  table.entity_vectors = take_tensor(pool, "table.entity_vectors");
  table.nep_weight = take_tensor(pool, "table.nep_weight");
  table.nep_bias = take_tensor(pool, "table.nep_bias");
  table.rebuild_indices();

  CaptionerModel model = CaptionerModel::init(config, std::move(vocab), std::move(table), 0);
  for (auto& [name, param] : model.named_parameters()) {
    Tensor stored = take_tensor(pool, name);
    if (stored.shape() != param.shape())
      throw ValidationError("checkpoint: tensor " + name + " has shape " +
                            shape_str(stored.shape()) + ", expected " + shape_str(param.shape()));
    param.mutable_values() = stored.values();
  }
  if (!pool.empty())
    throw ValidationError("checkpoint: unexpected tensor " + pool.begin()->first);
  return model;
}

// ---- embedding table ------------------------------------------------------------------

CheckpointData table_to_checkpoint(JointEmbeddingTable& table) {
  CheckpointData data;
  data.kind = "nee-table";
  data.config = {{"d_wiki", table.d_wiki}};
  data.extra["words"] = table.words;
  data.extra["entities"] = table.entities;
  data.tensors.emplace_back("word_vectors", table.word_vectors);
  data.tensors.emplace_back("entity_vectors", table.entity_vectors);
  data.tensors.emplace_back("nep_weight", table.nep_weight);
  data.tensors.emplace_back("nep_bias", table.nep_bias);
  return data;
}

JointEmbeddingTable table_from_checkpoint(const CheckpointData& data) {
  if (data.kind != "nee-table")
    throw ValidationError("checkpoint: kind \"" + data.kind + "\", expected nee-table");
  auto pool = tensor_map(data);
  JointEmbeddingTable table;
  table.d_wiki = data.config.at("d_wiki").get<int>();
  table.words = data.extra.at("words").get<std::vector<std::string>>();
  table.entities = data.extra.at("entities").get<std::vector<std::string>>();
  table.word_vectors = take_tensor(pool, "word_vectors");
  table.entity_vectors = take_tensor(pool, "entity_vectors");
  table.nep_weight = take_tensor(pool, "nep_weight");
  table.nep_bias = take_tensor(pool, "nep_bias");
  table.rebuild_indices();
  if (!pool.empty())
    throw ValidationError("checkpoint: unexpected tensor " + pool.begin()->first);
  return table;
}

}  // namespace newscap
