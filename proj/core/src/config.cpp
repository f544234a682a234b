#include "newscap/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace newscap {

namespace {

// key -> default. Strings parse on demand; booleans are "true"/"false".
const std::map<std::string, std::string>& schema() {
  static const std::map<std::string, std::string> defaults = {
      {"seed", "7"},
      // model
      {"d_model", "64"},
      {"d_i", "32"},
      {"d_t", "64"},
      {"d_e", "32"},
      {"num_heads", "4"},
      {"encoder_layers", "2"},
      {"shared_blocks", "3"},
      {"component_blocks", "5"},
      {"ff_width", "256"},
      {"segment_len", "64"},
      {"max_article_len", "128"},
      {"max_caption_len", "24"},
      {"component_head_hidden", "64"},
      {"dropout", "0"},
      {"span_plain_average", "false"},
      {"detach_component_grads", "false"},
      // synthesis
      {"synth_samples", "1000"},
      {"synth_image_noise", "0.3"},
      {"synth_distractor_mentions", "2"},
      {"synth_unlinked_fraction", "0.3"},
      {"synth_min_sentences", "2"},
      {"synth_max_sentences", "4"},
      {"synth_class_mixture", ""},  // "id:weight,..." or empty for the news mixture
      {"synth_inventory", ""},      // "PERSON:12,ORG:8,..." or empty for defaults
      {"split_train", "0.8"},
      {"split_val", "0.1"},
      {"split_test", "0.1"},
      {"vocab_min_count", "1"},
      // embedding pretraining
      {"nee_n_neg", "50"},
      {"nee_sg_negatives", "5"},
      {"nee_window", "4"},
      {"nee_epochs", "10"},
      {"nee_lr", "0.005"},
      {"nee_unigram_power", "0"},
      {"nee_anchor_window", "16"},
      // captioner training
      {"train_steps", "2000"},
      {"batch_size", "8"},
      {"learning_rate", "0.001"},
      {"lambda_c", "1"},
      {"val_every", "200"},
      {"max_val_samples", "64"},
  };
  return defaults;
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::schema_defaults() { return schema(); }

RunConfig RunConfig::defaults() {
  RunConfig config;
  config.values_ = schema();
  return config;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  RunConfig config = defaults();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string body = line.substr(first, last - first + 1);
    std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: " + path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = body.substr(0, eq);
    std::string value = body.substr(eq + 1);
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    config.set(strip(key), strip(value));
  }
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!schema().count(key)) throw ConfigError("config: unknown key \"" + key + "\"");
  values_[key] = value;
}

void RunConfig::set_pair(const std::string& pair) {
  std::size_t eq = pair.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: expected key=value, got \"" + pair + "\"");
  set(pair.substr(0, eq), pair.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key \"" + key + "\"");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& raw = get(key);
  try {
    std::size_t used = 0;
    long long v = std::stoll(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key \"" + key + "\" has non-integer value \"" + raw + "\"");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  try {
    std::size_t used = 0;
    double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key \"" + key + "\" has non-numeric value \"" + raw + "\"");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& raw = get(key);
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw ConfigError("config: key \"" + key + "\" has non-boolean value \"" + raw + "\"");
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << "=" << value << "\n";
  return out.str();
}

void RunConfig::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("config: cannot open " + path + " for writing");
  out << echo();
}

std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
void RunConfig::set_seed(std::uint64_t seed) { values_["seed"] = std::to_string(seed); }

namespace {

// "a:1,b:2" -> pairs; empty string -> empty list
std::vector<std::pair<std::string, double>> parse_weighted_list(const std::string& raw,
                                                                const std::string& key) {
  std::vector<std::pair<std::string, double>> out;
  if (raw.empty()) return out;
  std::istringstream stream(raw);
  std::string item;
  while (std::getline(stream, item, ',')) {
    std::size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config: key \"" + key + "\" expects name:value pairs");
    try {
      out.emplace_back(item.substr(0, colon), std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\" has a non-numeric weight");
    }
  }
  return out;
}

}  // namespace

GeneratorConfig RunConfig::generator() const {
  GeneratorConfig config = GeneratorConfig::defaults();
  config.num_samples = static_cast<std::size_t>(get_int("synth_samples"));
  config.d_i = static_cast<std::size_t>(get_int("d_i"));
  config.image_noise = get_double("synth_image_noise");
  config.distractor_mentions = static_cast<int>(get_int("synth_distractor_mentions"));
  config.unlinked_fraction = get_double("synth_unlinked_fraction");
  config.min_distractor_sentences = static_cast<int>(get_int("synth_min_sentences"));
  config.max_distractor_sentences = static_cast<int>(get_int("synth_max_sentences"));
  auto mixture = parse_weighted_list(get("synth_class_mixture"), "synth_class_mixture");
  if (!mixture.empty()) {
    config.class_mixture.clear();
    for (const auto& [cls, weight] : mixture) {
      try {
        config.class_mixture[std::stoi(cls)] = weight;
      } catch (const std::exception&) {
        throw ConfigError("config: synth_class_mixture has a non-integer class id");
      }
    }
  }
  auto inventory = parse_weighted_list(get("synth_inventory"), "synth_inventory");
  if (!inventory.empty()) {
    config.inventory_sizes.clear();
    for (const auto& [type, count] : inventory)
      config.inventory_sizes[parse_ne_type(type)] = static_cast<int>(count);
  }
  return config;
}

ModelConfig RunConfig::model() const {
  ModelConfig config;
  config.d_model = static_cast<std::size_t>(get_int("d_model"));
  config.d_i = static_cast<std::size_t>(get_int("d_i"));
  config.d_t = static_cast<std::size_t>(get_int("d_t"));
  config.d_e = static_cast<std::size_t>(get_int("d_e"));
  config.num_heads = static_cast<std::size_t>(get_int("num_heads"));
  config.encoder_layers = static_cast<std::size_t>(get_int("encoder_layers"));
  config.shared_blocks = static_cast<std::size_t>(get_int("shared_blocks"));
  config.component_blocks = static_cast<std::size_t>(get_int("component_blocks"));
  config.ff_width = static_cast<std::size_t>(get_int("ff_width"));
  config.segment_len = static_cast<std::size_t>(get_int("segment_len"));
  config.max_article_len = static_cast<std::size_t>(get_int("max_article_len"));
  config.max_caption_len = static_cast<std::size_t>(get_int("max_caption_len"));
  config.component_head_hidden = static_cast<std::size_t>(get_int("component_head_hidden"));
  config.dropout = get_double("dropout");
  config.span_plain_average = get_bool("span_plain_average");
  config.detach_component_grads = get_bool("detach_component_grads");
  return config;
}

NeeConfig RunConfig::nee() const {
  NeeConfig config;
  config.d_wiki = static_cast<int>(get_int("d_e"));  // table feeds the d_e stream
  config.n_neg = static_cast<int>(get_int("nee_n_neg"));
  config.sg_negatives = static_cast<int>(get_int("nee_sg_negatives"));
  config.window = static_cast<int>(get_int("nee_window"));
  config.epochs = static_cast<int>(get_int("nee_epochs"));
  config.learning_rate = get_double("nee_lr");
  config.unigram_power = get_double("nee_unigram_power");
  return config;
}

TrainConfig RunConfig::trainer() const {
  TrainConfig config;
  config.steps = static_cast<std::size_t>(get_int("train_steps"));
  config.batch_size = static_cast<std::size_t>(get_int("batch_size"));
  config.learning_rate = get_double("learning_rate");
  config.lambda_c = get_double("lambda_c");
  config.seed = seed();
  config.val_every = static_cast<std::size_t>(get_int("val_every"));
  config.max_val_samples = static_cast<std::size_t>(get_int("max_val_samples"));
  return config;
}

SplitRatios RunConfig::splits() const {
  SplitRatios ratios;
  ratios.train = get_double("split_train");
  ratios.validation = get_double("split_val");
  ratios.test = get_double("split_test");
  return ratios;
}

std::size_t RunConfig::vocab_min_count() const {
  return static_cast<std::size_t>(get_int("vocab_min_count"));
}

}  // namespace newscap
