#include "newscap/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "newscap/checkpoint.hpp"

namespace newscap {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
}

void echo_config(const RunConfig& config, const std::string& out_dir) {
  config.write((fs::path(out_dir) / "resolved.cfg").string());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
}

void write_distribution_report(const std::vector<Sample>& samples, const std::string& out_dir) {
  auto stats = class_distribution(samples);
  auto marginals = component_frequencies(samples);
  ordered_json j;
  ordered_json classes = ordered_json::array();
  for (const auto& stat : stats) {
    ordered_json c;
    c["class_id"] = stat.cls.class_id;
    c["components"] = class_membership(stat.cls);
    c["count"] = stat.count;
    c["percent"] = stat.percent;
    classes.push_back(std::move(c));
  }
  j["classes"] = std::move(classes);
  ordered_json marg;
  for (int i = 0; i < kNumComponents; ++i)
    marg[to_string(static_cast<Component>(i))] = marginals[i];
  j["component_marginals"] = std::move(marg);
  j["n"] = samples.size();
  write_text((fs::path(out_dir) / "stats.json").string(), j.dump(2) + "\n");

  std::ostringstream text;
  text.setf(std::ios::fixed);
  text.precision(2);
  text << "template classes over " << samples.size() << " captions\n";
  for (const auto& stat : stats) {
    if (stat.count == 0) continue;
    text << "  class " << stat.cls.class_id << " (" << class_membership(stat.cls)
         << "): " << stat.percent << "%  [" << stat.count << "]\n";
  }
  text << "component marginals:\n";
  for (int i = 0; i < kNumComponents; ++i)
    text << "  " << to_string(static_cast<Component>(i)) << ": " << marginals[i] << "%\n";
  write_text((fs::path(out_dir) / "stats.txt").string(), text.str());
}

}  // namespace

void cmd_synth(const RunConfig& config, const std::string& out_dir) {
  ensure_dir(out_dir);
  GeneratorConfig gen = config.generator();
  std::uint64_t seed = config.seed();
  std::vector<Sample> samples = synth_generate(gen, seed);
  CorpusSplit parts = split(samples, config.splits(), seed + 1);
  save_jsonl(parts.train, (fs::path(out_dir) / "train.jsonl").string());
  save_jsonl(parts.validation, (fs::path(out_dir) / "val.jsonl").string());
  save_jsonl(parts.test, (fs::path(out_dir) / "test.jsonl").string());

  EntityInventory inventory = synth_inventory(gen, seed);
  KnowledgeBase kb = kb_from_samples(parts.train, inventory,
                                     static_cast<int>(config.get_int("nee_anchor_window")));
  kb.save_json((fs::path(out_dir) / "kb.json").string());

  write_distribution_report(samples, out_dir);
  echo_config(config, out_dir);
}

void cmd_train_nee(const RunConfig& config, const std::string& kb_path,
                   const std::string& out_dir) {
  ensure_dir(out_dir);
  KnowledgeBase kb = KnowledgeBase::load_json(kb_path);
  NeeConfig nee_config = config.nee();
  TrainJointStats stats;
  JointEmbeddingTable table = train_joint(kb, nee_config, config.seed(), &stats);

  CheckpointData data = table_to_checkpoint(table);
  double final_nep = stats.epoch_losses.empty() ? 0.0 : stats.epoch_losses.back()[3];
  data.training_step = static_cast<std::uint64_t>(nee_config.epochs);
  data.validation_loss = final_nep;
  save_checkpoint(data, (fs::path(out_dir) / "nee_table.ckpt").string());

  ordered_json log;
  ordered_json epochs = ordered_json::array();
  for (const auto& losses : stats.epoch_losses)
    epochs.push_back({{"word", losses[0]},
                      {"graph", losses[1]},
                      {"anchor", losses[2]},
                      {"predictor", losses[3]}});
  log["epoch_losses"] = std::move(epochs);
  write_text((fs::path(out_dir) / "nee_train_log.json").string(), log.dump(2) + "\n");
  echo_config(config, out_dir);
}

void cmd_train(const RunConfig& config, const std::string& corpus_dir,
               const std::string& nee_checkpoint, const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<Sample> train_set = load_jsonl((fs::path(corpus_dir) / "train.jsonl").string());
  std::vector<Sample> val_set;
  std::string val_path = (fs::path(corpus_dir) / "val.jsonl").string();
  if (fs::exists(val_path)) val_set = load_jsonl(val_path);

  JointEmbeddingTable table = table_from_checkpoint(load_checkpoint(nee_checkpoint));
  Vocabulary vocab = Vocabulary::build(train_set, config.vocab_min_count());
  ModelConfig model_config = config.model();
  model_config.vocab_size = vocab.size();
  CaptionerModel model =
      CaptionerModel::init(model_config, std::move(vocab), std::move(table), config.seed());
  TrainResult result = train_captioner(model, train_set, val_set, config.trainer());

  CheckpointData data = captioner_to_checkpoint(model, result.best_step, result.best_val_loss);
  save_checkpoint(data, (fs::path(out_dir) / "model.ckpt").string());

  ordered_json log;
  log["steps_run"] = result.steps_run;
  log["best_step"] = result.best_step;
  log["best_val_loss"] = result.best_val_loss;
  log["final_train_loss"] = result.final_train_loss;
  ordered_json history = ordered_json::array();
  for (const auto& [step, loss] : result.val_history)
    history.push_back({{"step", step}, {"val_loss", loss}});
  log["val_history"] = std::move(history);
  write_text((fs::path(out_dir) / "train_log.json").string(), log.dump(2) + "\n");
  echo_config(config, out_dir);
}

namespace {

GenerationConfig parse_generation_options(const GenerateOptions& options) {
  GenerationConfig gen;
  if (options.alpha_mode == "oracle") {
    gen.alpha_mode = GenerationConfig::AlphaMode::oracle;
  } else if (options.alpha_mode == "auto") {
    gen.alpha_mode = GenerationConfig::AlphaMode::automatic;
  } else if (options.alpha_mode == "manual") {
    gen.alpha_mode = GenerationConfig::AlphaMode::manual;
    std::istringstream stream(options.alpha);
    std::string item;
    int i = 0;
    while (std::getline(stream, item, ',')) {
      if (i >= kNumComponents) throw ConfigError("--alpha: expected 5 comma-separated values");
      try {
        gen.manual_alpha[i++] = std::stod(item);
      } catch (const std::exception&) {
        throw ConfigError("--alpha: non-numeric value \"" + item + "\"");
      }
    }
    if (i != kNumComponents) throw ConfigError("--alpha: expected 5 comma-separated values");
    if (!gen.manual_alpha.in_range()) throw ConfigError("--alpha: values must lie in [0,1]");
  } else {
    throw ConfigError("--alpha-mode: expected oracle|auto|manual, got " + options.alpha_mode);
  }
  if (options.zero_out == "none")
    gen.zero_out = GenerationConfig::ZeroOut::none;
  else if (options.zero_out == "text")
    gen.zero_out = GenerationConfig::ZeroOut::text;
  else if (options.zero_out == "image")
    gen.zero_out = GenerationConfig::ZeroOut::image;
  else
    throw ConfigError("--zero-out: expected none|text|image, got " + options.zero_out);
  if (options.beam < 1) throw ConfigError("--beam: width must be >= 1");
  gen.beam_width = options.beam;
  gen.max_length = options.max_length;
  return gen;
}

}  // namespace

void cmd_generate(const RunConfig& config, const std::string& model_checkpoint,
                  const std::string& corpus_path, const GenerateOptions& options,
                  const std::string& out_dir) {
  ensure_dir(out_dir);
  GenerationConfig gen = parse_generation_options(options);
  CaptionerModel model = captioner_from_checkpoint(load_checkpoint(model_checkpoint));
  std::vector<Sample> samples = load_jsonl(corpus_path);

  std::string path = (fs::path(out_dir) / "generated.jsonl").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  ordered_json header;
  header["kind"] = "generated-captions";
  header["alpha_mode"] = options.alpha_mode;
  header["zero_out"] = options.zero_out;
  header["beam"] = options.beam;
  header["max_length"] = options.max_length;
  header["seed"] = config.seed();
  if (gen.alpha_mode == GenerationConfig::AlphaMode::manual) {
    std::vector<double> alpha(gen.manual_alpha.alpha.begin(), gen.manual_alpha.alpha.end());
    header["alpha"] = alpha;
  } else {
    header["alpha"] = nullptr;
  }
  header["model_checkpoint"] = model_checkpoint;
  out << header.dump() << "\n";

  for (const auto& sample : samples) {
    GenerationResult result = generate(model, sample, gen);
    ordered_json record;
    record["id"] = sample.article.id;
    record["tokens"] = result.tokens;
    std::vector<double> alpha(result.alpha_used.alpha.begin(), result.alpha_used.alpha.end());
    record["alpha_used"] = alpha;
    record["score"] = result.score;
    out << record.dump() << "\n";
  }
  echo_config(config, out_dir);
}

GeneratedFile load_generated(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  GeneratedFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (!j.contains("kind") || j.at("kind") != "generated-captions")
        throw ValidationError(path + ": missing generated-captions header");
      file.alpha_mode = j.at("alpha_mode").get<std::string>();
      file.zero_out = j.at("zero_out").get<std::string>();
      continue;
    }
    file.captions.emplace_back(j.at("id").get<std::string>(),
                               j.at("tokens").get<TokenSeq>());
  }
  return file;
}

void cmd_evaluate(const std::string& generated_path, const std::string& references_path,
                  const std::string& ref_mode, const std::string& out_dir) {
  ensure_dir(out_dir);
  GeneratedFile generated = load_generated(generated_path);
  std::vector<Sample> references = load_jsonl(references_path);
  if (generated.captions.size() != references.size())
    throw InputError("evaluate: " + std::to_string(generated.captions.size()) +
                     " generated captions vs " + std::to_string(references.size()) +
                     " references");
  std::vector<TokenSeq> captions;
  captions.reserve(generated.captions.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (generated.captions[i].first != references[i].article.id)
      throw InputError("evaluate: id mismatch at record " + std::to_string(i) + ": " +
                       generated.captions[i].first + " vs " + references[i].article.id);
    captions.push_back(generated.captions[i].second);
  }
  RefComponentMode mode;
  if (ref_mode == "gold")
    mode = RefComponentMode::gold;
  else if (ref_mode == "detect")
    mode = RefComponentMode::detect;
  else
    throw ConfigError("--ref-components: expected gold|detect, got " + ref_mode);

  EvalReport report = evaluate(captions, references, mode);
  write_text((fs::path(out_dir) / "report.json").string(), report.to_json() + "\n");
  std::cout << report.pretty();
}

void cmd_stats(const std::string& corpus_path, const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<Sample> samples = load_jsonl(corpus_path);
  if (samples.empty()) throw InputError("stats: empty corpus " + corpus_path);
  write_distribution_report(samples, out_dir);
}

}  // namespace newscap
